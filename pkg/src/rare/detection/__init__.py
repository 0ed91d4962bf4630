"""Detector contract: detections plus reused backbone and neck feature maps."""
