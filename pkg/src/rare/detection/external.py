"""
Adapter for a pretrained ultralytics YOLO detector.

The detector is frozen: forward hooks capture the configured backbone and
neck layer outputs during a normal predict() call, so detections and the
intermediate maps come from one forward pass.
"""

import logging
from typing import Dict, List

import numpy as np
import torch
from PIL import Image

from rare.config import DetectorConfig
from rare.detection.backend import DetectorBackend, RawDetection, finalize_detections, validate_frame
from rare.detection.types import CLASS_NAMES, DetectionOutput, FeatureMap, Frame
from rare.utils.errors import BackendUnavailableError, InvalidInputError

logger = logging.getLogger("rare.detection")

# COCO ids of the class vocabulary, same order as CLASS_NAMES.
COCO_IDS = (0, 1, 2, 3, 5, 7)
_COCO_TO_LOCAL = {coco: local for local, coco in enumerate(COCO_IDS)}


class ExternalDetector(DetectorBackend):
    name = "external"

    def __init__(self, config: DetectorConfig) -> None:
        try:
            from ultralytics import YOLO
        except ImportError as e:
            raise BackendUnavailableError(
                "ultralytics package required for the external detector. Install with: pip install 'rare-anticipation[detector]'"
            ) from e

        self.config = config
        try:
            self.model = YOLO(config.external_weights)
            self.model.to(config.external_device)
        except Exception as e:
            raise BackendUnavailableError(f"Failed to load YOLO weights '{config.external_weights}': {e}") from e

        layers = self.model.model.model
        wanted = [config.external_backbone_layer, *config.external_neck_layers]
        if max(wanted) >= len(layers):
            raise BackendUnavailableError(
                f"Layer index {max(wanted)} out of range; '{config.external_weights}' has {len(layers)} layers"
            )
        self._captured: Dict[int, torch.Tensor] = {}
        for idx in wanted:
            layers[idx].register_forward_hook(self._hook(idx))
        logger.info(f"External detector loaded: {config.external_weights} on {config.external_device}")

    def _hook(self, idx: int):
        def capture(_module, _inputs, output):
            self._captured[idx] = output.detach()
        return capture

    def _feature_map(self, idx: int) -> FeatureMap:
        out = self._captured.get(idx)
        if out is None:
            raise BackendUnavailableError(f"Layer {idx} produced no output during predict()")
        values = out[0].float().cpu()
        stride = max(1, round(self.config.input_size / values.shape[-1]))
        return FeatureMap(values=values, stride=stride)

    def detect(self, frame: Frame) -> DetectionOutput:
        validate_frame(frame)
        if frame.image is None:
            raise InvalidInputError(f"Frame {frame.video_id}:{frame.index} carries no image for the external detector")

        size = self.config.input_size
        resized = np.asarray(Image.fromarray(frame.image).resize((size, size), Image.BILINEAR))
        self._captured.clear()
        result = self.model.predict(
            source=np.ascontiguousarray(resized[..., ::-1]),  # ultralytics expects BGR
            imgsz=size,
            conf=float(self.config.confidence_threshold),
            classes=[COCO_IDS[CLASS_NAMES.index(c)] for c in self.config.allowed_classes],
            device=self.config.external_device,
            verbose=False,
        )[0]

        candidates: List[RawDetection] = []
        boxes = getattr(result, "boxes", None)
        if boxes is not None and len(boxes) > 0:
            xyxy = boxes.xyxy.detach().cpu().numpy()
            conf = boxes.conf.detach().cpu().numpy()
            cls = boxes.cls.detach().cpu().numpy().astype(int)
            for b, c, k in zip(xyxy, conf, cls):
                if int(k) in _COCO_TO_LOCAL:
                    candidates.append(RawDetection(tuple(float(v) for v in b), float(c), _COCO_TO_LOCAL[int(k)]))

        backbone = self._feature_map(self.config.external_backbone_layer)
        neck = sorted((self._feature_map(i) for i in self.config.external_neck_layers), key=lambda m: m.stride)
        return DetectionOutput(
            detections=finalize_detections(candidates, self.config),
            backbone=backbone,
            neck=tuple(neck),
            input_size=(size, size),
        )
