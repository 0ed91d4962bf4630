"""
Synthetic oracle detector.

Echoes the ground-truth boxes carried by a Frame and fabricates backbone and
neck feature maps from them, so the downstream model can be trained and
tested without a pretrained detector.
"""

import logging
import math
import zlib
from typing import List, Sequence, Tuple

import torch

from rare.config import DetectorConfig
from rare.detection.backend import DetectorBackend, RawDetection, finalize_detections, validate_frame
from rare.detection.types import BoundingBox, DetectionOutput, FeatureMap, FeatureShapeSpec, Frame
from rare.utils.errors import InvalidInputError

logger = logging.getLogger("rare.detection")

# Seeds the per-channel response curves; acts as the "weights" of the fake detector.
_RESPONSE_SEED = 20240917
_BACKGROUND_AMPLITUDE = 0.05


def _axis_profile(lo: float, hi: float, cells: int, stride: int, sigma: float) -> torch.Tensor:
    """
    Gaussian-blurred indicator of [lo, hi] sampled per cell (closed form via erf).
    Cell i stands for pixel i * stride, the point RoI Align reads it at.
    """
    centers = torch.arange(cells, dtype=torch.float64) * stride
    scale = sigma * math.sqrt(2.0)
    return 0.5 * (torch.erf((hi - centers) / scale) - torch.erf((lo - centers) / scale))


def _box_mask(boxes: Sequence[BoundingBox], cells: Tuple[int, int], stride: int, sigma: float) -> torch.Tensor:
    height, width = cells
    mask = torch.zeros((height, width), dtype=torch.float64)
    for box in boxes:
        fy = _axis_profile(box.y1, box.y2, height, stride, sigma)
        fx = _axis_profile(box.x1, box.x2, width, stride, sigma)
        mask += torch.outer(fy, fx)
    return mask


def _channel_response(channels: int, salt: int) -> Tuple[torch.Tensor, torch.Tensor]:
    g = torch.Generator().manual_seed(_RESPONSE_SEED + 1009 * salt + channels)
    linear = 0.5 + torch.rand(channels, dtype=torch.float64, generator=g)
    quadratic = torch.rand(channels, dtype=torch.float64, generator=g)
    return linear, quadratic


def _render_map(
    boxes: Sequence[BoundingBox],
    channels: int,
    stride: int,
    shapes: FeatureShapeSpec,
    salt: int,
    scene: torch.Generator,
) -> FeatureMap:
    cells = shapes.grid(stride)
    mask = _box_mask(boxes, cells, stride, shapes.blur_px)
    linear, quadratic = _channel_response(channels, salt)
    signal = linear[:, None, None] * mask + quadratic[:, None, None] * mask.pow(2)
    background = _BACKGROUND_AMPLITUDE * torch.rand((channels, *cells), dtype=torch.float64, generator=scene)
    return FeatureMap(values=(signal + background).to(torch.float32), stride=stride)


def synthesize_features(
    boxes: Sequence[BoundingBox],
    scene_seed: int,
    shapes: FeatureShapeSpec,
) -> Tuple[FeatureMap, List[FeatureMap]]:
    """
    Fabricate (backbone, neck) maps for boxes given in input-resolution pixels.

    Each channel is a fixed polynomial of the blurred box mask plus a seeded
    background pattern, so maps are a pure function of (boxes, scene_seed, shapes).
    """
    shapes.validate()
    scene = torch.Generator().manual_seed(int(scene_seed) & 0x7FFFFFFFFFFFFFFF)
    backbone = _render_map(boxes, shapes.backbone_channels, shapes.backbone_stride, shapes, 0, scene)
    neck = [
        _render_map(boxes, channels, stride, shapes, i + 1, scene)
        for i, (channels, stride) in enumerate(zip(shapes.neck_channels, shapes.neck_strides))
    ]
    return backbone, neck


def scene_seed_for(frame: Frame) -> int:
    return zlib.crc32(f"{frame.video_id}:{frame.index}".encode("utf-8"))


class SyntheticDetector(DetectorBackend):
    """Deterministic oracle: detections come from Frame.ground_truth."""

    name = "synthetic"

    def __init__(self, config: DetectorConfig) -> None:
        self.config = config
        self.shapes = config.feature_shapes
        self.shapes.validate()

    def detect(self, frame: Frame) -> DetectionOutput:
        validate_frame(frame)
        size = self.config.input_size
        sx, sy = size / frame.width, size / frame.height

        scene_boxes: List[BoundingBox] = []
        candidates: List[RawDetection] = []
        for obj in frame.ground_truth:
            b = obj.box
            try:
                box = BoundingBox.clamped(b.x1 * sx, b.y1 * sy, b.x2 * sx, b.y2 * sy, size, size)
            except InvalidInputError:
                continue  # entirely outside the frame
            scene_boxes.append(box)
            candidates.append(RawDetection(box.as_tuple(), obj.confidence, obj.class_id))

        backbone, neck = synthesize_features(scene_boxes, scene_seed_for(frame), self.shapes)
        return DetectionOutput(
            detections=finalize_detections(candidates, self.config),
            backbone=backbone,
            neck=tuple(neck),
            input_size=(size, size),
        )
