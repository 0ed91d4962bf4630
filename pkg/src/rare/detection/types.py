from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np
import torch

from rare.utils.errors import ConfigError, InvalidInputError

# Class vocabulary, ids 0-5 in this order.
CLASS_NAMES: Tuple[str, ...] = ("person", "bicycle", "car", "motorcycle", "bus", "truck")


@dataclass(frozen=True)
class BoundingBox:
    """
    Axis-aligned box in pixel coordinates of the frame it belongs to.

    The constructor does not know the frame size, so it only checks ordering.
    Coordinates from detectors, annotations or trajectories go through
    `clamped`; `scaled` preserves containment when sx, sy map one frame onto another.
    """
    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self) -> None:
        coords = (self.x1, self.y1, self.x2, self.y2)
        if not all(math.isfinite(c) for c in coords):
            raise InvalidInputError(f"Box coordinates must be finite: {coords}")
        if not (self.x1 < self.x2 and self.y1 < self.y2):
            raise InvalidInputError(f"Box must satisfy x1 < x2 and y1 < y2: {coords}")

    @classmethod
    def clamped(cls, x1: float, y1: float, x2: float, y2: float, width: float, height: float) -> "BoundingBox":
        """Clamp to [0, width] x [0, height]; raises when nothing of the box is left."""
        return cls(
            min(max(float(x1), 0.0), float(width)),
            min(max(float(y1), 0.0), float(height)),
            min(max(float(x2), 0.0), float(width)),
            min(max(float(y2), 0.0), float(height)),
        )

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return self.width * self.height

    def as_tuple(self) -> Tuple[float, float, float, float]:
        return (self.x1, self.y1, self.x2, self.y2)

    def scaled(self, sx: float, sy: float) -> "BoundingBox":
        return BoundingBox(self.x1 * sx, self.y1 * sy, self.x2 * sx, self.y2 * sy)


@dataclass(frozen=True)
class Detection:
    box: BoundingBox
    confidence: float
    class_id: int

    def __post_init__(self) -> None:
        if not 0.0 <= self.confidence <= 1.0:
            raise InvalidInputError(f"Detection confidence must be in [0, 1], got {self.confidence}")
        if not 0 <= self.class_id < len(CLASS_NAMES):
            raise InvalidInputError(f"Unknown class id {self.class_id}")

    @property
    def class_name(self) -> str:
        return CLASS_NAMES[self.class_id]


@dataclass(frozen=True)
class FeatureMap:
    """One detector feature map; values has shape channels x height x width."""
    values: torch.Tensor
    stride: int

    def __post_init__(self) -> None:
        if self.values.dim() != 3:
            raise InvalidInputError(f"FeatureMap values must be 3-D (C, H, W), got shape {tuple(self.values.shape)}")
        if self.stride <= 0 or min(self.values.shape) <= 0:
            raise InvalidInputError("FeatureMap needs a positive stride and non-empty dimensions")
        if not bool(torch.isfinite(self.values).all()):
            raise InvalidInputError("FeatureMap values must be finite")

    @property
    def channels(self) -> int:
        return int(self.values.shape[0])

    @property
    def height(self) -> int:
        return int(self.values.shape[1])

    @property
    def width(self) -> int:
        return int(self.values.shape[2])


@dataclass(frozen=True)
class FeatureShapeSpec:
    """Channel counts and strides of the maps a detector exposes."""
    backbone_channels: int
    backbone_stride: int
    neck_channels: Tuple[int, ...]
    neck_strides: Tuple[int, ...]
    input_size: int
    blur_px: float = 12.0

    def validate(self) -> None:
        if not self.neck_strides or not self.neck_channels:
            raise ConfigError("Feature shape spec needs at least one neck scale")
        if len(self.neck_strides) != len(self.neck_channels):
            raise ConfigError("Feature shape spec: neck strides and channels differ in length")
        if self.backbone_channels <= 0 or self.backbone_stride <= 0 or self.input_size <= 0:
            raise ConfigError("Feature shape spec: backbone channels, stride and input size must be positive")

    def grid(self, stride: int) -> Tuple[int, int]:
        cells = int(math.ceil(self.input_size / stride))
        return cells, cells


@dataclass(frozen=True)
class DetectionOutput:
    """Detections sorted by descending confidence plus the reused feature maps."""
    detections: Tuple[Detection, ...]
    backbone: FeatureMap
    neck: Tuple[FeatureMap, ...]
    input_size: Tuple[int, int]

    def __post_init__(self) -> None:
        if not self.neck:
            raise InvalidInputError("DetectionOutput needs at least one neck map")
        strides = [m.stride for m in self.neck]
        if any(a >= b for a, b in zip(strides, strides[1:])):
            raise InvalidInputError(f"Neck strides must be strictly increasing, got {strides}")
        confs = [d.confidence for d in self.detections]
        if any(a < b for a, b in zip(confs, confs[1:])):
            raise InvalidInputError("Detections must be sorted by descending confidence")

    @property
    def boxes(self) -> Tuple[BoundingBox, ...]:
        return tuple(d.box for d in self.detections)

    def __len__(self) -> int:
        return len(self.detections)


@dataclass(frozen=True)
class GroundTruthObject:
    box: BoundingBox
    class_id: int = 2
    confidence: float = 1.0


@dataclass(frozen=True)
class Frame:
    """
    One RGB frame. `index` is 1-based. `ground_truth` is only read by the
    synthetic oracle; real backends look at `image`.
    """
    video_id: str
    index: int
    width: int
    height: int
    fps: float
    image: Optional[np.ndarray] = None
    ground_truth: Tuple[GroundTruthObject, ...] = field(default_factory=tuple)

    @property
    def size(self) -> Tuple[int, int]:
        return (self.width, self.height)


def boxes_to_tensor(boxes: Sequence[BoundingBox], dtype: torch.dtype = torch.float32) -> torch.Tensor:
    if not boxes:
        return torch.zeros((0, 4), dtype=dtype)
    return torch.tensor([b.as_tuple() for b in boxes], dtype=dtype)


def box_iou(a: BoundingBox, b: BoundingBox) -> float:
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)
