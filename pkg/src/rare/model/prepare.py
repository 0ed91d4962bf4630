"""
Parameter-free per-frame preparation: RoI pooling and backbone pooling.

The detector is frozen, so everything here can be computed once per video
and cached across training epochs.
"""

from dataclasses import dataclass
from typing import Sequence, Tuple

import torch

from rare.config import DetectorConfig, ModelConfig
from rare.detection.types import BoundingBox, Detection, DetectionOutput
from rare.model.roi_align import pool_multiscale, selected_maps
from rare.model.scene_encoder import pool_backbone
from rare.utils.errors import InvalidInputError


def roi_channels(detector: DetectorConfig, model: ModelConfig) -> int:
    total = detector.backbone_channels if model.use_backbone_roi else 0
    if model.use_neck_roi:
        total += sum(detector.neck_channels)
    return total


def roi_scales(detector: DetectorConfig, model: ModelConfig) -> Tuple[int, ...]:
    scales: Tuple[int, ...] = (detector.backbone_stride,) if model.use_backbone_roi else ()
    if model.use_neck_roi:
        scales += tuple(detector.neck_strides)
    return scales


@dataclass(frozen=True)
class PreparedFrame:
    detections: Tuple[Detection, ...]
    patches: torch.Tensor  # (N, C, P, P)
    box_norm: torch.Tensor  # (N, 4)
    pooled: torch.Tensor  # (C_backbone,)

    @property
    def boxes(self) -> Tuple[BoundingBox, ...]:
        return tuple(d.box for d in self.detections)

    def __len__(self) -> int:
        return len(self.detections)


@dataclass(frozen=True)
class PreparedVideo:
    frames: Tuple[PreparedFrame, ...]
    patches: torch.Tensor  # (T, N_max, C, P, P), zero padded
    box_norm: torch.Tensor  # (T, N_max, 4)
    mask: torch.Tensor  # (T, N_max) bool
    pooled: torch.Tensor  # (T, C_backbone)

    def __len__(self) -> int:
        return len(self.frames)


def prepare_frame(output: DetectionOutput, model: ModelConfig) -> PreparedFrame:
    maps = selected_maps(output, model.use_backbone_roi, model.use_neck_roi)
    boxes = output.boxes
    patches = pool_multiscale(maps, boxes, model.roi_size, model.sampling_ratio)
    width, height = output.input_size
    if boxes:
        norm = torch.tensor([b.as_tuple() for b in boxes], dtype=patches.dtype)
        norm = (norm / torch.tensor([width, height, width, height], dtype=patches.dtype)).clamp(0.0, 1.0)
    else:
        norm = torch.zeros((0, 4), dtype=patches.dtype)
    return PreparedFrame(
        detections=output.detections,
        patches=patches,
        box_norm=norm,
        pooled=pool_backbone(output.backbone),
    )


def stack_video(frames: Sequence[PreparedFrame]) -> PreparedVideo:
    if not frames:
        raise InvalidInputError("stack_video needs at least one frame")
    steps = len(frames)
    width = max(1, max(len(f) for f in frames))
    channels, size = frames[0].patches.shape[1], frames[0].patches.shape[-1]
    dtype = frames[0].patches.dtype
    patches = torch.zeros((steps, width, channels, size, size), dtype=dtype)
    box_norm = torch.zeros((steps, width, 4), dtype=dtype)
    mask = torch.zeros((steps, width), dtype=torch.bool)
    for t, frame in enumerate(frames):
        n = len(frame)
        if n:
            patches[t, :n] = frame.patches
            box_norm[t, :n] = frame.box_norm
            mask[t, :n] = True
    pooled = torch.stack([f.pooled for f in frames])
    return PreparedVideo(tuple(frames), patches, box_norm, mask, pooled)
