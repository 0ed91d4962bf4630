"""
RoI Align over detector feature maps.

Sampling follows the usual Detectron convention: box coordinates are divided
by the map stride without rounding, every output bin averages
sampling_ratio x sampling_ratio regularly spaced bilinear samples, and samples
further than one cell outside the map read as zero.
"""

from dataclasses import dataclass
from typing import List, Sequence, Tuple

import torch
import torch.nn.functional as F

from rare.detection.types import BoundingBox, DetectionOutput, FeatureMap, boxes_to_tensor
from rare.utils.errors import DegenerateBoxError, InvalidInputError


@dataclass(frozen=True)
class RoIPatch:
    """Pooled patch of one object; values is channels x P x P."""
    values: torch.Tensor
    source_scales: Tuple[int, ...]

    @property
    def channels(self) -> int:
        return int(self.values.shape[0])


def _axis_weights(lo: torch.Tensor, hi: torch.Tensor, out_size: int, sampling_ratio: int, cells: int) -> torch.Tensor:
    """
    Per-box matrix (N, out_size, cells): row p holds the bilinear weights of
    bin p averaged over its samples along this axis.
    """
    bin_size = (hi - lo) / out_size
    offsets = torch.arange(out_size, dtype=lo.dtype, device=lo.device)[:, None]
    steps = (torch.arange(sampling_ratio, dtype=lo.dtype, device=lo.device)[None, :] + 0.5) / sampling_ratio
    pos = (offsets + steps).reshape(-1)  # (out_size * sampling_ratio,)
    coords = lo[:, None] + pos[None, :] * bin_size[:, None]

    valid = (coords >= -1.0) & (coords <= cells)
    coords = coords.clamp(min=0.0)
    low = coords.floor().long()
    edge = low >= cells - 1
    low = torch.where(edge, torch.full_like(low, cells - 1), low)
    high = torch.where(edge, low, low + 1)
    coords = torch.where(edge, low.to(coords.dtype), coords)
    frac = coords - low.to(coords.dtype)

    weights = F.one_hot(low, cells).to(lo.dtype) * (1.0 - frac)[..., None]
    weights = weights + F.one_hot(high, cells).to(lo.dtype) * frac[..., None]
    weights = weights * valid[..., None].to(lo.dtype)
    n = lo.shape[0]
    return weights.reshape(n, out_size, sampling_ratio, cells).mean(dim=2)


def roi_align_boxes(
    values: torch.Tensor,
    boxes: torch.Tensor,
    stride: int,
    out_size: int,
    sampling_ratio: int,
) -> torch.Tensor:
    """Batched RoI Align: values (C, H, W), boxes (N, 4) xyxy in pixels -> (N, C, P, P)."""
    if out_size < 1 or sampling_ratio < 1:
        raise InvalidInputError("out_size and sampling_ratio must be >= 1")
    if boxes.numel() == 0:
        return values.new_zeros((0, values.shape[0], out_size, out_size))
    scaled = boxes.to(values.dtype) / float(stride)
    x1, y1, x2, y2 = scaled.unbind(dim=1)
    if bool(((x2 - x1) <= 0).any() or ((y2 - y1) <= 0).any()):
        raise DegenerateBoxError(f"Degenerate box after mapping to stride {stride}: {boxes.tolist()}")
    _, height, width = values.shape
    wy = _axis_weights(y1, y2, out_size, sampling_ratio, height)
    wx = _axis_weights(x1, x2, out_size, sampling_ratio, width)
    # separable weights: mean over sr x sr samples == product of per-axis means
    return torch.einsum("nph,chw,nqw->ncpq", wy, values, wx)


def roi_align(feature_map: FeatureMap, box: BoundingBox, out_size: int = 7, sampling_ratio: int = 2) -> torch.Tensor:
    """Single-box RoI Align returning channels x out_size x out_size."""
    if box.width <= 0 or box.height <= 0:
        raise DegenerateBoxError(f"Degenerate box {box.as_tuple()}")
    boxes = boxes_to_tensor([box], dtype=feature_map.values.dtype)
    return roi_align_boxes(feature_map.values, boxes, feature_map.stride, out_size, sampling_ratio)[0]


def selected_maps(output: DetectionOutput, use_backbone: bool = True, use_neck: bool = True) -> List[FeatureMap]:
    maps: List[FeatureMap] = []
    if use_backbone:
        maps.append(output.backbone)
    if use_neck:
        maps.extend(output.neck)
    if not maps:
        raise InvalidInputError("RoI pooling needs at least one of the backbone or neck maps")
    return maps


def pool_multiscale(
    maps: Sequence[FeatureMap],
    boxes: Sequence[BoundingBox],
    out_size: int = 7,
    sampling_ratio: int = 2,
) -> torch.Tensor:
    """RoI Align at every map, channel-concatenated: (N, sum C, P, P)."""
    if not boxes:
        total = sum(m.channels for m in maps)
        return torch.zeros((0, total, out_size, out_size), dtype=maps[0].values.dtype)
    pooled = []
    for fmap in maps:
        tensor_boxes = boxes_to_tensor(boxes, dtype=fmap.values.dtype)
        pooled.append(roi_align_boxes(fmap.values, tensor_boxes, fmap.stride, out_size, sampling_ratio))
    return torch.cat(pooled, dim=1)


def roi_patches(
    maps: Sequence[FeatureMap],
    boxes: Sequence[BoundingBox],
    out_size: int = 7,
    sampling_ratio: int = 2,
) -> List[List[RoIPatch]]:
    """Per-object patches, one RoIPatch per scale, in map order."""
    per_scale = [
        roi_align_boxes(m.values, boxes_to_tensor(boxes, dtype=m.values.dtype), m.stride, out_size, sampling_ratio)
        for m in maps
    ]
    return [
        [RoIPatch(values=pooled[n], source_scales=(m.stride,)) for pooled, m in zip(per_scale, maps)]
        for n in range(len(boxes))
    ]
