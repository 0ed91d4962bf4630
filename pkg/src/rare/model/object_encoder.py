from dataclasses import dataclass
from typing import Sequence, Tuple

import torch
import torch.nn as nn

from rare.detection.types import BoundingBox
from rare.model.roi_align import RoIPatch
from rare.utils.errors import InvalidInputError, InvalidShapeError


@dataclass(frozen=True)
class ObjectEmbedding:
    values: torch.Tensor
    box_norm: Tuple[float, float, float, float]


class ChannelAttention(nn.Module):
    def __init__(self, channels: int, reduction: int = 16):
        super().__init__()
        hidden = max(1, channels // reduction)
        self.mlp = nn.Sequential(
            nn.Linear(channels, hidden),
            nn.ReLU(),
            nn.Linear(hidden, channels),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        avg = x.mean(dim=(-2, -1))
        mx = x.amax(dim=(-2, -1))
        gate = torch.sigmoid(self.mlp(avg) + self.mlp(mx))
        return x * gate[..., None, None]


class SpatialAttention(nn.Module):
    def __init__(self, kernel_size: int = 7):
        super().__init__()
        self.mix = nn.Conv2d(2, 1, kernel_size=kernel_size, padding=kernel_size // 2)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        mean_fea = x.mean(dim=1, keepdim=True)
        max_fea = x.amax(dim=1, keepdim=True)
        gate = torch.sigmoid(self.mix(torch.cat([mean_fea, max_fea], dim=1)))
        return x * gate


class CBAM(nn.Module):
    """Channel attention followed by spatial attention, both multiplicative."""

    def __init__(self, channels: int, reduction: int = 16, kernel_size: int = 7):
        super().__init__()
        self.channels = channels
        self.channel = ChannelAttention(channels, reduction)
        self.spatial = SpatialAttention(kernel_size)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() == 3:
            return self.forward(x.unsqueeze(0)).squeeze(0)
        if x.dim() != 4 or x.shape[1] != self.channels:
            raise InvalidShapeError(f"CBAM expects (N, {self.channels}, P, P), got {tuple(x.shape)}")
        return self.spatial(self.channel(x))


def normalize_box(box: BoundingBox, frame_size: Tuple[float, float]) -> Tuple[float, float, float, float]:
    width, height = frame_size
    return (
        min(max(box.x1 / width, 0.0), 1.0),
        min(max(box.y1 / height, 0.0), 1.0),
        min(max(box.x2 / width, 0.0), 1.0),
        min(max(box.y2 / height, 0.0), 1.0),
    )


class ObjectEncoder(nn.Module):
    """
    CBAM-refined RoI patch, average pooled, concatenated with an affine box
    embedding and projected to object_embed_dim by two affine layers.
    """

    def __init__(
        self,
        in_channels: int,
        source_scales: Sequence[int],
        box_embed_dim: int = 32,
        object_embed_dim: int = 256,
        cbam_reduction: int = 16,
    ):
        super().__init__()
        self.in_channels = in_channels
        self.source_scales = tuple(source_scales)
        self.object_embed_dim = object_embed_dim
        self.cbam = CBAM(in_channels, cbam_reduction)
        self.box_embed = nn.Linear(4, box_embed_dim)
        self.head = nn.Sequential(
            nn.Linear(in_channels + box_embed_dim, object_embed_dim),
            nn.ReLU(),
            nn.Linear(object_embed_dim, object_embed_dim),
        )

    def forward(self, patches: torch.Tensor, box_norm: torch.Tensor) -> torch.Tensor:
        """patches (N, C, P, P), box_norm (N, 4) -> (N, object_embed_dim)."""
        if patches.dim() != 4 or patches.shape[1] != self.in_channels:
            raise InvalidShapeError(f"Object encoder expects (N, {self.in_channels}, P, P), got {tuple(patches.shape)}")
        if box_norm.shape != (patches.shape[0], 4):
            raise InvalidShapeError(f"box_norm must be (N, 4), got {tuple(box_norm.shape)}")
        appearance = self.cbam(patches).mean(dim=(-2, -1))
        position = self.box_embed(box_norm)
        return self.head(torch.cat([appearance, position], dim=-1))


def embed_object(
    patches: Sequence[RoIPatch],
    box: BoundingBox,
    frame_size: Tuple[float, float],
    encoder: ObjectEncoder,
) -> ObjectEmbedding:
    """Embed one object from its per-scale patches (backbone first, then neck)."""
    scales = tuple(s for p in patches for s in p.source_scales)
    if scales != encoder.source_scales:
        raise InvalidInputError(f"Patches cover scales {scales}; encoder expects {encoder.source_scales}")
    param = next(encoder.parameters())
    stacked = torch.cat([p.values for p in patches], dim=0).to(param.dtype).unsqueeze(0)
    norm = normalize_box(box, frame_size)
    values = encoder(stacked, torch.tensor([norm], dtype=param.dtype))[0]
    return ObjectEmbedding(values=values, box_norm=norm)
