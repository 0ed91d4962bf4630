import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple, Union

import torch
import torch.nn as nn

from rare.model.object_encoder import ObjectEmbedding
from rare.model.scene_encoder import SceneState
from rare.utils.errors import EmptyObjectSetError, InvalidShapeError


@dataclass(frozen=True)
class FusionOutput:
    fused: torch.Tensor
    scores: torch.Tensor


class SceneObjectAttention(nn.Module):
    """
    Multi-head attention with the scene state as the single query and the
    frame's objects as keys and values. Per-object scores are the head mean
    of the attention weights.
    """

    def __init__(
        self,
        scene_dim: int,
        object_dim: int,
        fused_dim: int = 256,
        num_heads: int = 4,
        residual: bool = True,
    ):
        super().__init__()
        if fused_dim % num_heads:
            raise InvalidShapeError(f"fused_dim {fused_dim} not divisible by num_heads {num_heads}")
        self.scene_dim = scene_dim
        self.object_dim = object_dim
        self.fused_dim = fused_dim
        self.num_heads = num_heads
        self.head_dim = fused_dim // num_heads
        self.residual = residual

        self.query_projection = nn.Linear(scene_dim, fused_dim)
        self.key_projection = nn.Linear(object_dim, fused_dim)
        self.value_projection = nn.Linear(object_dim, fused_dim)
        self.output_projection = nn.Linear(fused_dim, fused_dim)

    def forward(
        self,
        hidden: torch.Tensor,
        objects: torch.Tensor,
        mask: Optional[torch.Tensor] = None,
    ) -> Tuple[torch.Tensor, torch.Tensor]:
        """
        hidden (T, D_s), objects (T, N, D_o), mask (T, N) bool.
        Returns fused (T, D_f) and scores (T, N); masked slots score 0 and
        rows without any object fall back to the projected query.
        """
        if hidden.dim() != 2 or hidden.shape[-1] != self.scene_dim:
            raise InvalidShapeError(f"Scene hidden must be (T, {self.scene_dim}), got {tuple(hidden.shape)}")
        if objects.dim() != 3 or objects.shape[-1] != self.object_dim or objects.shape[0] != hidden.shape[0]:
            raise InvalidShapeError(f"Objects must be (T, N, {self.object_dim}), got {tuple(objects.shape)}")
        steps, count, _ = objects.shape
        if mask is None:
            mask = torch.ones((steps, count), dtype=torch.bool, device=objects.device)

        q = self.query_projection(hidden)
        if count == 0:
            return q, objects.new_zeros((steps, 0))

        qh = q.view(steps, self.num_heads, self.head_dim)
        k = self.key_projection(objects).view(steps, count, self.num_heads, self.head_dim)
        v = self.value_projection(objects).view(steps, count, self.num_heads, self.head_dim)

        logits = torch.einsum("thd,tnhd->thn", qh, k) / math.sqrt(self.head_dim)
        logits = logits.masked_fill(~mask[:, None, :], -1e9)
        weights = torch.softmax(logits, dim=-1) * mask[:, None, :].to(logits.dtype)
        context = torch.einsum("thn,tnhd->thd", weights, v).reshape(steps, self.fused_dim)

        fused = self.output_projection(context)
        if self.residual:
            fused = fused + q
        has_objects = mask.any(dim=-1, keepdim=True)
        fused = torch.where(has_objects, fused, q)
        return fused, weights.mean(dim=1)

    def project_scene(self, hidden: torch.Tensor) -> torch.Tensor:
        return self.query_projection(hidden)


def _stack(objects: Union[torch.Tensor, Sequence[ObjectEmbedding]]) -> torch.Tensor:
    if isinstance(objects, torch.Tensor):
        return objects
    if not objects:
        return torch.zeros((0, 0))
    return torch.stack([o.values for o in objects])


def fuse(scene: SceneState, objects: Union[torch.Tensor, Sequence[ObjectEmbedding]], attention: SceneObjectAttention) -> FusionOutput:
    values = _stack(objects)
    if values.shape[0] == 0:
        raise EmptyObjectSetError("fuse() needs at least one object; use fuse_empty() for empty frames")
    fused, scores = attention(scene.hidden.unsqueeze(0), values.unsqueeze(0))
    return FusionOutput(fused=fused[0], scores=scores[0])


def fuse_empty(scene: SceneState, attention: SceneObjectAttention) -> FusionOutput:
    fused = attention.project_scene(scene.hidden)
    return FusionOutput(fused=fused, scores=fused.new_zeros((0,)))
