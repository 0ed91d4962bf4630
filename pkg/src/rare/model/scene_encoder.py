from dataclasses import dataclass
from typing import Optional

import torch
import torch.nn as nn

from rare.detection.types import FeatureMap
from rare.utils.errors import InvalidShapeError


@dataclass(frozen=True)
class SceneState:
    hidden: torch.Tensor
    frame_index: int = 0

    @classmethod
    def initial(cls, hidden_dim: int, dtype: torch.dtype = torch.float32) -> "SceneState":
        return cls(hidden=torch.zeros(hidden_dim, dtype=dtype), frame_index=0)


def pool_backbone(feature_map: FeatureMap) -> torch.Tensor:
    """Global average pool: (C, H, W) -> (C,)."""
    return feature_map.values.mean(dim=(-2, -1))


class SceneGRUCell(nn.Module):
    """
    Single GRU cell with the reset gate applied before the recurrent
    projection of the candidate state:
        z = sigmoid(W_z x + U_z h + b_z)
        r = sigmoid(W_r x + U_r h + b_r)
        n = tanh(W_h x + U_h (r * h) + b_h)
        h' = (1 - z) * h + z * n
    """

    def __init__(self, input_size: int, hidden_size: int):
        super().__init__()
        self.input_size = input_size
        self.hidden_size = hidden_size
        self.x2h = nn.Linear(input_size, 3 * hidden_size)
        self.h2zr = nn.Linear(hidden_size, 2 * hidden_size, bias=False)
        self.h2n = nn.Linear(hidden_size, hidden_size, bias=False)

    def forward(self, x: torch.Tensor, h: torch.Tensor) -> torch.Tensor:
        if x.shape[-1] != self.input_size:
            raise InvalidShapeError(f"GRU input size {x.shape[-1]} != {self.input_size}")
        if h.shape[-1] != self.hidden_size:
            raise InvalidShapeError(f"GRU hidden size {h.shape[-1]} != {self.hidden_size}")
        xz, xr, xn = self.x2h(x).chunk(3, dim=-1)
        hz, hr = self.h2zr(h).chunk(2, dim=-1)
        z = torch.sigmoid(xz + hz)
        r = torch.sigmoid(xr + hr)
        n = torch.tanh(xn + self.h2n(r * h))
        return (1.0 - z) * h + z * n


class SceneEncoder(nn.Module):
    def __init__(self, input_size: int, hidden_size: int = 256):
        super().__init__()
        self.hidden_size = hidden_size
        self.cell = SceneGRUCell(input_size, hidden_size)

    def initial_state(self, dtype: Optional[torch.dtype] = None) -> SceneState:
        dtype = dtype or self.cell.x2h.weight.dtype
        return SceneState.initial(self.hidden_size, dtype=dtype)

    def step(self, state: SceneState, pooled: torch.Tensor) -> SceneState:
        hidden = self.cell(pooled.to(state.hidden.dtype), state.hidden)
        return SceneState(hidden=hidden, frame_index=state.frame_index + 1)

    def forward(self, pooled_sequence: torch.Tensor) -> torch.Tensor:
        """(T, C) pooled backbone vectors -> (T, hidden) states, starting from zeros."""
        h = pooled_sequence.new_zeros(self.hidden_size)
        states = []
        for x in pooled_sequence:
            h = self.cell(x, h)
            states.append(h)
        if not states:
            return pooled_sequence.new_zeros((0, self.hidden_size))
        return torch.stack(states)


def scene_step(state: SceneState, pooled: torch.Tensor, encoder: SceneEncoder) -> SceneState:
    return encoder.step(state, pooled)
