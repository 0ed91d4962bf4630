from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import torch
import torch.nn as nn

from rare.utils.errors import InvalidInputError, InvalidShapeError


@dataclass(frozen=True)
class RiskScore:
    value: float
    frame_index: int

    def __post_init__(self) -> None:
        if not 0.0 <= self.value <= 1.0:
            raise InvalidInputError(f"Risk score must be in [0, 1], got {self.value}")


@dataclass
class FeatureQueue:
    """Fixed-capacity queue of fused features, newest first; empty slots are zeros."""
    capacity: int
    dim: int
    entries: List[torch.Tensor] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.capacity < 1:
            raise InvalidInputError("Queue capacity must be >= 1")

    @property
    def fill_count(self) -> int:
        return len(self.entries)

    def push(self, fused: torch.Tensor) -> "FeatureQueue":
        if fused.shape != (self.dim,):
            raise InvalidShapeError(f"Fused feature must have shape ({self.dim},), got {tuple(fused.shape)}")
        return FeatureQueue(self.capacity, self.dim, [fused, *self.entries][: self.capacity])

    def slots(self) -> List[torch.Tensor]:
        if not self.entries:
            return [torch.zeros(self.dim) for _ in range(self.capacity)]
        pad = [self.entries[0].new_zeros(self.dim) for _ in range(self.capacity - self.fill_count)]
        return [*self.entries, *pad]

    def stacked(self) -> torch.Tensor:
        return torch.cat(self.slots())


def queue_windows(fused: torch.Tensor, capacity: int) -> torch.Tensor:
    """
    Sliding queue over a whole video: fused (T, D) -> (T, capacity * D),
    row t holding frames t, t-1, ..., zero padded before frame 1.
    """
    steps, dim = fused.shape
    padded = torch.cat([fused.new_zeros((capacity - 1, dim)), fused], dim=0)
    # newest first: reverse the window order
    windows = padded.unfold(0, capacity, 1)  # (T, D, capacity)
    return windows.flip(-1).transpose(1, 2).reshape(steps, capacity * dim)


class AnticipationHead(nn.Module):
    def __init__(self, fused_dim: int = 256, queue_size: int = 10, hidden_dim: int = 128):
        super().__init__()
        self.fused_dim = fused_dim
        self.queue_size = queue_size
        self.classifier = nn.Sequential(
            nn.Linear(queue_size * fused_dim, hidden_dim),
            nn.ReLU(),
            nn.Linear(hidden_dim, 1),
        )

    def new_queue(self) -> FeatureQueue:
        return FeatureQueue(self.queue_size, self.fused_dim)

    def forward(self, queue_vectors: torch.Tensor) -> torch.Tensor:
        """(..., k * D_f) -> risk probabilities (...)."""
        if queue_vectors.shape[-1] != self.queue_size * self.fused_dim:
            raise InvalidShapeError(
                f"Classifier expects {self.queue_size * self.fused_dim} inputs, got {queue_vectors.shape[-1]}"
            )
        return torch.sigmoid(self.classifier(queue_vectors)).squeeze(-1)

    def classify_video(self, fused: torch.Tensor) -> torch.Tensor:
        return self(queue_windows(fused, self.queue_size))


def push_and_classify(
    queue: FeatureQueue,
    fused: torch.Tensor,
    head: AnticipationHead,
    frame_index: Optional[int] = None,
) -> Tuple[FeatureQueue, torch.Tensor, RiskScore]:
    """
    Returns the updated queue, the differentiable probability and its
    RiskScore record.
    """
    updated = queue.push(fused)
    prob = head(updated.stacked().to(fused.dtype))
    index = frame_index if frame_index is not None else updated.fill_count
    return updated, prob, RiskScore(value=float(prob.detach()), frame_index=index)
