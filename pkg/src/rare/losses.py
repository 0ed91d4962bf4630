"""
Training objective: AdaLEA-weighted BCE on per-frame risks plus the
attention-score ranking loss on per-object attention.
"""

import math
from dataclasses import asdict, dataclass
from typing import Dict, List, Optional, Sequence, Tuple, Union

import torch

from rare.data.schema import VideoAnnotation
from rare.detection.types import BoundingBox, box_iou
from rare.utils.errors import InvalidAnnotationError, InvalidInputError

BCE_EPS = 1e-7

AttentionLabels = Tuple[bool, ...]


@dataclass(frozen=True)
class LossBreakdown:
    total: float
    adalea: float
    ranking: float
    gamma: float
    margin: float

    def to_dict(self) -> Dict[str, float]:
        return asdict(self)


def iou(a: BoundingBox, b: BoundingBox) -> float:
    return box_iou(a, b)


def assign_attention_labels(
    detected: Sequence[BoundingBox],
    gt_accident: Sequence[BoundingBox],
    threshold: float = 0.5,
) -> AttentionLabels:
    """True where the best IoU with an accident box is strictly above threshold."""
    if not gt_accident:
        return tuple(False for _ in detected)
    return tuple(max(iou(d, g) for g in gt_accident) > threshold for d in detected)


def ranking_loss(
    scores: torch.Tensor,
    labels: Sequence[bool],
    margin: float = 0.1,
    literal_eq5: bool = False,
) -> torch.Tensor:
    """
    Hinge max(0, max(S_na) + m - min(S_a)); zero when either set is empty.
    literal_eq5 evaluates the min(0, ...) variant instead.
    """
    if scores.dim() != 1 or scores.shape[0] != len(labels):
        raise InvalidInputError(f"{scores.shape[0] if scores.dim() == 1 else tuple(scores.shape)} scores for {len(labels)} labels")
    mask = torch.as_tensor(list(labels), dtype=torch.bool, device=scores.device)
    if bool(mask.all()) or not bool(mask.any()):
        return scores.new_zeros(())
    gap = scores[~mask].max() + margin - scores[mask].min()
    if literal_eq5:
        return torch.clamp(gap, max=0.0)
    return torch.clamp(gap, min=0.0)


def adalea_weight(t: float, t_a: float, fps: float, attc_prev: float, alpha: float) -> float:
    lead = (t_a - t) / fps
    return math.exp(-max(0.0, lead - (attc_prev + alpha)))


def adalea_weights(num_frames: int, t_a: int, fps: float, attc_prev: float, alpha: float) -> torch.Tensor:
    """Weights for frames 1..num_frames."""
    t = torch.arange(1, num_frames + 1, dtype=torch.float64)
    lead = (t_a - t) / fps
    return torch.exp(-torch.clamp(lead - (attc_prev + alpha), min=0.0))


def _risk_tensor(risks: Union[torch.Tensor, Sequence[float], "object"]) -> torch.Tensor:
    values = getattr(risks, "scores", risks)
    return values if isinstance(values, torch.Tensor) else torch.as_tensor(list(values), dtype=torch.float64)


def video_loss(risks, annotation: VideoAnnotation, attc_prev: float = 0.0, alpha: float = 0.1) -> torch.Tensor:
    """Mean per-frame BCE; positive frames weighted by AdaLEA."""
    probs = _risk_tensor(risks)
    if probs.shape[0] != annotation.num_frames:
        raise InvalidInputError(f"[{annotation.video_id}] {probs.shape[0]} risks for {annotation.num_frames} frames")
    probs = probs.clamp(BCE_EPS, 1.0 - BCE_EPS)
    if not annotation.is_positive:
        return -torch.log1p(-probs).mean()
    if annotation.accident_frame is None:
        raise InvalidAnnotationError(f"[{annotation.video_id}] positive video without accident_frame")
    weights = adalea_weights(annotation.num_frames, annotation.accident_frame, annotation.fps, attc_prev, alpha)
    return (weights.to(probs.dtype) * -torch.log(probs)).mean()


def total_loss(adalea: float, ranking: float, gamma: float = 10.0, margin: float = 0.1, literal_eq5: bool = False) -> LossBreakdown:
    if adalea < 0 or gamma < 0 or (ranking < 0 and not literal_eq5):
        raise InvalidInputError(f"Loss components must be non-negative (adalea={adalea}, ranking={ranking}, gamma={gamma})")
    return LossBreakdown(
        total=adalea + gamma * ranking,
        adalea=adalea,
        ranking=ranking,
        gamma=gamma,
        margin=margin,
    )


def scale_boxes(boxes: Sequence[BoundingBox], frame_size: Tuple[int, int], input_size: int) -> List[BoundingBox]:
    """Map annotation boxes from frame pixels into the detector's square input."""
    sx, sy = input_size / frame_size[0], input_size / frame_size[1]
    return [b.scaled(sx, sy) for b in boxes]


def video_attention_labels(
    detected: Sequence[Sequence[BoundingBox]],
    annotation: VideoAnnotation,
    input_size: int,
    threshold: float = 0.5,
) -> List[Optional[AttentionLabels]]:
    """Per-frame labels; None where the frame has no accident-object annotation."""
    labels: List[Optional[AttentionLabels]] = []
    for t, boxes in enumerate(detected, start=1):
        frame = annotation.frame(t)
        if not annotation.is_positive or not frame.has_accident_labels:
            labels.append(None if annotation.is_positive else tuple(False for _ in boxes))
            continue
        gt = scale_boxes(frame.accident_boxes, annotation.frame_size, input_size)
        labels.append(assign_attention_labels(boxes, gt, threshold))
    return labels


def video_ranking_loss(
    attention: Sequence[torch.Tensor],
    labels: Sequence[Optional[AttentionLabels]],
    margin: float = 0.1,
    literal_eq5: bool = False,
) -> Tuple[torch.Tensor, int]:
    """
    Mean ranking loss over frames holding both accident and non-accident
    boxes. Returns (loss, number of contributing frames).
    """
    terms = []
    for scores, frame_labels in zip(attention, labels):
        if frame_labels is None or all(frame_labels) or not any(frame_labels):
            continue
        terms.append(ranking_loss(scores, frame_labels, margin, literal_eq5))
    if not terms:
        reference = attention[0] if len(attention) else torch.zeros(())
        return reference.new_zeros(()), 0
    return torch.stack(terms).mean(), len(terms)
