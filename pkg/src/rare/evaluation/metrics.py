"""
Video-level anticipation metrics.

Protocol: a positive video is a true positive at threshold q when its first
frame with risk >= q is at or before the accident frame. Negatives that fire
anywhere and positives that first fire after the accident are false
positives. Thresholds sweep every distinct observed score.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from rare.data.schema import VideoAnnotation
from rare.detection.types import BoundingBox
from rare.losses import video_attention_labels
from rare.utils.errors import InvalidInputError, UndefinedRecallError

logger = logging.getLogger("rare.evaluation")

PROTOCOL_VERSION = "video-level-1"


@dataclass
class RiskTimeline:
    video_id: str
    scores: np.ndarray
    attention: Optional[List[np.ndarray]] = None
    boxes: Optional[List[Tuple[BoundingBox, ...]]] = None
    input_size: Optional[int] = None

    def __post_init__(self) -> None:
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if self.scores.ndim != 1:
            raise InvalidInputError(f"[{self.video_id}] risk scores must be 1-D")
        if self.scores.size and (self.scores.min() < 0.0 or self.scores.max() > 1.0):
            raise InvalidInputError(f"[{self.video_id}] risk scores must lie in [0, 1]")

    def __len__(self) -> int:
        return int(self.scores.shape[0])


@dataclass(frozen=True)
class PRPoint:
    threshold: float
    precision: float
    recall: float
    tta: float
    tp: int
    fp: int
    fn: int

    def to_dict(self) -> Dict[str, float]:
        return {"threshold": self.threshold, "precision": self.precision, "recall": self.recall, "tta": self.tta}


Result = Tuple[RiskTimeline, VideoAnnotation]


def fire_time(timeline: RiskTimeline, threshold: float) -> Optional[int]:
    """1-based index of the first frame with score >= threshold."""
    hits = np.flatnonzero(timeline.scores >= threshold)
    return int(hits[0]) + 1 if hits.size else None


def _fire_times(scores: np.ndarray, thresholds: np.ndarray) -> np.ndarray:
    """First-fire frame per threshold (1-based, 0 = never), via the running maximum."""
    if scores.size == 0:
        return np.zeros(thresholds.shape, dtype=np.int64)
    running = np.maximum.accumulate(scores)
    idx = np.searchsorted(running, thresholds, side="left")
    return np.where(idx < scores.size, idx + 1, 0)


def _check(results: Sequence[Result]) -> None:
    for timeline, ann in results:
        if len(timeline) != ann.num_frames:
            raise InvalidInputError(f"[{ann.video_id}] timeline has {len(timeline)} scores for {ann.num_frames} frames")
    if not any(ann.is_positive for _, ann in results):
        raise UndefinedRecallError("Precision/recall need at least one positive video")


def pr_points(results: Sequence[Result]) -> List[PRPoint]:
    """One point per distinct score, ascending thresholds."""
    _check(results)
    thresholds = np.unique(np.concatenate([t.scores for t, _ in results]))
    tp = np.zeros(thresholds.shape, dtype=np.int64)
    fp = np.zeros(thresholds.shape, dtype=np.int64)
    lead_sum = np.zeros(thresholds.shape, dtype=np.float64)
    positives = 0
    for timeline, ann in results:
        fires = _fire_times(timeline.scores, thresholds)
        fired = fires > 0
        if ann.is_positive:
            positives += 1
            early = fired & (fires <= ann.accident_frame)
            tp += early
            fp += fired & ~early
            lead_sum += np.where(early, (ann.accident_frame - fires) / ann.fps, 0.0)
        else:
            fp += fired

    points = []
    for i, q in enumerate(thresholds):
        fired = tp[i] + fp[i]
        points.append(
            PRPoint(
                threshold=float(q),
                precision=float(tp[i] / fired) if fired else 1.0,
                recall=float(tp[i] / positives),
                tta=float(lead_sum[i] / tp[i]) if tp[i] else 0.0,
                tp=int(tp[i]),
                fp=int(fp[i]),
                fn=int(positives - tp[i]),
            )
        )
    return points


def average_precision(points: Sequence[PRPoint]) -> float:
    """Sum of recall steps times the interpolated (right-max) precision."""
    if not points:
        raise InvalidInputError("average_precision needs at least one PR point")
    ordered = sorted(points, key=lambda p: (p.recall, p.precision))
    recall = np.array([p.recall for p in ordered])
    precision = np.array([p.precision for p in ordered])
    interpolated = np.maximum.accumulate(precision[::-1])[::-1]
    steps = np.diff(np.concatenate([[0.0], recall]))
    return float(np.sum(steps * interpolated))


def mtta(points: Sequence[PRPoint]) -> float:
    """Mean TTA over thresholds with at least one true positive; 0 with a warning if none."""
    if not points:
        raise InvalidInputError("mtta needs at least one PR point")
    values = [p.tta for p in points if p.tp > 0]
    if not values:
        logger.warning("No threshold produced a true positive; mTTA reported as 0")
        return 0.0
    return float(np.mean(values))


def tta_at_threshold(results: Sequence[Result], threshold: float = 0.5) -> float:
    """Mean (t_a - fire)/fps over positives firing at or before onset at one threshold; 0 if none."""
    leads = []
    for timeline, ann in results:
        if not ann.is_positive:
            continue
        fire = fire_time(timeline, threshold)
        if fire is not None and fire <= ann.accident_frame:
            leads.append((ann.accident_frame - fire) / ann.fps)
    return float(np.mean(leads)) if leads else 0.0


def attention_top1_rate(results: Sequence[Result], iou_threshold: float = 0.5) -> Tuple[float, int]:
    """
    Share of positive-video frames with both accident and non-accident
    detections whose top attention score is on an accident box.
    Returns (rate, number of eligible frames); rate is 0 when none are eligible.
    """
    hits = eligible = 0
    for timeline, ann in results:
        if not ann.is_positive or timeline.attention is None or timeline.boxes is None:
            continue
        labels = video_attention_labels(timeline.boxes, ann, timeline.input_size, iou_threshold)
        for scores, frame_labels in zip(timeline.attention, labels):
            if frame_labels is None or all(frame_labels) or not any(frame_labels):
                continue
            eligible += 1
            hits += bool(frame_labels[int(np.argmax(scores))])
    return (hits / eligible if eligible else 0.0), eligible


@dataclass
class MetricsReport:
    ap: float
    mtta: float
    num_videos: int
    points: List[PRPoint]
    threshold: float
    tta_at_threshold: float
    attention_top1_rate: float
    attention_frames: int
    mtta_defined: bool = True
    extra: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "ap": self.ap,
            "mtta": self.mtta,
            "mtta_defined": self.mtta_defined,
            "num_videos": self.num_videos,
            "protocol_version": PROTOCOL_VERSION,
            "threshold": self.threshold,
            f"tta_at_{self.threshold:g}": self.tta_at_threshold,
            "attention_top1_rate": self.attention_top1_rate,
            "attention_frames": self.attention_frames,
            "points": [p.to_dict() for p in self.points],
            **self.extra,
        }


def evaluate_results(results: Sequence[Result], threshold: float = 0.5, iou_threshold: float = 0.5) -> MetricsReport:
    points = pr_points(results)
    rate, frames = attention_top1_rate(results, iou_threshold)
    return MetricsReport(
        ap=average_precision(points),
        mtta=mtta(points),
        mtta_defined=any(p.tp > 0 for p in points),
        num_videos=len(results),
        points=points,
        threshold=threshold,
        tta_at_threshold=tta_at_threshold(results, threshold),
        attention_top1_rate=rate,
        attention_frames=frames,
    )
