"""
Deterministic synthetic collision dataset.

Rigid colored rectangles move at constant velocity over a textured road.
Positive videos steer two vehicles to a meeting point in the central band;
they stop on impact. Negative videos run two vehicles in separate lanes.
Distractors drive in the top and bottom bands and never touch anything.
"""

import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from PIL import Image, ImageDraw
from tqdm import tqdm

from rare.config import SyntheticConfig
from rare.data.loader import FRAME_PATTERN
from rare.data.schema import NEGATIVE, POSITIVE, FrameAnnotation, VideoAnnotation
from rare.detection.types import CLASS_NAMES, BoundingBox, box_iou
from rare.utils.errors import GenerationError
from rare.utils.io import atomic_write_json

logger = logging.getLogger("rare.data")

MIN_FRAME_WIDTH = 64
MIN_FRAME_HEIGHT = 48
MIN_FRAMES = 4
MAX_ATTEMPTS = 200
ACCIDENT_WINDOW_S = 2.0

_VEHICLE_CLASSES = tuple(CLASS_NAMES.index(c) for c in ("car", "bus", "truck", "motorcycle"))


@dataclass(frozen=True)
class Track:
    """Box center trajectory: center(t) = start + velocity * (min(t, stop_at) - 1)."""
    start: Tuple[float, float]
    velocity: Tuple[float, float]
    size: Tuple[float, float]
    class_id: int
    confidence: float
    color: Tuple[int, int, int]
    stop_at: Optional[int] = None

    def box(self, t: int, width: int, height: int) -> BoundingBox:
        step = (min(t, self.stop_at) if self.stop_at is not None else t) - 1
        cx = self.start[0] + self.velocity[0] * step
        cy = self.start[1] + self.velocity[1] * step
        hw, hh = self.size[0] / 2.0, self.size[1] / 2.0
        cx = min(max(cx, hw), width - hw)
        cy = min(max(cy, hh), height - hh)
        return BoundingBox.clamped(
            round(cx - hw, 2), round(cy - hh, 2), round(cx + hw, 2), round(cy + hh, 2), width, height
        )


class _VideoSampler:
    def __init__(self, cfg: SyntheticConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.rng = rng
        self.width, self.height = cfg.frame_width, cfg.frame_height

    def _size(self) -> Tuple[float, float]:
        return (
            float(self.rng.uniform(0.09, 0.14) * self.width),
            float(self.rng.uniform(0.09, 0.14) * self.height),
        )

    def _vehicle(self, start, velocity, size, stop_at=None) -> Track:
        color = tuple(int(c) for c in self.rng.integers(40, 256, size=3))
        return Track(
            start=(float(start[0]), float(start[1])),
            velocity=(float(velocity[0]), float(velocity[1])),
            size=size,
            class_id=int(self.rng.choice(_VEHICLE_CLASSES)),
            confidence=round(float(self.rng.uniform(0.5, 1.0)), 3),
            color=color,
            stop_at=stop_at,
        )

    def distractors(self) -> List[Track]:
        tracks = []
        for i in range(self.cfg.distractors):
            size = self._size()
            band = (0.08, 0.2) if i % 2 == 0 else (0.8, 0.92)
            cy = self.rng.uniform(*band) * self.height
            cx = self.rng.uniform(0.15, 0.85) * self.width
            vx = self.rng.choice([-1.0, 1.0]) * self.rng.uniform(0.005, 0.02) * self.width
            tracks.append(self._vehicle((cx, cy), (vx, 0.0), size))
        return tracks

    def collision_pair(self) -> Tuple[List[Track], int]:
        frames = self.cfg.frames_per_video
        meet_at = int(self.rng.integers(max(3, int(np.ceil(0.65 * frames))), frames + 1))
        meet = (self.rng.uniform(0.4, 0.6) * self.width, self.rng.uniform(0.42, 0.58) * self.height)
        starts = (
            (self.rng.uniform(0.1, 0.3) * self.width, self.rng.uniform(0.35, 0.65) * self.height),
            (self.rng.uniform(0.7, 0.9) * self.width, self.rng.uniform(0.35, 0.65) * self.height),
        )
        pair = []
        for start in starts:
            velocity = ((meet[0] - start[0]) / (meet_at - 1), (meet[1] - start[1]) / (meet_at - 1))
            pair.append(self._vehicle(start, velocity, self._size(), stop_at=meet_at))
        return pair, meet_at

    def lane_pair(self) -> List[Track]:
        lanes = (0.36 * self.height, 0.64 * self.height)
        pair = []
        for lane, direction in zip(lanes, self.rng.permutation([-1.0, 1.0])):
            cx = self.rng.uniform(0.15, 0.85) * self.width
            vx = direction * self.rng.uniform(0.01, 0.03) * self.width
            pair.append(self._vehicle((cx, lane), (vx, 0.0), self._size()))
        return pair


def _boxes(tracks: Sequence[Track], t: int, width: int, height: int) -> List[BoundingBox]:
    return [tr.box(t, width, height) for tr in tracks]


def _touching(boxes: Sequence[BoundingBox], pairs) -> bool:
    return any(box_iou(boxes[i], boxes[j]) > 0 for i, j in pairs)


def _positive_video(sampler: _VideoSampler, video_id: str) -> Tuple[VideoAnnotation, List[Track]]:
    cfg = sampler.cfg
    w, h, frames = sampler.width, sampler.height, cfg.frames_per_video
    for _ in range(MAX_ATTEMPTS):
        pair, _meet_at = sampler.collision_pair()
        tracks = pair + sampler.distractors()
        per_frame = [_boxes(tracks, t, w, h) for t in range(1, frames + 1)]
        onset = next((t for t in range(1, frames + 1) if box_iou(per_frame[t - 1][0], per_frame[t - 1][1]) > 0), None)
        if onset is None or onset < 2:
            continue
        others = [(i, j) for i in range(len(tracks)) for j in range(i + 1, len(tracks)) if (i, j) != (0, 1)]
        if any(_touching(boxes, others) for boxes in per_frame):
            continue
        label_from = max(1, onset - int(round(ACCIDENT_WINDOW_S * cfg.fps)))
        frame_anns = tuple(
            FrameAnnotation(
                boxes=tuple(boxes),
                classes=tuple(tr.class_id for tr in tracks),
                scores=tuple(tr.confidence for tr in tracks),
                accident_indices=(0, 1) if t >= label_from else (),
            )
            for t, boxes in enumerate(per_frame, start=1)
        )
        ann = VideoAnnotation(video_id, POSITIVE, float(cfg.fps), frames, w, h, onset, frame_anns)
        return ann, tracks
    raise GenerationError(f"[{video_id}] could not place a collision course in a {w}x{h} frame over {frames} frames")


def _negative_video(sampler: _VideoSampler, video_id: str) -> Tuple[VideoAnnotation, List[Track]]:
    cfg = sampler.cfg
    w, h, frames = sampler.width, sampler.height, cfg.frames_per_video
    for _ in range(MAX_ATTEMPTS):
        tracks = sampler.lane_pair() + sampler.distractors()
        per_frame = [_boxes(tracks, t, w, h) for t in range(1, frames + 1)]
        pairs = [(i, j) for i in range(len(tracks)) for j in range(i + 1, len(tracks))]
        if any(_touching(boxes, pairs) for boxes in per_frame):
            continue
        frame_anns = tuple(
            FrameAnnotation(
                boxes=tuple(boxes),
                classes=tuple(tr.class_id for tr in tracks),
                scores=tuple(tr.confidence for tr in tracks),
                accident_indices=(),
            )
            for boxes in per_frame
        )
        return VideoAnnotation(video_id, NEGATIVE, float(cfg.fps), frames, w, h, None, frame_anns), tracks
    raise GenerationError(f"[{video_id}] could not place non-intersecting trajectories in a {w}x{h} frame")


def _background(rng: np.random.Generator, width: int, height: int) -> np.ndarray:
    base = rng.normal(90.0, 12.0, size=(height, width, 1))
    texture = np.clip(base + rng.normal(0.0, 6.0, size=(height, width, 3)), 0, 255)
    img = texture.astype(np.uint8)
    for frac in (0.28, 0.72):  # lane markings
        y = int(frac * height)
        img[y : y + 2, ::12] = 220
    return img


def render_video(tracks: Sequence[Track], ann: VideoAnnotation, rng: np.random.Generator, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    background = _background(rng, ann.frame_width, ann.frame_height)
    for t in range(1, ann.num_frames + 1):
        img = Image.fromarray(background.copy())
        draw = ImageDraw.Draw(img)
        for track, box in zip(tracks, ann.frame(t).boxes):
            draw.rectangle(box.as_tuple(), fill=track.color, outline=(0, 0, 0))
        img.save(out_dir / FRAME_PATTERN.format(t), format="PNG")


def _split_plan(cfg: SyntheticConfig) -> Dict[str, Tuple[int, int]]:
    plan = {"train": (cfg.num_positive, cfg.num_negative)}
    if cfg.test_positive or cfg.test_negative:
        plan["test"] = (cfg.test_positive, cfg.test_negative)
    return plan


def generate_synthetic(cfg: SyntheticConfig, root: Path, progress: bool = True) -> Dict[str, Dict[str, int]]:
    """
    Write the synthetic dataset under root in the loader layout. Output is a
    pure function of cfg. Returns per-split counts.
    """
    if cfg.frame_width < MIN_FRAME_WIDTH or cfg.frame_height < MIN_FRAME_HEIGHT:
        raise GenerationError(
            f"Frame size {cfg.frame_width}x{cfg.frame_height} too small; need at least {MIN_FRAME_WIDTH}x{MIN_FRAME_HEIGHT}"
        )
    if cfg.frames_per_video < MIN_FRAMES:
        raise GenerationError(f"frames_per_video must be >= {MIN_FRAMES} to place an onset after frame 1")
    if cfg.distractors > 2:
        # the top and bottom bands hold one distractor each
        raise GenerationError("At most 2 distractors fit without overlapping")

    root = Path(root)
    counts: Dict[str, Dict[str, int]] = {}
    for split_index, (split, (n_pos, n_neg)) in enumerate(_split_plan(cfg).items()):
        rng = np.random.default_rng([cfg.seed, split_index])
        sampler = _VideoSampler(cfg, rng)
        split_dir = root / split
        jobs = [(f"{split}_pos_{i:04d}", True) for i in range(n_pos)] + [(f"{split}_neg_{i:04d}", False) for i in range(n_neg)]
        ids = []
        for video_id, positive in tqdm(jobs, desc=f"Generating {split}", disable=not progress):
            ann, tracks = (_positive_video if positive else _negative_video)(sampler, video_id)
            render_video(tracks, ann, rng, split_dir / "videos" / video_id)
            atomic_write_json(split_dir / "annotations" / f"{video_id}.json", ann.to_dict())
            ids.append(video_id)
        counts[split] = {"positive": n_pos, "negative": n_neg, "videos": len(ids)}
        atomic_write_json(
            split_dir / "manifest.json",
            {
                "dataset": "synthetic",
                "split": split,
                "video_ids": ids,
                "counts": counts[split],
                "config": asdict(cfg),
            },
        )
        logger.info(f"Generated {split}: {n_pos} positive, {n_neg} negative videos in {split_dir}")
    return counts
