"""
Dataset loading.

Layout per split:

    root/<split>/manifest.json
    root/<split>/annotations/<video_id>.json
    root/<split>/videos/<video_id>/frame_00001.png ...

DAD/CCD releases are converted into this layout once; the loader only
validates and exposes videos as lazy frame sources.
"""

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Iterator, List, NamedTuple, Optional, Sequence

import numpy as np
from PIL import Image

from rare.data.schema import VideoAnnotation, annotation_from_dict, validate_annotations
from rare.detection.types import Frame
from rare.utils.errors import MissingDataError, SchemaValidationError

logger = logging.getLogger("rare.data")

FRAME_PATTERN = "frame_{:05d}.png"
SPLITS = ("train", "test")

# Published split sizes: (positive, negative) per split, frames per video, fps.
PUBLISHED_SPLITS: Dict[str, Dict[str, Any]] = {
    "DAD": {"train": (455, 829), "test": (165, 301), "num_frames": 100, "fps": 20.0},
    "CCD": {"train": (1200, 2400), "test": (300, 600), "num_frames": 50, "fps": 10.0},
}


@dataclass(frozen=True)
class VideoFrameSource:
    """Lazily reads the numbered frame images of one video."""
    directory: Path
    annotation: VideoAnnotation

    def path(self, index: int) -> Path:
        return self.directory / FRAME_PATTERN.format(index)

    def __len__(self) -> int:
        return self.annotation.num_frames

    def missing(self) -> List[int]:
        if not self.directory.is_dir():
            return list(range(1, len(self) + 1))
        return [i for i in range(1, len(self) + 1) if not self.path(i).is_file()]

    def check(self) -> None:
        missing = self.missing()
        if missing:
            raise MissingDataError(
                f"[{self.annotation.video_id}] {len(missing)} frame file(s) missing under {self.directory}, first: {self.path(missing[0]).name}"
            )

    def load_image(self, index: int) -> np.ndarray:
        path = self.path(index)
        if not path.is_file():
            raise MissingDataError(f"[{self.annotation.video_id}] missing frame {path}")
        with Image.open(path) as img:
            return np.asarray(img.convert("RGB"))

    def frame(self, index: int, with_image: bool = True) -> Frame:
        return self.annotation.as_frame(index, self.load_image(index) if with_image else None)

    def frames(self, with_image: bool = True) -> Iterator[Frame]:
        for index in range(1, len(self) + 1):
            yield self.frame(index, with_image)


class VideoRecord(NamedTuple):
    source: VideoFrameSource
    annotation: VideoAnnotation


def _read_manifest(split_dir: Path) -> Optional[Dict[str, Any]]:
    path = split_dir / "manifest.json"
    if not path.is_file():
        return None
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise SchemaValidationError(f"manifest {path} is not valid JSON: {e}") from e


def _read_annotation(path: Path) -> VideoAnnotation:
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise SchemaValidationError(f"annotation is not valid JSON: {e}", path.stem) from e
    ann = annotation_from_dict(doc)
    if ann.video_id != path.stem:
        raise SchemaValidationError(f"video_id does not match file name {path.name}", ann.video_id)
    return ann


def load_dataset(root: Path, split: str, check_frames: bool = True) -> List[VideoRecord]:
    """
    Validate and expose one split as (frame source, annotation) records in manifest order.
    With check_frames=False missing frame images only produce a warning.
    """
    if split not in SPLITS:
        raise SchemaValidationError(f"unknown split '{split}', expected one of {SPLITS}")
    split_dir = Path(root) / split
    ann_dir = split_dir / "annotations"
    if not ann_dir.is_dir():
        raise MissingDataError(f"No annotations directory at {ann_dir}")

    manifest = _read_manifest(split_dir)
    if manifest is not None:
        ids = list(manifest.get("video_ids", []))
    else:
        ids = sorted(p.stem for p in ann_dir.glob("*.json"))
        logger.warning(f"No manifest.json in {split_dir}; using {len(ids)} annotation files in name order")

    records: List[VideoRecord] = []
    incomplete: List[str] = []
    for video_id in ids:
        ann_path = ann_dir / f"{video_id}.json"
        if not ann_path.is_file():
            raise MissingDataError(f"[{video_id}] annotation file missing: {ann_path}")
        ann = _read_annotation(ann_path)
        source = VideoFrameSource(split_dir / "videos" / video_id, ann)
        if check_frames:
            source.check()
        elif source.missing():
            incomplete.append(video_id)
        records.append(VideoRecord(source, ann))
    validate_annotations([r.annotation for r in records])
    if incomplete:
        logger.warning(
            f"{len(incomplete)} of {len(records)} videos in {split_dir} lack frame images (first: {incomplete[0]}); "
            "only annotation-driven detectors can use them"
        )
    logger.info(f"Loaded {len(records)} videos from {split_dir}")
    return records


def summarize(records: Sequence[VideoRecord], split: str = "", dataset: Optional[str] = None) -> Dict[str, Any]:
    """Counts per label plus frame and fps stats; warns when a known dataset deviates from its published split."""
    anns = [r.annotation for r in records]
    positives = sum(1 for a in anns if a.is_positive)
    summary: Dict[str, Any] = {
        "split": split,
        "videos": len(anns),
        "positive": positives,
        "negative": len(anns) - positives,
        "frames": sum(a.num_frames for a in anns),
        "fps": sorted({a.fps for a in anns}),
        "num_frames": sorted({a.num_frames for a in anns}),
        "frames_with_accident_labels": sum(
            1 for a in anns if a.is_positive for f in a.frames if f.has_accident_labels
        ),
    }
    published = PUBLISHED_SPLITS.get((dataset or "").upper())
    if published and split in published:
        expected = published[split]
        if (positives, len(anns) - positives) != tuple(expected):
            logger.warning(
                f"{dataset} {split}: found {positives} positive / {len(anns) - positives} negative videos, "
                f"published split has {expected[0]} / {expected[1]}"
            )
        if summary["num_frames"] != [published["num_frames"]] or summary["fps"] != [published["fps"]]:
            logger.warning(
                f"{dataset} {split}: expected {published['num_frames']} frames at {published['fps']} fps, "
                f"found num_frames={summary['num_frames']} fps={summary['fps']}"
            )
    return summary


def dataset_name(root: Path, split: str) -> Optional[str]:
    manifest = _read_manifest(Path(root) / split)
    return None if manifest is None else manifest.get("dataset")
