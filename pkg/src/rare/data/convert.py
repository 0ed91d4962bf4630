"""
Conversion of the DAD and CCD releases into the loader layout.

Both readers expect frames already extracted to images (one directory per
video, files in frame order). Supported source layouts:

DAD

    source/frames/{training,testing}/{positive,negative}/<id>/*.jpg|png
    source/annotation/<id>.txt           # positives only, tab separated:
        frame  object_id  class  x1  y1  x2  y2  accident_flag

CCD

    source/frames/{Crash-1500,Normal}/<id>/*.jpg|png
    source/Crash-1500.txt                # <id>,[0,0,...,1,1],...
    source/{train,test}.txt              # "positive/<id>[.ext] ..." per line
    source/vgg16_features/{train,test}/{positive,negative}/<id>.npz   # optional, key "det"

A positive frame whose accident objects are unknown (no DAD rows for it, or
any CCD frame) gets accident_indices = null. Negative frames always get [].
"""

import logging
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from PIL import Image
from tqdm import tqdm

from rare.data.loader import FRAME_PATTERN, PUBLISHED_SPLITS
from rare.data.schema import NEGATIVE, POSITIVE, FrameAnnotation, VideoAnnotation
from rare.detection.types import CLASS_NAMES, BoundingBox
from rare.utils.errors import InvalidAnnotationError, InvalidInputError, MissingDataError
from rare.utils.io import atomic_write_json

logger = logging.getLogger("rare.data")

FORMATS = ("dad", "ccd")
IMAGE_SUFFIXES = (".jpg", ".jpeg", ".png")

# DAD positives collide at frame 91 of 100 (the last half second).
DAD_ACCIDENT_FRAME = 91
DAD_SPLITS = {"training": "train", "testing": "test"}
CCD_SPLITS = ("train", "test")

_CAR = CLASS_NAMES.index("car")
_CLASS_ALIASES = {"motorbike": "motorcycle", "scooter": "motorcycle", "bike": "bicycle", "pedestrian": "person"}


@dataclass(frozen=True)
class SourceVideo:
    """One video of a release, before conversion."""
    video_id: str
    split: str
    label: str
    frame_dir: Path
    accident_frame: Optional[int] = None


def _frame_files(directory: Path) -> List[Path]:
    return sorted(p for p in directory.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


def _class_id(name: str) -> Optional[int]:
    name = _CLASS_ALIASES.get(name.lower(), name.lower())
    return CLASS_NAMES.index(name) if name in CLASS_NAMES else None


def read_dad_objects(path: Path) -> Dict[int, List[Tuple[Tuple[float, float, float, float], int, bool]]]:
    """Per-frame (box, class id, accident flag) rows of one DAD annotation file; frames are 1-based."""
    rows: Dict[int, List[Tuple[Tuple[float, float, float, float], int, bool]]] = {}
    skipped = 0
    for n, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        fields = line.split()
        if len(fields) < 8:
            raise InvalidAnnotationError(f"{path.name}:{n}: expected 8 columns, got {len(fields)}")
        try:
            frame = int(fields[0])
            box = tuple(float(v) for v in fields[3:7])
            flag = int(fields[7]) != 0
        except ValueError as e:
            raise InvalidAnnotationError(f"{path.name}:{n}: {e}") from e
        class_id = _class_id(fields[2])
        if class_id is None:
            skipped += 1
            continue
        rows.setdefault(frame, []).append((box, class_id, flag))
    if skipped:
        logger.debug(f"{path.name}: skipped {skipped} rows outside the class vocabulary")
    return rows


def read_ccd_labels(path: Path) -> Dict[str, int]:
    """Accident frame (1-based, first frame labelled 1) per CCD positive id."""
    onsets: Dict[str, int] = {}
    for n, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        match = re.match(r"\s*([^,\s]+)\s*,\s*\[([^\]]*)\]", line)
        if match is None:
            raise InvalidAnnotationError(f"{path.name}:{n}: expected '<id>,[labels],...'")
        labels = [int(v) for v in match.group(2).replace(" ", "").split(",") if v]
        if 1 not in labels:
            raise InvalidAnnotationError(f"{path.name}:{n}: positive video {match.group(1)} has no accident frame")
        onsets[match.group(1)] = labels.index(1) + 1
    return onsets


def _read_ccd_split(path: Path) -> List[Tuple[str, str]]:
    entries = []
    for line in path.read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        label, _, name = line.split()[0].partition("/")
        if label not in (POSITIVE, NEGATIVE) or not name:
            raise InvalidAnnotationError(f"{path.name}: cannot parse entry {line!r}")
        entries.append((label, Path(name).stem))
    return entries


def list_dad_videos(source: Path) -> List[SourceVideo]:
    videos = []
    for folder, split in DAD_SPLITS.items():
        for label in (POSITIVE, NEGATIVE):
            base = source / "frames" / folder / label
            if not base.is_dir():
                continue
            for frame_dir in sorted(p for p in base.iterdir() if p.is_dir()):
                videos.append(SourceVideo(
                    video_id=f"{label[:3]}_{frame_dir.name}",
                    split=split,
                    label=label,
                    frame_dir=frame_dir,
                    accident_frame=DAD_ACCIDENT_FRAME if label == POSITIVE else None,
                ))
    return videos


def list_ccd_videos(source: Path) -> List[SourceVideo]:
    labels_file = source / "Crash-1500.txt"
    if not labels_file.is_file():
        raise MissingDataError(f"CCD label file {labels_file} not found")
    onsets = read_ccd_labels(labels_file)
    folders = {POSITIVE: "Crash-1500", NEGATIVE: "Normal"}
    videos = []
    for split in CCD_SPLITS:
        split_file = source / f"{split}.txt"
        if not split_file.is_file():
            continue
        for label, name in _read_ccd_split(split_file):
            if label == POSITIVE and name not in onsets:
                raise InvalidAnnotationError(f"CCD positive {name} is missing from {labels_file.name}")
            videos.append(SourceVideo(
                video_id=f"{label[:3]}_{name}",
                split=split,
                label=label,
                frame_dir=source / "frames" / folders[label] / name,
                accident_frame=onsets.get(name) if label == POSITIVE else None,
            ))
    return videos


def _dad_frames(video: SourceVideo, source: Path, num_frames: int, size: Tuple[int, int]) -> Tuple[FrameAnnotation, ...]:
    ann_path = source / "annotation" / f"{video.frame_dir.name}.txt"
    rows = read_dad_objects(ann_path) if video.label == POSITIVE and ann_path.is_file() else {}
    if video.label == POSITIVE and not rows:
        logger.warning(f"[{video.video_id}] no object annotation; accident objects unknown for every frame")
    frames = []
    for t in range(1, num_frames + 1):
        boxes, classes, accident = [], [], []
        for xyxy, class_id, flag in rows.get(t, ()):
            try:
                box = BoundingBox.clamped(*xyxy, *size)
            except InvalidInputError:
                continue
            if flag:
                accident.append(len(boxes))
            boxes.append(box)
            classes.append(class_id)
        if video.label == NEGATIVE:
            indices: Optional[Tuple[int, ...]] = ()
        else:
            indices = tuple(accident) if t in rows else None
        frames.append(FrameAnnotation(tuple(boxes), tuple(classes), (1.0,) * len(boxes), indices))
    return tuple(frames)


def _ccd_frames(video: SourceVideo, source: Path, num_frames: int, size: Tuple[int, int]) -> Tuple[FrameAnnotation, ...]:
    det_path = source / "vgg16_features" / video.split / video.label / f"{video.frame_dir.name}.npz"
    det = np.load(det_path)["det"] if det_path.is_file() else None
    frames = []
    for t in range(1, num_frames + 1):
        boxes, scores = [], []
        if det is not None and t <= det.shape[0]:
            for x1, y1, x2, y2, score, _ in det[t - 1]:
                try:
                    boxes.append(BoundingBox.clamped(x1, y1, x2, y2, *size))
                except InvalidInputError:
                    continue  # zero padding
                scores.append(float(min(max(score, 0.0), 1.0)))
        indices = () if video.label == NEGATIVE else None
        frames.append(FrameAnnotation(tuple(boxes), (_CAR,) * len(boxes), tuple(scores), indices))
    return tuple(frames)


def _copy_frames(files: Sequence[Path], out_dir: Path) -> Tuple[int, int]:
    out_dir.mkdir(parents=True, exist_ok=True)
    size = (0, 0)
    for t, path in enumerate(files, start=1):
        with Image.open(path) as img:
            size = img.size
            img.convert("RGB").save(out_dir / FRAME_PATTERN.format(t), format="PNG")
    return size


def convert_dataset(fmt: str, source: Path, root: Path, progress: bool = True) -> Dict[str, Dict[str, int]]:
    """
    Convert a DAD or CCD release under source into root/<split>/ in the loader
    layout. Returns per-split counts.
    """
    fmt = fmt.lower()
    if fmt not in FORMATS:
        raise InvalidInputError(f"Unknown dataset format '{fmt}'; expected one of {FORMATS}")
    source, root = Path(source), Path(root)
    if not source.is_dir():
        raise MissingDataError(f"Source directory {source} not found")
    videos = list_dad_videos(source) if fmt == "dad" else list_ccd_videos(source)
    if not videos:
        raise MissingDataError(f"No {fmt.upper()} videos found under {source}")

    published = PUBLISHED_SPLITS[fmt.upper()]
    build_frames = _dad_frames if fmt == "dad" else _ccd_frames
    ids: Dict[str, List[str]] = {}
    counts: Dict[str, Dict[str, int]] = {}
    for video in tqdm(videos, desc=f"Converting {fmt.upper()}", disable=not progress):
        files = _frame_files(video.frame_dir) if video.frame_dir.is_dir() else []
        if not files:
            raise MissingDataError(f"[{video.video_id}] no frame images under {video.frame_dir}")
        if len(files) != published["num_frames"]:
            logger.warning(f"[{video.video_id}] {len(files)} frames, expected {published['num_frames']}")
        accident_frame = video.accident_frame
        if accident_frame is not None and accident_frame > len(files):
            raise InvalidAnnotationError(f"[{video.video_id}] accident frame {accident_frame} beyond {len(files)} frames")

        split_dir = root / video.split
        width, height = _copy_frames(files, split_dir / "videos" / video.video_id)
        ann = VideoAnnotation(
            video_id=video.video_id,
            label=video.label,
            fps=float(published["fps"]),
            num_frames=len(files),
            frame_width=width,
            frame_height=height,
            accident_frame=accident_frame,
            frames=build_frames(video, source, len(files), (width, height)),
        )
        atomic_write_json(split_dir / "annotations" / f"{video.video_id}.json", ann.to_dict())
        ids.setdefault(video.split, []).append(video.video_id)
        split_counts = counts.setdefault(video.split, {"positive": 0, "negative": 0, "videos": 0})
        split_counts[video.label] += 1
        split_counts["videos"] += 1

    for split, video_ids in ids.items():
        atomic_write_json(
            root / split / "manifest.json",
            {
                "dataset": fmt.upper(),
                "split": split,
                "video_ids": video_ids,
                "counts": counts[split],
                "config": {"format": fmt, "source": str(source)},
            },
        )
        logger.info(f"Converted {split}: {counts[split]['positive']} positive, {counts[split]['negative']} negative videos")
    return counts
