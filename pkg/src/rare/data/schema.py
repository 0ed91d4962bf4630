"""
On-disk annotation schema.

One JSON document per video:

    {
      "schema_version": "1",          # optional on read
      "video_id": "train_pos_0000",
      "label": "positive" | "negative",
      "fps": 10.0,
      "num_frames": 32,
      "frame_width": 320, "frame_height": 192,
      "accident_frame": 27 | null,
      "frames": [
        {"boxes": [[x1, y1, x2, y2], ...],
         "classes": [2, ...],          # optional, defaults to car
         "scores": [0.9, ...],         # optional, defaults to 1.0
         "accident_indices": [0, 1] | null},
        ...
      ]
    }

accident_indices = null marks a frame whose accident-object boxes are not
available upstream; the ranking loss skips it. Frame indices are 1-based
everywhere outside this list.
"""

from dataclasses import dataclass
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

from rare import SCHEMA_VERSION
from rare.detection.types import CLASS_NAMES, BoundingBox, Frame, GroundTruthObject
from rare.utils.errors import InvalidInputError, SchemaValidationError

POSITIVE = "positive"
NEGATIVE = "negative"


@dataclass(frozen=True)
class FrameAnnotation:
    boxes: Tuple[BoundingBox, ...]
    classes: Tuple[int, ...]
    scores: Tuple[float, ...]
    accident_indices: Optional[Tuple[int, ...]]

    @property
    def accident_boxes(self) -> Tuple[BoundingBox, ...]:
        return tuple(self.boxes[i] for i in (self.accident_indices or ()))

    @property
    def has_accident_labels(self) -> bool:
        return self.accident_indices is not None

    def objects(self) -> Tuple[GroundTruthObject, ...]:
        return tuple(GroundTruthObject(b, c, s) for b, c, s in zip(self.boxes, self.classes, self.scores))


@dataclass(frozen=True)
class VideoAnnotation:
    video_id: str
    label: str
    fps: float
    num_frames: int
    frame_width: int
    frame_height: int
    accident_frame: Optional[int]
    frames: Tuple[FrameAnnotation, ...]

    @property
    def is_positive(self) -> bool:
        return self.label == POSITIVE

    @property
    def frame_size(self) -> Tuple[int, int]:
        return (self.frame_width, self.frame_height)

    def frame(self, index: int) -> FrameAnnotation:
        """1-based frame lookup."""
        if not 1 <= index <= self.num_frames:
            raise InvalidInputError(f"[{self.video_id}] frame index {index} outside 1..{self.num_frames}")
        return self.frames[index - 1]

    def as_frame(self, index: int, image=None) -> Frame:
        return Frame(
            video_id=self.video_id,
            index=index,
            width=self.frame_width,
            height=self.frame_height,
            fps=self.fps,
            image=image,
            ground_truth=self.frame(index).objects(),
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "schema_version": SCHEMA_VERSION,
            "video_id": self.video_id,
            "label": self.label,
            "fps": self.fps,
            "num_frames": self.num_frames,
            "frame_width": self.frame_width,
            "frame_height": self.frame_height,
            "accident_frame": self.accident_frame,
            "frames": [
                {
                    "boxes": [list(b.as_tuple()) for b in f.boxes],
                    "classes": list(f.classes),
                    "scores": list(f.scores),
                    "accident_indices": None if f.accident_indices is None else list(f.accident_indices),
                }
                for f in self.frames
            ],
        }


def _frame_from_dict(doc: Mapping[str, Any], video_id: str, index: int, width: int, height: int) -> FrameAnnotation:
    where = f"frame {index}"
    raw_boxes = doc.get("boxes")
    if not isinstance(raw_boxes, list):
        raise SchemaValidationError(f"{where}: 'boxes' must be a list", video_id)
    boxes: List[BoundingBox] = []
    for raw in raw_boxes:
        if not isinstance(raw, (list, tuple)) or len(raw) != 4:
            raise SchemaValidationError(f"{where}: box {raw!r} is not [x1, y1, x2, y2]", video_id)
        try:
            boxes.append(BoundingBox.clamped(*(float(v) for v in raw), width, height))
        except (InvalidInputError, TypeError, ValueError) as e:
            raise SchemaValidationError(f"{where}: invalid box {raw!r}: {e}", video_id) from e

    n = len(boxes)
    classes = doc.get("classes", [CLASS_NAMES.index("car")] * n)
    scores = doc.get("scores", [1.0] * n)
    if len(classes) != n or len(scores) != n:
        raise SchemaValidationError(f"{where}: classes/scores length differs from boxes", video_id)
    if any(not isinstance(c, int) or not 0 <= c < len(CLASS_NAMES) for c in classes):
        raise SchemaValidationError(f"{where}: class ids must be integers in 0..{len(CLASS_NAMES) - 1}", video_id)
    if any(not 0.0 <= float(s) <= 1.0 for s in scores):
        raise SchemaValidationError(f"{where}: scores must be in [0, 1]", video_id)

    raw_acc = doc.get("accident_indices", [])
    accident: Optional[Tuple[int, ...]] = None
    if raw_acc is not None:
        if not isinstance(raw_acc, list) or any(not isinstance(i, int) or not 0 <= i < n for i in raw_acc):
            raise SchemaValidationError(f"{where}: accident_indices must index into boxes", video_id)
        if len(set(raw_acc)) != len(raw_acc):
            raise SchemaValidationError(f"{where}: duplicate accident_indices", video_id)
        accident = tuple(raw_acc)
    return FrameAnnotation(tuple(boxes), tuple(int(c) for c in classes), tuple(float(s) for s in scores), accident)


def annotation_from_dict(doc: Mapping[str, Any]) -> VideoAnnotation:
    video_id = str(doc.get("video_id", ""))
    if not video_id:
        raise SchemaValidationError("missing video_id")
    version = doc.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise SchemaValidationError(f"schema_version {version!r}, expected {SCHEMA_VERSION!r}", video_id)
    try:
        label = doc["label"]
        fps = float(doc["fps"])
        num_frames = int(doc["num_frames"])
        width = int(doc["frame_width"])
        height = int(doc["frame_height"])
        frames_doc = doc["frames"]
    except KeyError as e:
        raise SchemaValidationError(f"missing field {e}", video_id) from e
    except (TypeError, ValueError) as e:
        raise SchemaValidationError(f"malformed field: {e}", video_id) from e

    if label not in (POSITIVE, NEGATIVE):
        raise SchemaValidationError(f"label must be '{POSITIVE}' or '{NEGATIVE}', got {label!r}", video_id)
    if fps <= 0 or num_frames < 1 or width <= 0 or height <= 0:
        raise SchemaValidationError("fps, num_frames and frame size must be positive", video_id)
    if not isinstance(frames_doc, list) or len(frames_doc) != num_frames:
        raise SchemaValidationError(f"expected {num_frames} frame entries, got {len(frames_doc) if isinstance(frames_doc, list) else 'none'}", video_id)

    accident_frame = doc.get("accident_frame")
    if label == POSITIVE:
        if not isinstance(accident_frame, int) or not 1 <= accident_frame <= num_frames:
            raise SchemaValidationError(f"positive video needs 1 <= accident_frame <= {num_frames}, got {accident_frame!r}", video_id)
    elif accident_frame is not None:
        raise SchemaValidationError("negative video must not carry an accident_frame", video_id)

    frames = tuple(_frame_from_dict(f, video_id, i + 1, width, height) for i, f in enumerate(frames_doc))
    if label == NEGATIVE and any(f.accident_indices for f in frames):
        raise SchemaValidationError("negative video must not mark accident objects", video_id)

    return VideoAnnotation(
        video_id=video_id,
        label=label,
        fps=fps,
        num_frames=num_frames,
        frame_width=width,
        frame_height=height,
        accident_frame=accident_frame if label == POSITIVE else None,
        frames=frames,
    )


def validate_annotations(annotations: Sequence[VideoAnnotation]) -> None:
    seen = set()
    for ann in annotations:
        if ann.video_id in seen:
            raise SchemaValidationError("duplicate video_id", ann.video_id)
        seen.add(ann.video_id)
