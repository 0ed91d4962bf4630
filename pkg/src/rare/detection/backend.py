import logging
from typing import Iterable, NamedTuple, Protocol, Tuple, runtime_checkable

from rare.config import DetectorConfig
from rare.detection.types import BoundingBox, Detection, DetectionOutput, Frame
from rare.utils.errors import BackendUnavailableError, InvalidInputError

logger = logging.getLogger("rare.detection")


class RawDetection(NamedTuple):
    """Detector output before filtering; xyxy in input-resolution pixels."""
    xyxy: Tuple[float, float, float, float]
    confidence: float
    class_id: int


@runtime_checkable
class DetectorBackend(Protocol):
    """
    Per-frame detector interface.
    Implementations return detections in input-resolution pixels together
    with the backbone map and the neck maps ordered by increasing stride.
    """

    name: str

    def detect(self, frame: Frame) -> DetectionOutput:
        ...


def validate_frame(frame: Frame) -> None:
    if frame.width <= 0 or frame.height <= 0:
        raise InvalidInputError(f"Frame {frame.video_id}:{frame.index} has non-positive size {frame.size}")


def finalize_detections(candidates: Iterable[RawDetection], config: DetectorConfig) -> Tuple[Detection, ...]:
    """Confidence and class filter, clamp to the input square, sort by confidence, cap at n_max."""
    allowed = set(config.allowed_class_ids)
    size = float(config.input_size)
    kept = []
    for xyxy, confidence, class_id in candidates:
        if confidence <= config.confidence_threshold or class_id not in allowed:
            continue
        try:
            box = BoundingBox.clamped(*xyxy, size, size)
        except InvalidInputError:
            continue  # nothing left inside the input square
        kept.append(Detection(box, float(confidence), int(class_id)))
    # stable sort keeps annotation order among ties
    kept.sort(key=lambda d: -d.confidence)
    return tuple(kept[: config.n_max])


def build_detector(config: DetectorConfig, fallback_to_synthetic: bool = False) -> DetectorBackend:
    """Construct the configured backend; optionally fall back to the synthetic oracle."""
    from rare.detection.synthetic import SyntheticDetector

    if config.backend == "synthetic":
        return SyntheticDetector(config)
    try:
        from rare.detection.external import ExternalDetector

        return ExternalDetector(config)
    except BackendUnavailableError as e:
        if not fallback_to_synthetic:
            raise
        logger.warning(f"External detector unavailable ({e}); falling back to the synthetic oracle")
        return SyntheticDetector(config)
