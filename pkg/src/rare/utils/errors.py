class RareError(Exception):
    """Base exception for rare."""


class ConfigError(RareError):
    """Configuration related errors (unknown keys, bad values, invalid shape specs)."""


class InvalidInputError(RareError):
    """An operation received arguments outside its domain."""


class InvalidShapeError(RareError):
    """Tensor dimensions do not match the module parameters."""


class DegenerateBoxError(InvalidInputError):
    """A box has zero width or height in feature coordinates."""


class EmptyObjectSetError(InvalidInputError):
    """Attention fusion was called without objects; use fuse_empty."""


class BackendUnavailableError(RareError):
    """The requested detector backend cannot be constructed."""


class SchemaValidationError(RareError):
    """An annotation, manifest or log document violates the on-disk schema."""

    def __init__(self, message: str, video_id: str = ""):
        super().__init__(f"[{video_id}] {message}" if video_id else message)
        self.video_id = video_id


class MissingDataError(RareError):
    """Frames or annotation files referenced by a manifest are absent."""


class InvalidAnnotationError(RareError):
    """An annotation lacks a field the loss or metrics need."""


class GenerationError(RareError):
    """Synthetic dataset generation failed."""


class UndefinedRecallError(RareError):
    """Precision/recall requested on a dataset without positive videos."""


class BenchmarkAbortedError(RareError):
    """The benchmarked pipeline failed mid-run; partial samples are attached."""

    def __init__(self, message: str, partial=None):
        super().__init__(message)
        self.partial = partial


class CheckpointError(RareError):
    """A checkpoint cannot be read or was written by an incompatible version."""
