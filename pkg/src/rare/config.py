from __future__ import annotations

import os
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple

from rare.config_manager import ConfigManager
from rare.detection.types import CLASS_NAMES, FeatureShapeSpec
from rare.utils.errors import ConfigError


@dataclass(frozen=True)
class DetectorConfig:
    """
    Detector contract settings. Field names match the [Detector] INI keys.
    """
    backend: str
    input_size: int
    confidence_threshold: float
    allowed_classes: Tuple[str, ...]
    n_max: int
    backbone_stride: int
    backbone_channels: int
    neck_strides: Tuple[int, ...]
    neck_channels: Tuple[int, ...]
    blur_px: float
    external_weights: str
    external_device: str
    external_backbone_layer: int
    external_neck_layers: Tuple[int, ...]

    @property
    def allowed_class_ids(self) -> Tuple[int, ...]:
        return tuple(CLASS_NAMES.index(name) for name in self.allowed_classes)

    @property
    def feature_shapes(self) -> FeatureShapeSpec:
        return FeatureShapeSpec(
            backbone_channels=self.backbone_channels,
            backbone_stride=self.backbone_stride,
            neck_channels=self.neck_channels,
            neck_strides=self.neck_strides,
            input_size=self.input_size,
            blur_px=self.blur_px,
        )


@dataclass(frozen=True)
class ModelConfig:
    """
    Learnable-module sizes and ablation switches ([Model]).
    """
    roi_size: int
    sampling_ratio: int
    box_embed_dim: int
    object_embed_dim: int
    cbam_reduction: int
    scene_hidden_dim: int
    num_heads: int
    fused_dim: int
    queue_size: int
    classifier_hidden_dim: int
    use_backbone_roi: bool
    use_neck_roi: bool
    fusion_residual: bool


@dataclass(frozen=True)
class LossConfig:
    margin: float
    gamma: float
    alpha: float
    iou_threshold: float
    literal_eq5: bool


@dataclass(frozen=True)
class TrainingConfig:
    """
    Optimizer and loop settings. Defaults follow the published recipe:
    momentum SGD, lr 5e-2, batch of 4 videos, constant learning rate.
    """
    learning_rate: float
    momentum: float
    batch_size: int
    epochs: int
    optimizer: str
    seed: int
    deterministic: bool
    grad_clip_norm: float
    prefetch_workers: int
    attc_threshold: float


@dataclass(frozen=True)
class DataConfig:
    root: str
    eval_split: str


@dataclass(frozen=True)
class EvaluationConfig:
    threshold: float
    checkpoint: str


@dataclass(frozen=True)
class BenchmarkConfig:
    warmup: int
    measured: int


@dataclass(frozen=True)
class SyntheticConfig:
    """
    Synthetic collision dataset record; generation is a pure function of it.
    """
    num_positive: int
    num_negative: int
    test_positive: int
    test_negative: int
    frames_per_video: int
    fps: float
    frame_width: int
    frame_height: int
    distractors: int
    seed: int

    @property
    def frame_size(self) -> Tuple[int, int]:
        return (self.frame_width, self.frame_height)


@dataclass(frozen=True)
class OutputConfig:
    output_dir: str
    debug: bool
    progress: bool


_SECTIONS = {
    'Detector': DetectorConfig,
    'Model': ModelConfig,
    'Loss': LossConfig,
    'Training': TrainingConfig,
    'Data': DataConfig,
    'Evaluation': EvaluationConfig,
    'Benchmark': BenchmarkConfig,
    'Synthetic': SyntheticConfig,
    'Output': OutputConfig,
}


def _read_section(cfg: ConfigManager, section: str, cls) -> Any:
    values: Dict[str, Any] = {}
    for f in fields(cls):
        t = f.type  # annotations are strings (postponed evaluation)
        if t == 'int':
            values[f.name] = cfg.getint(section, f.name)
        elif t == 'float':
            values[f.name] = cfg.getfloat(section, f.name)
        elif t == 'bool':
            values[f.name] = cfg.getboolean(section, f.name)
        elif t == 'Tuple[int, ...]':
            values[f.name] = tuple(cfg.getintlist(section, f.name))
        elif t == 'Tuple[str, ...]':
            values[f.name] = tuple(cfg.getlist(section, f.name))
        else:
            values[f.name] = cfg.get(section, f.name).strip()
    return cls(**values)


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise ConfigError(message)


@dataclass(frozen=True)
class AppConfig:
    """
    Root typed configuration passed across CLI -> pipeline -> services.
    All env reads are centralized here; library code receives sub-configs explicitly.
    """
    detector: DetectorConfig
    model: ModelConfig
    loss: LossConfig
    training: TrainingConfig
    data: DataConfig
    evaluation: EvaluationConfig
    benchmark: BenchmarkConfig
    synthetic: SyntheticConfig
    output: OutputConfig

    @classmethod
    def from_env_and_ini(
        cls,
        ini_path: Optional[str] = None,
        overrides: Optional[Mapping[str, str]] = None,
    ) -> "AppConfig":
        """
        Build AppConfig from the INI file, environment and --set overrides.

        Precedence (highest -> lowest):
        - --set overrides (cli.py)
        - Environment (RARE_OUTPUT_DIR)
        - INI via ConfigManager
        - Hardcoded defaults in ConfigManager.DEFAULT_CONFIG
        """
        return cls._from_manager(ConfigManager(ini_path, overrides=overrides, env=os.environ))

    @classmethod
    def defaults(cls, overrides: Optional[Mapping[str, str]] = None) -> "AppConfig":
        """Defaults plus overrides only; no file lookup, no environment."""
        return cls._from_manager(ConfigManager(None, overrides=overrides, search_default=False))

    @classmethod
    def from_dict(cls, doc: Mapping[str, Mapping[str, Any]]) -> "AppConfig":
        """Inverse of to_dict(); used to restore the config stored in checkpoints."""
        overrides: Dict[str, str] = {}
        for section, values in doc.items():
            for key, value in values.items():
                if isinstance(value, (list, tuple)):
                    value = ','.join(str(v) for v in value)
                elif isinstance(value, bool):
                    value = 'true' if value else 'false'
                overrides[f"{section}.{key}"] = str(value)
        return cls.defaults(overrides)

    @classmethod
    def _from_manager(cls, cfg: ConfigManager) -> "AppConfig":
        parts = {name.lower(): _read_section(cfg, name, sub) for name, sub in _SECTIONS.items()}
        app = cls(**parts)
        app.validate()
        return app

    def with_overrides(self, overrides: Mapping[str, Any]) -> "AppConfig":
        """Copy with "key" or "Section.key" overrides applied (used by ablation runs)."""
        doc = self.to_dict()
        for key, value in overrides.items():
            section, option = ConfigManager.resolve_key(key)
            doc[section][option] = value
        return AppConfig.from_dict(doc)

    def validate(self) -> None:
        d, m, l, t = self.detector, self.model, self.loss, self.training
        _require(d.backend in ('synthetic', 'external'), f"Detector.backend must be synthetic or external, got '{d.backend}'")
        _require(d.input_size > 0, "Detector.input_size must be positive")
        _require(0.0 <= d.confidence_threshold <= 1.0, "Detector.confidence_threshold must be in [0, 1]")
        unknown = [c for c in d.allowed_classes if c not in CLASS_NAMES]
        _require(not unknown, f"Detector.allowed_classes has unknown classes: {unknown}")
        _require(d.n_max >= 1, "Detector.n_max must be >= 1")
        _require(len(d.neck_strides) > 0, "Detector.neck_strides must not be empty")
        _require(len(d.neck_strides) == len(d.neck_channels), "Detector.neck_strides and neck_channels differ in length")
        _require(all(a < b for a, b in zip(d.neck_strides, d.neck_strides[1:])), "Detector.neck_strides must be strictly increasing")
        _require(d.backbone_stride > 0 and min(d.neck_strides) > 0, "Detector strides must be positive")
        _require(d.backbone_channels > 0 and min(d.neck_channels) > 0, "Detector channel counts must be positive")
        _require(d.blur_px > 0, "Detector.blur_px must be positive")
        _require(m.roi_size >= 1 and m.sampling_ratio >= 1, "Model.roi_size and Model.sampling_ratio must be >= 1")
        _require(m.fused_dim % m.num_heads == 0, "Model.fused_dim must be divisible by Model.num_heads")
        _require(m.queue_size >= 1, "Model.queue_size must be >= 1")
        _require(m.use_backbone_roi or m.use_neck_roi, "At least one of Model.use_backbone_roi / use_neck_roi must be true")
        _require(min(m.box_embed_dim, m.object_embed_dim, m.scene_hidden_dim, m.classifier_hidden_dim, m.cbam_reduction) >= 1,
                 "Model dimensions must be positive")
        _require(l.margin >= 0 and l.gamma >= 0 and l.alpha >= 0, "Loss.margin, gamma and alpha must be >= 0")
        _require(0.0 <= l.iou_threshold <= 1.0, "Loss.iou_threshold must be in [0, 1]")
        _require(t.optimizer == 'sgd', f"Training.optimizer supports only 'sgd' (momentum SGD), got '{t.optimizer}'")
        _require(t.learning_rate > 0 and t.batch_size >= 1 and t.epochs >= 0, "Training.learning_rate, batch_size, epochs invalid")
        _require(0.0 <= t.attc_threshold <= 1.0, "Training.attc_threshold must be in [0, 1]")
        _require(self.data.eval_split in ('train', 'test'), "Data.eval_split must be train or test")
        _require(self.benchmark.warmup >= 0 and self.benchmark.measured >= 1, "Benchmark.warmup >= 0 and measured >= 1 required")
        s = self.synthetic
        _require(min(s.num_positive, s.num_negative, s.frames_per_video) >= 1, "Synthetic counts must be positive")
        _require(min(s.test_positive, s.test_negative, s.distractors) >= 0, "Synthetic test counts must be >= 0")
        _require(s.fps > 0, "Synthetic.fps must be positive")

    def to_dict(self) -> Dict[str, Dict[str, Any]]:
        """Effective configuration keyed by INI section; embedded in every artifact."""
        out: Dict[str, Dict[str, Any]] = {}
        for name in _SECTIONS:
            values = asdict(getattr(self, name.lower()))
            out[name] = {k: list(v) if isinstance(v, tuple) else v for k, v in values.items()}
        return out

    @property
    def output_path(self) -> Path:
        return Path(self.output.output_dir)
