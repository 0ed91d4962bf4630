"""
Configuration Manager for rare

Handles user configuration using INI format for ease of use.
Provides defaults, rejects unknown keys and applies command-line overrides.
"""

import configparser
import logging
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Tuple

from rare.utils.errors import ConfigError

logger = logging.getLogger("rare.config")


class ConfigManager:
    """Manages configuration settings for rare"""

    DEFAULT_CONFIG: Dict[str, Dict[str, str]] = {
        'Detector': {
            'backend': 'synthetic',  # options: synthetic | external
            'input_size': '640',
            'confidence_threshold': '0.1',
            'allowed_classes': 'person,bicycle,car,motorcycle,bus,truck',
            'n_max': '20',
            'backbone_stride': '32',
            'backbone_channels': '256',
            'neck_strides': '8,16,32',
            'neck_channels': '256,256,256',
            'blur_px': '12',
            'external_weights': 'yolov10n.pt',
            'external_device': 'cpu',
            'external_backbone_layer': '9',
            'external_neck_layers': '16,19,22',
        },
        'Model': {
            'roi_size': '7',
            'sampling_ratio': '2',
            'box_embed_dim': '32',
            'object_embed_dim': '256',
            'cbam_reduction': '16',
            'scene_hidden_dim': '256',
            'num_heads': '4',
            'fused_dim': '256',
            'queue_size': '10',
            'classifier_hidden_dim': '128',
            'use_backbone_roi': 'true',
            'use_neck_roi': 'true',
            'fusion_residual': 'true',
        },
        'Loss': {
            'margin': '0.1',
            'gamma': '10',
            'alpha': '0.1',
            'iou_threshold': '0.5',
            'literal_eq5': 'false',
        },
        'Training': {
            'learning_rate': '0.05',
            'momentum': '0.9',
            'batch_size': '4',
            'epochs': '30',
            'optimizer': 'sgd',
            'seed': '0',
            'deterministic': 'true',
            'grad_clip_norm': '5.0',
            'prefetch_workers': '4',
            'attc_threshold': '0.5',
        },
        'Data': {
            'root': 'data/synthetic',
            'eval_split': 'test',
        },
        'Evaluation': {
            'threshold': '0.5',
            'checkpoint': '',
        },
        'Benchmark': {
            'warmup': '50',
            'measured': '500',
        },
        'Synthetic': {
            'num_positive': '24',
            'num_negative': '24',
            'test_positive': '8',
            'test_negative': '8',
            'frames_per_video': '32',
            'fps': '10',
            'frame_width': '320',
            'frame_height': '192',
            'distractors': '1',
            'seed': '7',
        },
        'Output': {
            'output_dir': 'runs',
            'debug': 'false',
            'progress': 'true',
        },
    }

    def __init__(
        self,
        config_path: Optional[str] = None,
        overrides: Optional[Mapping[str, str]] = None,
        env: Optional[Mapping[str, str]] = None,
        search_default: bool = True,
    ):
        """
        Initialize configuration manager

        Args:
            config_path: Path to configuration file. If None, looks for rare.ini
                         in current directory, then uses defaults.
            overrides: "key" or "Section.key" -> value, applied last.
            env: Environment mapping consulted for RARE_OUTPUT_DIR.
            search_default: When False and no path is given, only defaults are used.
        """
        self.config = configparser.ConfigParser(interpolation=None)

        for section, options in self.DEFAULT_CONFIG.items():
            self.config[section] = options

        explicit = config_path is not None
        self.config_path = Path(config_path if explicit else 'rare.ini')

        if explicit or search_default:
            if self.config_path.exists():
                self._load_file(self.config_path)
                logger.info(f"Loaded configuration from: {self.config_path}")
            elif explicit:
                raise ConfigError(f"Configuration file not found: {self.config_path}")
            else:
                logger.info(f"No configuration file found at {self.config_path}, using defaults")

        output_dir = (env or {}).get('RARE_OUTPUT_DIR')
        if output_dir:
            self.config['Output']['output_dir'] = output_dir

        for key, value in (overrides or {}).items():
            section, option = self.resolve_key(key)
            self.config[section][option] = str(value)

    def _load_file(self, path: Path) -> None:
        user = configparser.ConfigParser(interpolation=None)
        try:
            user.read(path, encoding='utf-8')
        except configparser.Error as e:
            raise ConfigError(f"Failed to parse config file {path}: {e}") from e
        for section in user.sections():
            if section not in self.DEFAULT_CONFIG:
                raise ConfigError(f"Unknown config section [{section}] in {path}")
            for option, value in user[section].items():
                if option not in self.DEFAULT_CONFIG[section]:
                    raise ConfigError(f"Unknown config key '{option}' in section [{section}] of {path}")
                self.config[section][option] = value

    @classmethod
    def resolve_key(cls, key: str) -> Tuple[str, str]:
        """Map 'key' or 'Section.key' onto a known (section, option) pair."""
        if '.' in key:
            section, option = key.split('.', 1)
            match = {s.lower(): s for s in cls.DEFAULT_CONFIG}.get(section.lower())
            if match is None or option not in cls.DEFAULT_CONFIG[match]:
                raise ConfigError(f"Unknown config key '{key}'")
            return match, option
        owners = [s for s, opts in cls.DEFAULT_CONFIG.items() if key in opts]
        if not owners:
            raise ConfigError(f"Unknown config key '{key}'")
        if len(owners) > 1:
            raise ConfigError(f"Ambiguous config key '{key}'; use one of: " + ", ".join(f"{s}.{key}" for s in owners))
        return owners[0], key

    def get(self, section: str, option: str, fallback: Any = None) -> Any:
        """
        Get a configuration value
        """
        return self.config.get(section, option, fallback=fallback)

    def getint(self, section: str, option: str) -> int:
        """Get a configuration value as integer"""
        try:
            return self.config.getint(section, option)
        except ValueError as e:
            raise ConfigError(f"{section}.{option} must be an integer: {e}") from e

    def getfloat(self, section: str, option: str) -> float:
        """Get a configuration value as float"""
        try:
            return self.config.getfloat(section, option)
        except ValueError as e:
            raise ConfigError(f"{section}.{option} must be a number: {e}") from e

    def getboolean(self, section: str, option: str) -> bool:
        """Get a configuration value as boolean"""
        try:
            return self.config.getboolean(section, option)
        except ValueError as e:
            raise ConfigError(f"{section}.{option} must be a boolean: {e}") from e

    def getlist(self, section: str, option: str) -> List[str]:
        """Comma-separated list; blanks dropped."""
        raw = self.config.get(section, option)
        return [item.strip() for item in raw.split(',') if item.strip()]

    def getintlist(self, section: str, option: str) -> List[int]:
        try:
            return [int(item) for item in self.getlist(section, option)]
        except ValueError as e:
            raise ConfigError(f"{section}.{option} must be a comma-separated list of integers: {e}") from e
