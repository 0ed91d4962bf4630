from pathlib import Path

import pytest

from rare.config import AppConfig
from rare.config_manager import ConfigManager
from rare.utils.errors import ConfigError


def test_defaults_follow_published_training_recipe():
    app = AppConfig.defaults()
    assert app.training.learning_rate == pytest.approx(5e-2)
    assert app.training.batch_size == 4
    assert app.training.optimizer == "sgd"
    assert app.model.queue_size == 10
    assert app.loss.margin == pytest.approx(0.1)
    assert app.loss.gamma == pytest.approx(10.0)
    assert app.loss.literal_eq5 is False
    assert app.detector.input_size == 640
    assert app.detector.confidence_threshold == pytest.approx(0.1)
    assert app.detector.n_max == 20
    assert app.detector.allowed_classes == ("person", "bicycle", "car", "motorcycle", "bus", "truck")
    assert app.detector.allowed_class_ids == (0, 1, 2, 3, 4, 5)
    assert app.detector.neck_strides == (8, 16, 32)


def test_ranking_variant_switch_is_configurable(tmp_path: Path):
    assert AppConfig.defaults({"literal_eq5": "true"}).loss.literal_eq5 is True
    assert AppConfig.defaults({"Loss.literal_eq5": "false"}).loss.literal_eq5 is False
    ini = tmp_path / "rare.ini"
    ini.write_text("[Loss]\nliteral_eq5 = true\n", encoding="utf-8")
    assert AppConfig.from_env_and_ini(str(ini)).loss.literal_eq5 is True


def test_repository_ini_matches_defaults(monkeypatch):
    monkeypatch.delenv("RARE_OUTPUT_DIR", raising=False)
    ini = Path(__file__).resolve().parents[1] / "rare.ini"
    assert AppConfig.from_env_and_ini(str(ini)).to_dict() == AppConfig.defaults().to_dict()


def test_precedence_override_over_env_over_ini(monkeypatch, tmp_path: Path):
    ini = tmp_path / "rare.ini"
    ini.write_text("[Training]\nlearning_rate = 0.01\nepochs = 3\n[Output]\noutput_dir = from_ini\n", encoding="utf-8")
    monkeypatch.setenv("RARE_OUTPUT_DIR", str(tmp_path / "from_env"))

    app = AppConfig.from_env_and_ini(str(ini), overrides={"learning_rate": "0.02"})
    assert app.training.learning_rate == pytest.approx(0.02)
    assert app.training.epochs == 3
    assert app.output.output_dir == str(tmp_path / "from_env")

    app = AppConfig.from_env_and_ini(str(ini), overrides={"output_dir": "from_override"})
    assert app.output.output_dir == "from_override"


def test_unknown_ini_key_rejected(tmp_path: Path):
    ini = tmp_path / "rare.ini"
    ini.write_text("[Training]\nlearning_rte = 0.01\n", encoding="utf-8")
    with pytest.raises(ConfigError, match="learning_rte"):
        AppConfig.from_env_and_ini(str(ini))


def test_unknown_ini_section_rejected(tmp_path: Path):
    ini = tmp_path / "rare.ini"
    ini.write_text("[Optimizer]\nlr = 0.01\n", encoding="utf-8")
    with pytest.raises(ConfigError, match="Optimizer"):
        AppConfig.from_env_and_ini(str(ini))


def test_missing_explicit_config_file(tmp_path: Path):
    with pytest.raises(ConfigError, match="not found"):
        AppConfig.from_env_and_ini(str(tmp_path / "absent.ini"))


def test_override_keys():
    with pytest.raises(ConfigError, match="Unknown"):
        AppConfig.defaults({"no_such_key": "1"})
    # seed exists in [Training] and [Synthetic]
    with pytest.raises(ConfigError, match="Ambiguous"):
        AppConfig.defaults({"seed": "1"})
    app = AppConfig.defaults({"Training.seed": "5", "synthetic.seed": "9"})
    assert (app.training.seed, app.synthetic.seed) == (5, 9)
    assert ConfigManager.resolve_key("gamma") == ("Loss", "gamma")


@pytest.mark.parametrize(
    "overrides",
    [
        {"learning_rate": "abc"},
        {"fused_dim": "10"},
        {"use_backbone_roi": "false", "use_neck_roi": "false"},
        {"neck_strides": "8,16", "neck_channels": "4,4,4"},
        {"neck_strides": "16,8,32"},
        {"allowed_classes": "car,tram"},
        {"optimizer": "adam"},
        {"backend": "onnx"},
        {"confidence_threshold": "1.5"},
        {"deterministic": "sometimes"},
    ],
)
def test_invalid_values_raise_config_error(overrides):
    with pytest.raises(ConfigError):
        AppConfig.defaults(overrides)


def test_dict_round_trip_and_with_overrides():
    app = AppConfig.defaults({"gamma": "0", "queue_size": "6", "allowed_classes": "car,bus"})
    assert AppConfig.from_dict(app.to_dict()) == app

    variant = app.with_overrides({"Model.use_neck_roi": False, "Loss.gamma": 2.5})
    assert variant.model.use_neck_roi is False
    assert variant.loss.gamma == pytest.approx(2.5)
    assert variant.model.queue_size == 6
    assert app.model.use_neck_roi is True
