import json
from pathlib import Path

import numpy as np
import pytest

from conftest import small_overrides
from rare.cli import main
from rare.config import AppConfig
from rare.data.loader import load_dataset
from rare.detection.backend import build_detector
from rare.pipeline import RarePipeline, run_ablate, run_evaluate, run_generate_data, run_train
from rare.training.trainer import load_checkpoint, prepare_samples, read_epoch_log, score_samples
from rare.utils.errors import CheckpointError, SchemaValidationError


def _sets(tmp_path: Path, **extra) -> list:
    args = []
    for key, value in small_overrides(tmp_path, **extra).items():
        args += ["--set", f"{key}={value}"]
    return args


def _events(path: Path) -> list:
    return [json.loads(line) for line in path.read_text(encoding="utf-8").splitlines() if line.strip()]


@pytest.fixture
def trained(tmp_path):
    """Synthetic data plus a two-epoch checkpoint under tmp_path/runs."""
    cfg = AppConfig.defaults(small_overrides(tmp_path))
    run_generate_data(cfg)
    result = run_train(cfg)
    return cfg, result


def test_commands_end_to_end(monkeypatch, tmp_path: Path):
    """
    generate-data -> train -> evaluate -> demo -> bench through the CLI entry
    point, checking the artifacts each command promises.
    """
    monkeypatch.delenv("RARE_OUTPUT_DIR", raising=False)
    sets = _sets(tmp_path)
    runs = tmp_path / "runs"
    status_file = tmp_path / "status.jsonl"

    assert main(["generate-data", *sets, "--status-file", str(status_file)]) == 0
    assert (tmp_path / "data" / "train" / "manifest.json").is_file()

    assert main(["train", *sets]) == 0
    assert (runs / "checkpoints" / "latest.pt").is_file()
    logs = sorted((runs / "logs").glob("epoch_*.json"))
    assert [p.name for p in logs] == ["epoch_0001.json", "epoch_0002.json"]
    for path in logs:
        doc = read_epoch_log(path)
        assert doc["config"]["Training"]["learning_rate"] == pytest.approx(0.01)
    progress = [e["event"] for e in _events(runs / "status.jsonl")]
    assert progress.count("epoch_end") == 2
    assert progress[-1] == "summary"

    assert main(["evaluate", *sets]) == 0
    metrics = json.loads((runs / "metrics.json").read_text(encoding="utf-8"))
    assert 0.0 <= metrics["ap"] <= 1.0
    assert metrics["split"] == "test"
    assert metrics["num_videos"] == 4
    assert metrics["config"]["Output"]["output_dir"] == str(runs)

    assert main(["demo", *sets]) == 0
    demo_dir = runs / "demo" / "test_pos_0000"
    assert len(list(demo_dir.glob("overlay_*.png"))) == 12
    assert [p.name for p in demo_dir.glob("*curve*.png")] == ["risk_curve.png"]
    timeline = json.loads((demo_dir / "timeline.json").read_text(encoding="utf-8"))
    assert len(timeline["scores"]) == 12
    assert timeline["accident_frame"] is not None

    assert main(["bench", *sets, "--status-file", str(status_file)]) == 0
    latency = json.loads((runs / "latency.json").read_text(encoding="utf-8"))
    assert len(latency["per_frame_ms"]) == 8
    assert latency["fps"] == pytest.approx(1000.0 / latency["mean_ms"], rel=1e-9)

    stages = [(e["event"], e["stage"]) for e in _events(status_file)]
    assert ("pipeline_stage", "generate_done") in stages
    assert ("pipeline_stage", "bench_done") in stages


def test_demo_twice_keeps_first_output(trained):
    cfg, _ = trained
    assert main(["demo", *_sets(Path(cfg.data.root).parent)]) == 0
    assert main(["demo", *_sets(Path(cfg.data.root).parent)]) == 0
    assert (cfg.output_path / "demo" / "test_pos_0000_1" / "risk_curve.png").is_file()


def test_seeded_training_is_reproducible(tmp_path: Path):
    cfg = AppConfig.defaults(small_overrides(tmp_path))
    run_generate_data(cfg)
    first = run_train(cfg, run_dir=tmp_path / "a")
    second = run_train(cfg, run_dir=tmp_path / "b")
    assert first.final_loss.total == pytest.approx(second.final_loss.total, abs=1e-6)
    for a, b in zip(first.history, second.history):
        assert a["loss"]["adalea"] == pytest.approx(b["loss"]["adalea"], abs=1e-6)
        assert a["loss"]["ranking"] == pytest.approx(b["loss"]["ranking"], abs=1e-6)


def test_seeded_runs_write_identical_metrics(tmp_path: Path):
    cfg = AppConfig.defaults(small_overrides(tmp_path))
    run_generate_data(cfg)
    written = []
    for name in ("a", "b"):
        run_dir = tmp_path / name
        run_train(cfg, run_dir=run_dir)
        run_evaluate(cfg.with_overrides({"Output.output_dir": str(run_dir)}))
        doc = json.loads((run_dir / "metrics.json").read_text(encoding="utf-8"))
        # only the run location differs
        assert doc.pop("checkpoint") == str(run_dir / "checkpoints" / "latest.pt")
        assert doc["config"]["Output"].pop("output_dir") == str(run_dir)
        written.append(json.dumps(doc, indent=2, sort_keys=True))
    assert written[0] == written[1]


def test_checkpoint_round_trip_reproduces_scores(trained):
    cfg, result = trained
    records = load_dataset(Path(cfg.data.root), "test")
    samples = prepare_samples(build_detector(cfg.detector), records, cfg)

    first = load_checkpoint(result.checkpoint)
    second = load_checkpoint(result.checkpoint)
    assert first.epoch == 2
    assert first.config == cfg
    assert len(first.history) == 2
    a = score_samples(first.model, samples, cfg.detector.input_size)
    b = score_samples(second.model, samples, cfg.detector.input_size)
    for (ta, _), (tb, _) in zip(a, b):
        assert np.array_equal(ta.scores, tb.scores)


def test_streaming_matches_batched_forward(trained):
    cfg, result = trained
    model = load_checkpoint(result.checkpoint).model
    records = load_dataset(Path(cfg.data.root), "test")
    samples = prepare_samples(build_detector(cfg.detector), records, cfg)
    batched = score_samples(model, samples, cfg.detector.input_size)

    pipeline = RarePipeline(build_detector(cfg.detector), model, cfg)
    for record, (expected, _) in zip(records, batched):
        streamed = pipeline.run_video(record.source.frames(with_image=False), record.annotation.video_id)
        np.testing.assert_allclose(streamed.scores, expected.scores, atol=1e-5)
        for s, e in zip(streamed.attention, expected.attention):
            np.testing.assert_allclose(s, e, atol=1e-5)


def test_corrupted_artifacts_are_rejected(trained, tmp_path: Path):
    cfg, result = trained
    broken = tmp_path / "broken.pt"
    broken.write_bytes(b"not a checkpoint")
    with pytest.raises(CheckpointError):
        load_checkpoint(broken)
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "absent.pt")

    log = cfg.output_path / "logs" / "epoch_0001.json"
    doc = json.loads(log.read_text(encoding="utf-8"))
    doc["loss"]["total"] += 1.0
    log.write_text(json.dumps(doc), encoding="utf-8")
    with pytest.raises(SchemaValidationError):
        read_epoch_log(log)


def test_missing_checkpoint_writes_error_record(monkeypatch, tmp_path: Path):
    monkeypatch.delenv("RARE_OUTPUT_DIR", raising=False)
    sets = _sets(tmp_path)
    assert main(["generate-data", *sets]) == 0
    assert main(["evaluate", *sets]) == 1
    error = json.loads((tmp_path / "runs" / "error.json").read_text(encoding="utf-8"))
    assert error["command"] == "evaluate"
    assert error["error_type"] == "CheckpointError"
    assert error["schema_version"] == "1"


def test_invalid_config_exits_with_code_2(monkeypatch, tmp_path: Path):
    monkeypatch.setenv("RARE_OUTPUT_DIR", str(tmp_path / "fallback"))
    assert main(["train", "--set", "learning_rate=abc"]) == 2
    error = json.loads((tmp_path / "fallback" / "error.json").read_text(encoding="utf-8"))
    assert error["error_type"] == "ConfigError"

    assert main(["train", "--set", "learning_rate"]) == 2
    assert main(["train", "--config", str(tmp_path / "absent.ini")]) == 2


def test_log_file_receives_records(monkeypatch, tmp_path: Path):
    monkeypatch.delenv("RARE_OUTPUT_DIR", raising=False)
    log_file = tmp_path / "logs" / "rare.log"
    assert main(["generate-data", *_sets(tmp_path), "--log-file", str(log_file)]) == 0
    assert "Synthetic dataset written" in log_file.read_text(encoding="utf-8")


def test_missing_dataset_exits_with_code_1(monkeypatch, tmp_path: Path):
    monkeypatch.delenv("RARE_OUTPUT_DIR", raising=False)
    assert main(["train", *_sets(tmp_path)]) == 1
    error = json.loads((tmp_path / "runs" / "error.json").read_text(encoding="utf-8"))
    assert error["error_type"] == "MissingDataError"


def test_ablation_report(tmp_path: Path):
    cfg = AppConfig.defaults(small_overrides(tmp_path, **{"Training.epochs": 1}))
    run_generate_data(cfg)
    doc = run_ablate(cfg)
    assert [row["name"] for row in doc["variants"]] == ["full", "no_backbone", "no_neck", "no_ranking"]
    for row in doc["variants"]:
        assert 0.0 <= row["ap"] <= 1.0
        assert row["final_loss"] >= 0.0
        assert (cfg.output_path / "ablate" / row["name"] / "checkpoints" / "latest.pt").is_file()
    saved = json.loads((cfg.output_path / "ablation.json").read_text(encoding="utf-8"))
    assert saved["variants"][3]["overrides"] == {"Loss.gamma": 0.0}
    assert saved["config"]["Loss"]["gamma"] == pytest.approx(10.0)
