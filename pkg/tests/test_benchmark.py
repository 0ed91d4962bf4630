import pytest
import torch

from rare.detection.backend import build_detector
from rare.detection.types import BoundingBox, Frame, GroundTruthObject
from rare.evaluation.benchmark import LatencyReport, benchmark
from rare.model.rare import RareModel
from rare.pipeline import RarePipeline
from rare.utils.errors import BenchmarkAbortedError, InvalidInputError


class CountingPipeline:
    def __init__(self, fail_at=None):
        self.steps = 0
        self.resets = 0
        self.fail_at = fail_at
        self.seen = []

    def reset(self):
        self.resets += 1

    def step(self, frame):
        self.steps += 1
        if self.fail_at is not None and self.steps == self.fail_at:
            raise RuntimeError("detector crashed")
        self.seen.append(frame.index)
        return frame.index


def _frames(n):
    return [Frame("v", i, 64, 64, 10.0) for i in range(1, n + 1)]


def test_fps_is_inverse_mean_latency():
    report = LatencyReport.from_samples([10.0] * 20, warmup=3)
    assert report.fps == pytest.approx(100.0)
    assert report.mean_ms == report.median_ms == report.p99_ms == 10.0
    assert report.measured == 20

    mixed = LatencyReport.from_samples([5.0, 10.0, 30.0])
    assert mixed.fps == pytest.approx(1000.0 / mixed.mean_ms, rel=1e-9)


def test_counts_only_measured_frames():
    pipeline = CountingPipeline()
    report = benchmark(pipeline, _frames(100), warmup=50, measured=500, progress=False)
    assert len(report.per_frame_ms) == 500
    assert report.warmup == 50
    assert pipeline.steps == 550
    assert report.hardware
    assert report.rss_mb > 0


def test_stream_resets_when_frames_wrap():
    pipeline = CountingPipeline()
    benchmark(pipeline, _frames(4), warmup=1, measured=9, progress=False)
    # initial reset plus one per wrap at steps 5 and 9
    assert pipeline.resets == 3
    assert pipeline.seen == [1, 2, 3, 4, 1, 2, 3, 4, 1, 2]


def test_failure_aborts_with_partial_samples():
    pipeline = CountingPipeline(fail_at=8)
    with pytest.raises(BenchmarkAbortedError) as info:
        benchmark(pipeline, _frames(10), warmup=2, measured=10, progress=False)
    partial = info.value.partial
    assert partial is not None
    assert partial.measured == 5
    assert "frame 8" in str(info.value)


def test_failure_during_warmup_has_no_partial_report():
    with pytest.raises(BenchmarkAbortedError) as info:
        benchmark(CountingPipeline(fail_at=1), _frames(3), warmup=2, measured=3, progress=False)
    assert info.value.partial is None


def test_argument_validation():
    with pytest.raises(InvalidInputError):
        benchmark(CountingPipeline(), _frames(3), warmup=-1, measured=3, progress=False)
    with pytest.raises(InvalidInputError):
        benchmark(CountingPipeline(), _frames(3), warmup=0, measured=0, progress=False)
    with pytest.raises(InvalidInputError):
        benchmark(CountingPipeline(), [], warmup=0, measured=3, progress=False)


def test_repeated_runs_agree_on_mean_latency(small_cfg):
    torch.manual_seed(0)
    pipeline = RarePipeline(build_detector(small_cfg.detector), RareModel.from_config(small_cfg), small_cfg)
    frames = [
        Frame("v", i, 128, 128, 10.0, ground_truth=(
            GroundTruthObject(BoundingBox(10 + 2 * i, 20, 50 + 2 * i, 60)),
            GroundTruthObject(BoundingBox(70, 60 - i, 110, 100 - i), class_id=5, confidence=0.7),
        ))
        for i in range(1, 9)
    ]
    first = benchmark(pipeline, frames, warmup=5, measured=40, progress=False)
    second = benchmark(pipeline, frames, warmup=5, measured=40, progress=False)
    assert first.measured == second.measured == 40
    assert 1 / 3 <= first.mean_ms / second.mean_ms <= 3
