import logging
import platform
import time
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional, Protocol, Sequence

import numpy as np
import psutil
import torch
from tqdm import tqdm

from rare.detection.types import Frame
from rare.utils.errors import BenchmarkAbortedError, InvalidInputError

logger = logging.getLogger("rare.benchmark")


class StreamingPipeline(Protocol):
    def reset(self) -> None:
        ...

    def step(self, frame: Frame) -> Any:
        ...


@dataclass
class LatencyReport:
    per_frame_ms: List[float]
    mean_ms: float
    median_ms: float
    p95_ms: float
    p99_ms: float
    fps: float
    warmup: int = 0
    measured: int = 0
    hardware: str = ""
    rss_mb: float = 0.0
    config: Dict[str, Any] = field(default_factory=dict)

    @classmethod
    def from_samples(cls, per_frame_ms: Sequence[float], warmup: int = 0, **extras: Any) -> "LatencyReport":
        samples = np.asarray(per_frame_ms, dtype=np.float64)
        if samples.size == 0:
            raise InvalidInputError("LatencyReport needs at least one sample")
        mean_ms = float(samples.mean())
        return cls(
            per_frame_ms=[float(v) for v in samples],
            mean_ms=mean_ms,
            median_ms=float(np.median(samples)),
            p95_ms=float(np.percentile(samples, 95)),
            p99_ms=float(np.percentile(samples, 99)),
            fps=1000.0 / mean_ms if mean_ms > 0 else float("inf"),
            warmup=warmup,
            measured=int(samples.size),
            **extras,
        )

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def describe_hardware() -> str:
    mem = psutil.virtual_memory().total / (1024 ** 3)
    return (
        f"{platform.platform()} | cpu={platform.processor() or platform.machine()} "
        f"cores={psutil.cpu_count(logical=False)}/{psutil.cpu_count(logical=True)} "
        f"ram={mem:.1f}GiB | torch={torch.__version__} threads={torch.get_num_threads()}"
    )


def benchmark(
    pipeline: StreamingPipeline,
    frames: Sequence[Frame],
    warmup: int = 50,
    measured: int = 500,
    progress: bool = True,
    config: Optional[Dict[str, Any]] = None,
) -> LatencyReport:
    """
    Time pipeline.step() frame by frame on one stream. Frames are cycled when
    the video is shorter than warmup + measured; the stream is reset at each
    wrap, outside the timed region.
    """
    if warmup < 0 or measured < 1:
        raise InvalidInputError("benchmark needs warmup >= 0 and measured >= 1")
    if not frames:
        raise InvalidInputError("benchmark needs at least one frame")

    samples: List[float] = []
    pipeline.reset()
    with torch.inference_mode():
        for i in tqdm(range(warmup + measured), desc="Benchmark", disable=not progress):
            position = i % len(frames)
            if i and position == 0:
                pipeline.reset()
            try:
                t0 = time.perf_counter()
                pipeline.step(frames[position])
                elapsed_ms = (time.perf_counter() - t0) * 1000.0
            except Exception as e:
                partial = LatencyReport.from_samples(samples, warmup=warmup) if samples else None
                raise BenchmarkAbortedError(
                    f"Pipeline failed at frame {i + 1} ({len(samples)} measured samples so far): {e}", partial=partial
                ) from e
            if i >= warmup:
                samples.append(elapsed_ms)

    report = LatencyReport.from_samples(
        samples,
        warmup=warmup,
        hardware=describe_hardware(),
        rss_mb=psutil.Process().memory_info().rss / (1024 * 1024),
        config=config or {},
    )
    logger.info(
        f"Latency over {report.measured} frames: mean {report.mean_ms:.2f} ms, p95 {report.p95_ms:.2f} ms, {report.fps:.1f} FPS"
    )
    return report
