import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import torch

from rare.config import AppConfig
from rare.data.convert import convert_dataset
from rare.data.loader import VideoRecord, dataset_name, load_dataset, summarize
from rare.data.synthetic import generate_synthetic
from rare.detection.backend import DetectorBackend, build_detector
from rare.detection.types import Detection, Frame
from rare.evaluation.benchmark import LatencyReport, benchmark
from rare.evaluation.metrics import RiskTimeline, evaluate_results
from rare.model.prepare import prepare_frame
from rare.model.rare import RareModel, StreamState
from rare.training.progress import ConsoleProgressReporter, JsonFileProgressReporter, MultiProgressReporter
from rare.training.trainer import CHECKPOINT_NAME, Trainer, TrainingResult, load_checkpoint, prepare_samples, score_samples
from rare.utils.errors import InvalidInputError
from rare.utils.io import JsonlStatusWriter, atomic_write_json, get_unique_run_dir
from rare.visualize import draw_overlay, save_risk_curve

logger = logging.getLogger("rare.pipeline")

ABLATION_VARIANTS: Tuple[Tuple[str, Dict[str, Any]], ...] = (
    ("full", {}),
    ("no_backbone", {"Model.use_backbone_roi": False}),
    ("no_neck", {"Model.use_neck_roi": False}),
    ("no_ranking", {"Loss.gamma": 0.0}),
)


@dataclass(frozen=True)
class FrameResult:
    frame_index: int
    risk: float
    attention: np.ndarray
    detections: Tuple[Detection, ...]


class RarePipeline:
    """
    Streaming inference: detect -> RoI/encode -> scene step -> fuse ->
    queue/classify, one frame at a time. reset() starts a new video.
    """

    def __init__(self, detector: DetectorBackend, model: RareModel, cfg: AppConfig):
        self.detector = detector
        self.model = model.eval()
        self.cfg = cfg
        self.state: StreamState = model.initial_state()

    def reset(self) -> None:
        self.state = self.model.initial_state()

    def step(self, frame: Frame) -> FrameResult:
        with torch.no_grad():
            output = self.detector.detect(frame)
            prepared = prepare_frame(output, self.cfg.model)
            self.state, out = self.model.step(self.state, prepared)
        return FrameResult(
            frame_index=frame.index,
            risk=out.score.value,
            attention=out.attention.detach().double().numpy(),
            detections=prepared.detections,
        )

    def run_video(self, frames: Iterable[Frame], video_id: str = "") -> RiskTimeline:
        self.reset()
        results = [self.step(frame) for frame in frames]
        if not results:
            raise InvalidInputError(f"[{video_id}] run_video needs at least one frame")
        return RiskTimeline(
            video_id=video_id,
            scores=np.array([r.risk for r in results]),
            attention=[r.attention for r in results],
            boxes=[tuple(d.box for d in r.detections) for r in results],
            input_size=self.cfg.detector.input_size,
        )


def _needs_images(cfg: AppConfig) -> bool:
    return cfg.detector.backend != "synthetic"


def _checkpoint_path(cfg: AppConfig, checkpoint: Optional[str]) -> Path:
    chosen = checkpoint or cfg.evaluation.checkpoint
    return Path(chosen) if chosen else cfg.output_path / "checkpoints" / CHECKPOINT_NAME


def _load_model(cfg: AppConfig, checkpoint: Optional[str]) -> Tuple[AppConfig, RareModel]:
    """Restore a checkpoint; detector and model sections come from the checkpoint, the rest from cfg."""
    ckpt = load_checkpoint(_checkpoint_path(cfg, checkpoint))
    merged = replace(cfg, detector=ckpt.config.detector, model=ckpt.config.model)
    return merged, ckpt.model


def _pick_video(records: Sequence[VideoRecord], video_id: Optional[str]) -> VideoRecord:
    if not records:
        raise InvalidInputError("Dataset split is empty")
    if video_id is None:
        positives = [r for r in records if r.annotation.is_positive]
        return positives[0] if positives else records[0]
    for record in records:
        if record.annotation.video_id == video_id:
            return record
    raise InvalidInputError(f"Video '{video_id}' not found in split")


def run_generate_data(
    cfg: AppConfig,
    root: Optional[Path] = None,
    status_file: Optional[Path] = None,
) -> Dict[str, Dict[str, int]]:
    """Write the synthetic dataset; returns per-split counts."""
    status = JsonlStatusWriter(status_file, "pipeline_stage")
    target = Path(root or cfg.data.root)
    status("generate_start", root=str(target))
    counts = generate_synthetic(cfg.synthetic, target, progress=cfg.output.progress)
    status("generate_done", counts=counts)
    return counts


def run_convert(
    cfg: AppConfig,
    fmt: str,
    source: Path,
    root: Optional[Path] = None,
    status_file: Optional[Path] = None,
) -> Dict[str, Dict[str, int]]:
    """Convert a DAD or CCD release into the loader layout; returns per-split counts."""
    status = JsonlStatusWriter(status_file, "pipeline_stage")
    target = Path(root or cfg.data.root)
    status("convert_start", format=fmt, source=str(source), root=str(target))
    counts = convert_dataset(fmt, Path(source), target, progress=cfg.output.progress)
    status("convert_done", counts=counts)
    return counts


def run_train(
    cfg: AppConfig,
    run_dir: Optional[Path] = None,
    status_file: Optional[Path] = None,
) -> TrainingResult:
    """
    Train on the train split of Data.root. Checkpoints, epoch logs and
    status.jsonl go to run_dir (default Output.output_dir).
    """
    status = JsonlStatusWriter(status_file, "pipeline_stage")
    run_dir = Path(run_dir or cfg.output_path)
    status("train_load_start", root=cfg.data.root)
    records = load_dataset(Path(cfg.data.root), "train", check_frames=_needs_images(cfg))
    summary = summarize(records, "train", dataset_name(Path(cfg.data.root), "train"))
    status("train_load_done", **summary)

    reporter = MultiProgressReporter([
        ConsoleProgressReporter(logger),
        JsonFileProgressReporter(run_dir / "status.jsonl"),
    ])
    trainer = Trainer(cfg, build_detector(cfg.detector), run_dir, reporter)
    logger.info(f"Model has {trainer.model.num_parameters():,} parameters")
    samples = trainer.prepare(records)
    status("train_start", epochs=cfg.training.epochs, videos=len(samples))
    result = trainer.fit(samples)
    status("train_done", checkpoint=str(result.checkpoint), attc=result.attc)
    return result


def run_evaluate(
    cfg: AppConfig,
    checkpoint: Optional[str] = None,
    split: Optional[str] = None,
    status_file: Optional[Path] = None,
) -> Dict[str, Any]:
    """Score a split with a checkpoint and write metrics.json; returns the document."""
    status = JsonlStatusWriter(status_file, "pipeline_stage")
    cfg, model = _load_model(cfg, checkpoint)
    split = split or cfg.data.eval_split
    root = Path(cfg.data.root)
    records = load_dataset(root, split, check_frames=_needs_images(cfg))
    summary = summarize(records, split, dataset_name(root, split))
    status("evaluate_prepare_start", split=split, videos=len(records))
    samples = prepare_samples(build_detector(cfg.detector), records, cfg)
    results = score_samples(model, samples, cfg.detector.input_size)
    report = evaluate_results(results, cfg.evaluation.threshold, cfg.loss.iou_threshold)
    doc = {
        **report.to_dict(),
        "split": split,
        "dataset": summary,
        "checkpoint": str(_checkpoint_path(cfg, checkpoint)),
        "config": cfg.to_dict(),
    }
    path = atomic_write_json(cfg.output_path / "metrics.json", doc)
    status("evaluate_done", path=str(path), ap=report.ap, mtta=report.mtta)
    logger.info(f"[{split}] AP {report.ap:.4f}  mTTA {report.mtta:.3f}s  top-1 attention {report.attention_top1_rate:.3f}")
    return doc


def run_bench(
    cfg: AppConfig,
    checkpoint: Optional[str] = None,
    video_id: Optional[str] = None,
    status_file: Optional[Path] = None,
) -> LatencyReport:
    """Time the streaming pipeline on one video of the evaluation split and write latency.json."""
    status = JsonlStatusWriter(status_file, "pipeline_stage")
    if _checkpoint_path(cfg, checkpoint).is_file():
        cfg, model = _load_model(cfg, checkpoint)
    else:
        logger.warning("No checkpoint found; timing an untrained model (latency does not depend on weights)")
        torch.manual_seed(cfg.training.seed)
        model = RareModel.from_config(cfg)
    records = load_dataset(Path(cfg.data.root), cfg.data.eval_split, check_frames=_needs_images(cfg))
    record = _pick_video(records, video_id)
    frames: List[Frame] = list(record.source.frames(with_image=_needs_images(cfg)))
    pipeline = RarePipeline(build_detector(cfg.detector), model, cfg)
    status("bench_start", video_id=record.annotation.video_id, frames=len(frames))
    report = benchmark(
        pipeline,
        frames,
        warmup=cfg.benchmark.warmup,
        measured=cfg.benchmark.measured,
        progress=cfg.output.progress,
        config=cfg.to_dict(),
    )
    path = atomic_write_json(cfg.output_path / "latency.json", report.to_dict())
    status("bench_done", path=str(path), mean_ms=report.mean_ms, fps=report.fps)
    return report


def run_demo(
    cfg: AppConfig,
    checkpoint: Optional[str] = None,
    video_id: Optional[str] = None,
    status_file: Optional[Path] = None,
) -> Path:
    """Render per-frame overlays and risk_curve.png for one video; returns the output directory."""
    status = JsonlStatusWriter(status_file, "pipeline_stage")
    cfg, model = _load_model(cfg, checkpoint)
    records = load_dataset(Path(cfg.data.root), cfg.data.eval_split, check_frames=_needs_images(cfg))
    record = _pick_video(records, video_id)
    ann = record.annotation
    out_dir = get_unique_run_dir(cfg.output_path / "demo" / ann.video_id)
    with_images = record.source.directory.is_dir()
    pipeline = RarePipeline(build_detector(cfg.detector), model, cfg)
    status("demo_start", video_id=ann.video_id, out_dir=str(out_dir))

    pipeline.reset()
    scores: List[float] = []
    for frame in record.source.frames(with_image=with_images):
        result = pipeline.step(frame)
        scores.append(result.risk)
        overlay = draw_overlay(frame.image, frame.size, result.detections, result.attention, result.risk, cfg.detector.input_size)
        out_dir.mkdir(parents=True, exist_ok=True)
        overlay.save(out_dir / f"overlay_{frame.index:05d}.png", format="PNG")

    save_risk_curve(out_dir / "risk_curve.png", scores, ann.fps, ann.accident_frame, cfg.evaluation.threshold, title=ann.video_id)
    atomic_write_json(
        out_dir / "timeline.json",
        {"video_id": ann.video_id, "fps": ann.fps, "accident_frame": ann.accident_frame, "scores": scores, "config": cfg.to_dict()},
    )
    status("demo_done", out_dir=str(out_dir), frames=len(scores))
    logger.info(f"Demo for {ann.video_id} written to {out_dir}")
    return out_dir


def run_ablate(
    cfg: AppConfig,
    variants: Sequence[Tuple[str, Dict[str, Any]]] = ABLATION_VARIANTS,
    status_file: Optional[Path] = None,
) -> Dict[str, Any]:
    """Train each variant on the same data and collect training-set metrics into ablation.json."""
    status = JsonlStatusWriter(status_file, "pipeline_stage")
    rows = []
    for name, overrides in variants:
        status("ablate_variant_start", variant=name)
        variant_cfg = cfg.with_overrides(overrides)
        result = run_train(variant_cfg, run_dir=cfg.output_path / "ablate" / name)
        rows.append({
            "name": name,
            "overrides": dict(overrides),
            "ap": result.metrics.get("ap"),
            "mtta": result.metrics.get("mtta"),
            "attention_top1_rate": result.metrics.get("attention_top1_rate"),
            "final_loss": result.final_loss.total if result.final_loss else None,
        })
        status("ablate_variant_done", variant=name, ap=rows[-1]["ap"])
    doc = {"variants": rows, "config": cfg.to_dict()}
    atomic_write_json(cfg.output_path / "ablation.json", doc)
    return doc
