"""
Training loop: cached frame preparation, AdaLEA + ranking objective,
per-epoch ATTC refresh, epoch logs and checkpoints.
"""

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import torch
from tqdm import tqdm

from rare import SCHEMA_VERSION
from rare.config import AppConfig
from rare.data.loader import VideoRecord
from rare.data.schema import VideoAnnotation
from rare.detection.backend import DetectorBackend
from rare.evaluation.metrics import MetricsReport, Result, RiskTimeline, evaluate_results
from rare.losses import AttentionLabels, LossBreakdown, total_loss, video_attention_labels, video_loss, video_ranking_loss
from rare.model.prepare import PreparedVideo, prepare_frame, stack_video
from rare.model.rare import RareModel
from rare.training.progress import ProgressReporter
from rare.utils.errors import CheckpointError, InvalidInputError, SchemaValidationError
from rare.utils.io import atomic_torch_save, atomic_write_json, read_json

logger = logging.getLogger("rare.training")

CHECKPOINT_NAME = "latest.pt"


@dataclass(frozen=True)
class PreparedSample:
    annotation: VideoAnnotation
    video: PreparedVideo
    labels: Tuple[Optional[AttentionLabels], ...]

    @property
    def num_frames(self) -> int:
        return len(self.video)


@dataclass
class TrainingResult:
    epochs: int
    final_loss: Optional[LossBreakdown]
    metrics: Dict[str, Any]
    attc: float
    checkpoint: Path
    history: List[Dict[str, Any]] = field(default_factory=list)


@dataclass
class Checkpoint:
    model: RareModel
    config: AppConfig
    epoch: int
    attc: float
    history: List[Dict[str, Any]]


def configure_determinism(seed: int, deterministic: bool) -> None:
    torch.manual_seed(seed)
    if deterministic:
        torch.set_num_threads(1)
        torch.use_deterministic_algorithms(True, warn_only=True)


def prepare_video(
    detector: DetectorBackend,
    record: VideoRecord,
    cfg: AppConfig,
    with_images: Optional[bool] = None,
) -> PreparedSample:
    """Detect every frame once and keep the parameter-free features for all epochs."""
    if with_images is None:
        with_images = detector.name != "synthetic"
    ann = record.annotation
    frames = []
    with torch.no_grad():
        for index in range(1, ann.num_frames + 1):
            frame = record.source.frame(index, with_image=True) if with_images else ann.as_frame(index)
            frames.append(prepare_frame(detector.detect(frame), cfg.model))
    labels = video_attention_labels([f.boxes for f in frames], ann, cfg.detector.input_size, cfg.loss.iou_threshold)
    return PreparedSample(ann, stack_video(frames), tuple(labels))


def prepare_samples(
    detector: DetectorBackend,
    records: Sequence[VideoRecord],
    cfg: AppConfig,
    workers: int = 1,
) -> List[PreparedSample]:
    # external detectors keep per-call hook state, so only the oracle runs threaded
    if workers > 1 and detector.name == "synthetic":
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(lambda r: prepare_video(detector, r, cfg), records))
    return [prepare_video(detector, r, cfg) for r in records]


def score_samples(model: RareModel, samples: Sequence[PreparedSample], input_size: int) -> List[Result]:
    """Batched forward of every sample into (RiskTimeline, annotation) pairs."""
    results: List[Result] = []
    was_training = model.training
    model.eval()
    with torch.no_grad():
        for sample in samples:
            out = model.forward_video(sample.video)
            timeline = RiskTimeline(
                video_id=sample.annotation.video_id,
                scores=out.risks.detach().double().numpy(),
                attention=[out.frame_scores(t).detach().double().numpy() for t in range(sample.num_frames)],
                boxes=[f.boxes for f in sample.video.frames],
                input_size=input_size,
            )
            results.append((timeline, sample.annotation))
    model.train(was_training)
    return results


def metrics_summary(report: MetricsReport) -> Dict[str, Any]:
    return {
        "ap": report.ap,
        "mtta": report.mtta,
        "attention_top1_rate": report.attention_top1_rate,
        f"tta_at_{report.threshold:g}": report.tta_at_threshold,
    }


class Trainer:
    """
    Momentum-SGD over video batches. The detector is frozen, so frames are
    prepared once; each epoch ends with a training-set evaluation whose TTA
    becomes the ATTC of the next epoch's AdaLEA weights.
    """

    def __init__(
        self,
        cfg: AppConfig,
        detector: DetectorBackend,
        run_dir: Path,
        reporter: Optional[ProgressReporter] = None,
    ):
        self.cfg = cfg
        self.detector = detector
        self.run_dir = Path(run_dir)
        self.reporter = reporter or ProgressReporter()
        configure_determinism(cfg.training.seed, cfg.training.deterministic)
        self.model = RareModel.from_config(cfg)
        self.optimizer = torch.optim.SGD(
            self.model.parameters(), lr=cfg.training.learning_rate, momentum=cfg.training.momentum
        )
        self.attc = 0.0
        self.history: List[Dict[str, Any]] = []

    @property
    def checkpoint_path(self) -> Path:
        return self.run_dir / "checkpoints" / CHECKPOINT_NAME

    def prepare(self, records: Sequence[VideoRecord]) -> List[PreparedSample]:
        t0 = time.time()
        workers = 1 if self.cfg.training.deterministic else max(1, self.cfg.training.prefetch_workers)
        self.reporter.on_stage("prepare_start", {"videos": len(records), "workers": workers})
        samples = prepare_samples(self.detector, records, self.cfg, workers)
        self.reporter.on_prepare_done(len(samples), sum(s.num_frames for s in samples), time.time() - t0)
        return samples

    def _order(self, count: int, epoch: int) -> List[int]:
        generator = torch.Generator().manual_seed(self.cfg.training.seed * 100003 + epoch)
        return torch.randperm(count, generator=generator).tolist()

    def batch_loss(self, batch: Sequence[PreparedSample]) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        """(objective, mean AdaLEA term, mean ranking term) for one batch of videos."""
        loss_cfg = self.cfg.loss
        adalea_terms, ranking_terms = [], []
        for sample in batch:
            out = self.model.forward_video(sample.video)
            adalea_terms.append(video_loss(out.risks, sample.annotation, self.attc, loss_cfg.alpha))
            attention = [out.frame_scores(t) for t in range(sample.num_frames)]
            ranking, frames = video_ranking_loss(attention, sample.labels, loss_cfg.margin, loss_cfg.literal_eq5)
            if frames:
                ranking_terms.append(ranking)
        adalea = torch.stack(adalea_terms).mean()
        ranking = torch.stack(ranking_terms).mean() if ranking_terms else adalea.new_zeros(())
        return adalea + loss_cfg.gamma * ranking, adalea, ranking

    def train_epoch(self, samples: Sequence[PreparedSample], epoch: int) -> LossBreakdown:
        t_cfg, loss_cfg = self.cfg.training, self.cfg.loss
        order = self._order(len(samples), epoch)
        batches = [order[i : i + t_cfg.batch_size] for i in range(0, len(order), t_cfg.batch_size)]
        adalea_sum = ranking_sum = 0.0
        self.model.train()
        bar = tqdm(batches, desc=f"Epoch {epoch}", disable=not self.cfg.output.progress)
        for b, indices in enumerate(bar, start=1):
            objective, adalea, ranking = self.batch_loss([samples[i] for i in indices])
            if not torch.isfinite(objective):
                raise InvalidInputError(f"Non-finite loss at epoch {epoch}, batch {b}")
            self.optimizer.zero_grad()
            objective.backward()
            if t_cfg.grad_clip_norm > 0:
                torch.nn.utils.clip_grad_norm_(self.model.parameters(), t_cfg.grad_clip_norm)
            self.optimizer.step()
            adalea_sum += float(adalea)
            ranking_sum += float(ranking)
            bar.set_postfix(loss=f"{float(objective):.4f}")
            self.reporter.on_batch_end(epoch, b, len(batches), float(objective))
        return total_loss(
            adalea_sum / len(batches),
            ranking_sum / len(batches),
            loss_cfg.gamma,
            loss_cfg.margin,
            loss_cfg.literal_eq5,
        )

    def evaluate(self, samples: Sequence[PreparedSample]) -> Optional[MetricsReport]:
        if not any(s.annotation.is_positive for s in samples):
            logger.warning("Training set has no positive videos; metrics and ATTC refresh skipped")
            return None
        results = score_samples(self.model, samples, self.cfg.detector.input_size)
        return evaluate_results(results, self.cfg.training.attc_threshold, self.cfg.loss.iou_threshold)

    def save_checkpoint(self, epoch: int) -> Path:
        payload = {
            "schema_version": SCHEMA_VERSION,
            "model_state": self.model.state_dict(),
            "config": self.cfg.to_dict(),
            "history": self.history,
            "epoch": epoch,
            "attc": self.attc,
        }
        path = atomic_torch_save(self.checkpoint_path, payload)
        self.reporter.on_checkpoint(epoch, path)
        return path

    def write_epoch_log(self, epoch: int, loss: LossBreakdown, metrics: Dict[str, Any]) -> Path:
        return atomic_write_json(
            self.run_dir / "logs" / f"epoch_{epoch:04d}.json",
            {
                "epoch": epoch,
                "loss": loss.to_dict(),
                "metrics": metrics,
                "attc": self.attc,
                "config": self.cfg.to_dict(),
            },
        )

    def fit(self, samples: Sequence[PreparedSample]) -> TrainingResult:
        if not samples:
            raise InvalidInputError("Training needs at least one video")
        epochs = self.cfg.training.epochs
        t0 = time.time()
        final: Optional[LossBreakdown] = None
        metrics: Dict[str, Any] = {}
        path = self.save_checkpoint(0) if epochs == 0 else self.checkpoint_path
        for epoch in range(1, epochs + 1):
            self.reporter.on_epoch_start(epoch, epochs, self.attc)
            final = self.train_epoch(samples, epoch)
            report = self.evaluate(samples)
            if report is not None:
                metrics = metrics_summary(report)
                self.attc = report.tta_at_threshold
            self.history.append({"epoch": epoch, "loss": final.to_dict(), "metrics": metrics, "attc": self.attc})
            self.write_epoch_log(epoch, final, metrics)
            self.reporter.on_epoch_end(epoch, epochs, final.to_dict(), metrics, self.attc)
            path = self.save_checkpoint(epoch)
        self.reporter.on_summary(epochs, final.total if final else float("nan"), int(time.time() - t0))
        return TrainingResult(epochs, final, metrics, self.attc, path, list(self.history))


def load_checkpoint(path: Path) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"Checkpoint not found: {path}")
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as e:
        raise CheckpointError(f"Cannot read checkpoint {path}: {e}") from e
    if not isinstance(payload, dict) or payload.get("schema_version") != SCHEMA_VERSION:
        found = payload.get("schema_version") if isinstance(payload, dict) else None
        raise CheckpointError(f"Checkpoint {path} has schema_version {found!r}, expected {SCHEMA_VERSION!r}")
    try:
        cfg = AppConfig.from_dict(payload["config"])
        model = RareModel.from_config(cfg)
        model.load_state_dict(payload["model_state"])
    except (KeyError, RuntimeError) as e:
        raise CheckpointError(f"Checkpoint {path} does not match its stored config: {e}") from e
    model.eval()
    return Checkpoint(model, cfg, int(payload.get("epoch", 0)), float(payload.get("attc", 0.0)), list(payload.get("history", [])))


def read_epoch_log(path: Path) -> Dict[str, Any]:
    """Load an epoch log and re-check total = adalea + gamma * ranking."""
    doc = read_json(path)
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise SchemaValidationError(f"{path}: schema_version {doc.get('schema_version')!r}, expected {SCHEMA_VERSION!r}")
    try:
        loss = doc["loss"]
        expected = loss["adalea"] + loss["gamma"] * loss["ranking"]
        total = loss["total"]
    except KeyError as e:
        raise SchemaValidationError(f"{path}: missing loss field {e}") from e
    if not math.isclose(total, expected, rel_tol=0.0, abs_tol=1e-9):
        raise SchemaValidationError(f"{path}: loss total {total} != adalea + gamma*ranking = {expected}")
    return doc
