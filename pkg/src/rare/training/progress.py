import json
import logging
import time
from pathlib import Path
from typing import Any, Dict, Optional, Sequence


class ProgressReporter:
    """Interface for reporting training progress; methods are no-ops by default."""
    def on_stage(self, stage: str, extras: Optional[Dict[str, Any]] = None) -> None: ...
    def on_prepare_done(self, videos: int, frames: int, elapsed_s: float) -> None: ...
    def on_epoch_start(self, epoch: int, total: int, attc: float) -> None: ...
    def on_batch_end(self, epoch: int, batch: int, total: int, loss: float) -> None: ...
    def on_epoch_end(self, epoch: int, total: int, loss: Dict[str, float], metrics: Dict[str, Any], attc: float) -> None: ...
    def on_checkpoint(self, epoch: int, path: Path) -> None: ...
    def on_summary(self, epochs: int, final_loss: float, elapsed_s: int) -> None: ...


class ConsoleProgressReporter(ProgressReporter):
    def __init__(self, logger: logging.Logger):
        self.logger = logger

    def on_stage(self, stage: str, extras: Optional[Dict[str, Any]] = None) -> None:
        msg = f"{stage}"
        if extras:
            msg += " " + json.dumps(extras, ensure_ascii=False)
        self.logger.info(msg)

    def on_prepare_done(self, videos: int, frames: int, elapsed_s: float) -> None:
        self.logger.info(f"Prepared {videos} videos ({frames} frames) in {elapsed_s:.1f}s")

    def on_epoch_start(self, epoch: int, total: int, attc: float) -> None:
        self.logger.info(f"[Epoch {epoch}/{total}] Start (ATTC {attc:.3f}s)")

    def on_batch_end(self, epoch: int, batch: int, total: int, loss: float) -> None:
        self.logger.debug(f"[Epoch {epoch}] batch {batch}/{total} loss {loss:.4f}")

    def on_epoch_end(self, epoch: int, total: int, loss: Dict[str, float], metrics: Dict[str, Any], attc: float) -> None:
        self.logger.info(
            f"[Epoch {epoch}/{total}] loss {loss['total']:.4f} (adalea {loss['adalea']:.4f}, ranking {loss['ranking']:.4f}) "
            f"AP {metrics.get('ap', 0.0):.3f} mTTA {metrics.get('mtta', 0.0):.2f}s "
            f"top1 {metrics.get('attention_top1_rate', 0.0):.3f} next ATTC {attc:.3f}s"
        )

    def on_checkpoint(self, epoch: int, path: Path) -> None:
        self.logger.info(f"Checkpoint for epoch {epoch} written to {path}")

    def on_summary(self, epochs: int, final_loss: float, elapsed_s: int) -> None:
        self.logger.info(f"Training summary: {epochs} epochs, final loss {final_loss:.6f}, elapsed {elapsed_s//60:02d}:{elapsed_s%60:02d}")


class JsonFileProgressReporter(ProgressReporter):
    def __init__(self, status_file: Path):
        self.status_file = status_file
        # truncate/create file
        try:
            self.status_file.parent.mkdir(parents=True, exist_ok=True)
            self.status_file.write_text("", encoding="utf-8")
        except Exception:
            pass

    def _write(self, event: Dict[str, Any]) -> None:
        try:
            with self.status_file.open("a", encoding="utf-8") as f:
                f.write(json.dumps(event, ensure_ascii=False) + "\n")
        except Exception:
            pass

    def on_stage(self, stage: str, extras: Optional[Dict[str, Any]] = None) -> None:
        ev = {"t": time.time(), "event": "stage", "stage": stage}
        if extras:
            ev.update(extras)
        self._write(ev)

    def on_prepare_done(self, videos: int, frames: int, elapsed_s: float) -> None:
        self._write({"t": time.time(), "event": "prepare_done", "videos": videos, "frames": frames, "elapsed_s": elapsed_s})

    def on_epoch_start(self, epoch: int, total: int, attc: float) -> None:
        self._write({"t": time.time(), "event": "epoch_start", "epoch": epoch, "total": total, "attc": attc})

    def on_batch_end(self, epoch: int, batch: int, total: int, loss: float) -> None:
        self._write({"t": time.time(), "event": "batch_end", "epoch": epoch, "batch": batch, "total": total, "loss": loss})

    def on_epoch_end(self, epoch: int, total: int, loss: Dict[str, float], metrics: Dict[str, Any], attc: float) -> None:
        self._write({"t": time.time(), "event": "epoch_end", "epoch": epoch, "total": total, "loss": loss, "metrics": metrics, "attc": attc})

    def on_checkpoint(self, epoch: int, path: Path) -> None:
        self._write({"t": time.time(), "event": "checkpoint", "epoch": epoch, "path": str(path)})

    def on_summary(self, epochs: int, final_loss: float, elapsed_s: int) -> None:
        self._write({"t": time.time(), "event": "summary", "epochs": epochs, "final_loss": final_loss, "elapsed_s": elapsed_s})


class MultiProgressReporter(ProgressReporter):
    """Forwards every event to each wrapped reporter."""

    def __init__(self, reporters: Sequence[ProgressReporter]):
        self.reporters = list(reporters)

    def on_stage(self, stage: str, extras: Optional[Dict[str, Any]] = None) -> None:
        for r in self.reporters:
            r.on_stage(stage, extras)

    def on_prepare_done(self, videos: int, frames: int, elapsed_s: float) -> None:
        for r in self.reporters:
            r.on_prepare_done(videos, frames, elapsed_s)

    def on_epoch_start(self, epoch: int, total: int, attc: float) -> None:
        for r in self.reporters:
            r.on_epoch_start(epoch, total, attc)

    def on_batch_end(self, epoch: int, batch: int, total: int, loss: float) -> None:
        for r in self.reporters:
            r.on_batch_end(epoch, batch, total, loss)

    def on_epoch_end(self, epoch: int, total: int, loss: Dict[str, float], metrics: Dict[str, Any], attc: float) -> None:
        for r in self.reporters:
            r.on_epoch_end(epoch, total, loss, metrics, attc)

    def on_checkpoint(self, epoch: int, path: Path) -> None:
        for r in self.reporters:
            r.on_checkpoint(epoch, path)

    def on_summary(self, epochs: int, final_loss: float, elapsed_s: int) -> None:
        for r in self.reporters:
            r.on_summary(epochs, final_loss, elapsed_s)
