import json
import os
import tempfile
import time
from pathlib import Path
from typing import Any, Dict, Optional

import torch

from rare import SCHEMA_VERSION


def get_unique_run_dir(base_path: Path) -> Path:
    """
    Generates a unique directory path for run artifacts.
    If the base path exists, appends a counter (e.g., _1, _2) until a unique path is found.
    """
    run_dir = base_path
    counter = 0
    while run_dir.exists():
        counter += 1
        run_dir = Path(f"{base_path}_{counter}")
    return run_dir


def _atomic_replace(path: Path, write) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    os.close(fd)
    try:
        write(Path(tmp_name))
        os.replace(tmp_name, path)
    except BaseException:
        Path(tmp_name).unlink(missing_ok=True)
        raise
    return path


def atomic_write_json(path: Path, payload: Dict[str, Any]) -> Path:
    """Write a JSON document via temp file + rename; schema_version is added when missing."""
    doc = {"schema_version": SCHEMA_VERSION, **payload}
    text = json.dumps(doc, indent=2, sort_keys=True, ensure_ascii=False)
    return _atomic_replace(path, lambda tmp: tmp.write_text(text + "\n", encoding="utf-8"))


def atomic_torch_save(path: Path, obj: Any) -> Path:
    return _atomic_replace(path, lambda tmp: torch.save(obj, tmp))


def read_json(path: Path) -> Dict[str, Any]:
    return json.loads(Path(path).read_text(encoding="utf-8"))


class JsonlStatusWriter:
    """Appends one JSON event per line; failures to write never interrupt the caller."""

    def __init__(self, status_file: Optional[Path], event: str):
        self.status_file = Path(status_file) if status_file else None
        self.event = event

    def __call__(self, stage: str, **extras: Any) -> None:
        if not self.status_file:
            return
        try:
            self.status_file.parent.mkdir(parents=True, exist_ok=True)
            with self.status_file.open("a", encoding="utf-8") as f:
                payload = {"t": time.time(), "event": self.event, "stage": stage}
                if extras:
                    payload.update(extras)
                f.write(json.dumps(payload, ensure_ascii=False) + "\n")
        except Exception:
            pass
