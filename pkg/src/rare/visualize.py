"""
Demo rendering: per-frame overlays and the risk curve of one video.
"""

import logging
from pathlib import Path
from typing import List, Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.figure import Figure  # noqa: E402
from PIL import Image, ImageDraw  # noqa: E402

from rare.detection.types import Detection  # noqa: E402

logger = logging.getLogger("rare.visualize")

DETECTION_COLOR = (0, 200, 0)
FIRST_RANK_COLOR = (220, 0, 0)
SECOND_RANK_COLOR = (255, 140, 0)
BLANK_COLOR = (96, 96, 96)


def attention_ranks(scores: Sequence[float]) -> List[int]:
    """Indices of the highest and second-highest attention scores (fewer for small frames)."""
    order = np.argsort(-np.asarray(scores, dtype=np.float64), kind="stable")
    return [int(i) for i in order[:2]]


def draw_overlay(
    image: Optional[np.ndarray],
    frame_size: Sequence[int],
    detections: Sequence[Detection],
    attention: Sequence[float],
    risk: float,
    input_size: int,
) -> Image.Image:
    """
    Draw detections on the frame: all boxes green, first attention rank red,
    second rank orange, risk in the top-left corner. Detections are in
    detector-input pixels and are scaled back to the frame.
    """
    width, height = int(frame_size[0]), int(frame_size[1])
    if image is None:
        canvas = Image.new("RGB", (width, height), BLANK_COLOR)
    else:
        canvas = Image.fromarray(np.asarray(image, dtype=np.uint8)).convert("RGB")
    draw = ImageDraw.Draw(canvas)
    sx, sy = width / input_size, height / input_size
    ranks = attention_ranks(attention) if len(attention) else []
    rank_colors = (FIRST_RANK_COLOR, SECOND_RANK_COLOR)
    plain = [(i, DETECTION_COLOR, 1) for i in range(len(detections)) if i not in ranks]
    # ranked boxes are drawn last, first rank on top
    ranked = [(i, rank_colors[r], 3) for r, i in reversed(list(enumerate(ranks)))]
    for i, color, line in plain + ranked:
        x1, y1, x2, y2 = detections[i].box.scaled(sx, sy).as_tuple()
        draw.rectangle((x1, y1, x2, y2), outline=color, width=line)
    draw.rectangle((0, 0, 92, 14), fill=(0, 0, 0))
    draw.text((3, 2), f"risk {risk:.3f}", fill=(255, 255, 255))
    return canvas


def risk_curve_figure(
    scores: Sequence[float],
    fps: float,
    accident_frame: Optional[int],
    threshold: float,
    title: str = "",
) -> Figure:
    """Risk over time: blue curve, red dotted onset marker, black dotted threshold."""
    scores = np.asarray(scores, dtype=np.float64)
    seconds = np.arange(1, scores.size + 1) / fps
    fig, ax = plt.subplots(figsize=(6.4, 3.2))
    ax.plot(seconds, scores, color="tab:blue", linewidth=2, label="risk")
    if accident_frame is not None:
        ax.axvline(accident_frame / fps, color="red", linestyle=":", linewidth=2, label="accident")
    ax.axhline(threshold, color="black", linestyle=":", linewidth=1.5, label=f"threshold {threshold:g}")
    ax.set_xlim(0.0, max(seconds[-1] if scores.size else 0.0, 1.0 / fps))
    ax.set_ylim(0.0, 1.0)
    ax.set_xlabel("time (s)")
    ax.set_ylabel("risk")
    if title:
        ax.set_title(title)
    ax.legend(loc="upper left", fontsize=8)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    return fig


def save_risk_curve(
    path: Path,
    scores: Sequence[float],
    fps: float,
    accident_frame: Optional[int],
    threshold: float,
    title: str = "",
) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig = risk_curve_figure(scores, fps, accident_frame, threshold, title)
    try:
        fig.savefig(path, dpi=100)
    finally:
        plt.close(fig)
    logger.debug(f"Risk curve written to {path}")
    return path
