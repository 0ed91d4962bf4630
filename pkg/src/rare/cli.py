import argparse
import logging
import os
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from dotenv import load_dotenv

from rare.config import AppConfig
from rare.data.convert import FORMATS
from rare.pipeline import run_ablate, run_bench, run_convert, run_demo, run_evaluate, run_generate_data, run_train
from rare.utils.errors import ConfigError, RareError
from rare.utils.io import atomic_write_json
from rare.utils.logging import setup_logging


def _parse_overrides(pairs: Sequence[str]) -> Dict[str, str]:
    overrides: Dict[str, str] = {}
    for pair in pairs:
        key, sep, value = pair.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"--set expects key=value, got '{pair}'")
        overrides[key.strip()] = value.strip()
    return overrides


def _write_error(output_dir: Path, command: str, error: BaseException) -> None:
    try:
        atomic_write_json(
            output_dir / "error.json",
            {"command": command, "error_type": type(error).__name__, "message": str(error)},
        )
    except OSError:
        logging.getLogger("rare.cli").warning(f"Could not write error.json to {output_dir}")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rare",
        description="Traffic accident anticipation: train, evaluate, benchmark and render demos.",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)

    def add_common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", type=str, default=None, help="Path to configuration file (default: rare.ini)")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                       help="Override a config key (key or Section.key); repeatable")
        p.add_argument("--status-file", type=str, default=None, help="Write incremental JSONL status to this file")
        p.add_argument("--debug", action="store_true", help="Enable debug output")
        p.add_argument("--log-file", type=str, default=None, help="Also append log records to this file")

    train_p = subparsers.add_parser("train", help="Train on the train split of Data.root.")
    add_common(train_p)

    eval_p = subparsers.add_parser("evaluate", help="Compute AP / mTTA for a checkpoint and write metrics.json.")
    eval_p.add_argument("--checkpoint", type=str, default=None, help="Checkpoint path (default: Evaluation.checkpoint)")
    eval_p.add_argument("--split", choices=("train", "test"), default=None, help="Split to evaluate (default: Data.eval_split)")
    add_common(eval_p)

    bench_p = subparsers.add_parser("bench", help="Measure per-frame latency of the streaming pipeline.")
    bench_p.add_argument("--checkpoint", type=str, default=None, help="Checkpoint path (optional)")
    bench_p.add_argument("--video-id", type=str, default=None, help="Video to stream (default: first positive)")
    add_common(bench_p)

    demo_p = subparsers.add_parser("demo", help="Render attention overlays and the risk curve of one video.")
    demo_p.add_argument("--checkpoint", type=str, default=None, help="Checkpoint path (default: Evaluation.checkpoint)")
    demo_p.add_argument("--video-id", type=str, default=None, help="Video to render (default: first positive)")
    add_common(demo_p)

    gen_p = subparsers.add_parser("generate-data", help="Write the synthetic collision dataset.")
    gen_p.add_argument("--root", type=str, default=None, help="Target directory (default: Data.root)")
    add_common(gen_p)

    convert_p = subparsers.add_parser("convert", help="Convert a DAD or CCD release (frames extracted) into the dataset layout.")
    convert_p.add_argument("--format", dest="dataset_format", choices=FORMATS, required=True, help="Source release")
    convert_p.add_argument("--source", type=str, required=True, help="Root directory of the release")
    convert_p.add_argument("--root", type=str, default=None, help="Target directory (default: Data.root)")
    add_common(convert_p)

    ablate_p = subparsers.add_parser("ablate", help="Train full / no-backbone / no-neck / no-ranking variants.")
    add_common(ablate_p)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    # Load .env once here (single entrypoint)
    load_dotenv()

    args = _build_parser().parse_args(argv)
    logger = logging.getLogger("rare.cli")
    fallback_dir = Path(os.environ.get("RARE_OUTPUT_DIR") or "runs")

    try:
        app_cfg = AppConfig.from_env_and_ini(args.config, overrides=_parse_overrides(args.overrides))
    except ConfigError as e:
        setup_logging(debug=args.debug, log_file=args.log_file)
        logger.error(f"Invalid configuration: {e}")
        _write_error(fallback_dir, args.command, e)
        return 2

    setup_logging(debug=args.debug or app_cfg.output.debug, log_file=args.log_file)
    status_path = Path(args.status_file).resolve() if args.status_file else None

    try:
        if args.command == "generate-data":
            counts = run_generate_data(app_cfg, Path(args.root) if args.root else None, status_file=status_path)
            logger.info(f"Synthetic dataset written: {counts}")
        elif args.command == "convert":
            counts = run_convert(
                app_cfg, args.dataset_format, Path(args.source), Path(args.root) if args.root else None, status_file=status_path
            )
            logger.info(f"{args.dataset_format.upper()} converted: {counts}")
        elif args.command == "train":
            result = run_train(app_cfg, status_file=status_path)
            logger.info(f"Training completed: {result.epochs} epochs, checkpoint {result.checkpoint}")
        elif args.command == "evaluate":
            doc = run_evaluate(app_cfg, checkpoint=args.checkpoint, split=args.split, status_file=status_path)
            logger.info(f"Evaluation completed: AP {doc['ap']:.4f}, mTTA {doc['mtta']:.3f}s")
        elif args.command == "bench":
            report = run_bench(app_cfg, checkpoint=args.checkpoint, video_id=args.video_id, status_file=status_path)
            logger.info(f"Benchmark completed: {report.mean_ms:.2f} ms/frame, {report.fps:.1f} FPS")
        elif args.command == "demo":
            out_dir = run_demo(app_cfg, checkpoint=args.checkpoint, video_id=args.video_id, status_file=status_path)
            logger.info(f"Demo completed: {out_dir}")
        elif args.command == "ablate":
            doc = run_ablate(app_cfg, status_file=status_path)
            for row in doc["variants"]:
                logger.info(f"{row['name']:>12}: AP {row['ap']}, top-1 attention {row['attention_top1_rate']}")
        return 0
    except RareError as e:
        logger.exception(f"{args.command} failed")
        _write_error(app_cfg.output_path, args.command, e)
        return 2 if isinstance(e, ConfigError) else 1


if __name__ == "__main__":
    raise SystemExit(main())
