import logging
import sys
from pathlib import Path
from typing import Optional

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s - %(message)s"
QUIET_LOGGERS = ("matplotlib", "PIL", "ultralytics")


def setup_logging(debug: bool = False, level: Optional[int] = None, log_file: Optional[Path] = None) -> None:
    """
    Configure root logging for the rare tool.

    Args:
        debug: DEBUG level when True, INFO otherwise.
        level: Explicit level; wins over debug.
        log_file: Also append records to this file (parent directories are created).
    """
    log_level = level if level is not None else (logging.DEBUG if debug else logging.INFO)

    # setup may run once per CLI invocation in the same process (tests); replace, don't stack
    root = logging.getLogger()
    for h in list(root.handlers):
        root.removeHandler(h)
        if isinstance(h, logging.FileHandler):
            h.close()

    formatter = logging.Formatter(fmt=LOG_FORMAT, datefmt="%H:%M:%S")
    console = logging.StreamHandler(stream=sys.stdout)
    console.setFormatter(formatter)
    root.addHandler(console)

    if log_file is not None:
        log_file = Path(log_file)
        log_file.parent.mkdir(parents=True, exist_ok=True)
        file_handler = logging.FileHandler(log_file, encoding="utf-8")
        file_handler.setFormatter(formatter)
        root.addHandler(file_handler)

    root.setLevel(log_level)
    for noisy in QUIET_LOGGERS:
        logging.getLogger(noisy).setLevel(logging.WARNING)
