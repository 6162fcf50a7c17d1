"""
Logging Setup Module
====================

Applies configs/logger_config.yaml through logging.config.dictConfig,
redirecting the file handler to a per-run log file.

Used by the CLI (one file per command run) and by the pytest session
(one file per run, or per xdist worker).

Example:
    >>> from utils.log_config import configure_logging
    >>> configure_logging(Path("out/logs"), "solid_20250101_120000.log")
"""

import copy
import logging
import logging.config
from datetime import datetime
from pathlib import Path
from typing import Optional

from yaml import safe_load

_logger = logging.getLogger(__name__)

LOGGER_CONFIG_PATH = Path(__file__).resolve().parent.parent / 'configs' / 'logger_config.yaml'


def timestamped_log_name(prefix: str) -> str:
    """`<prefix>_YYYYMMDD_HHMMSS.log`"""
    ts = datetime.now().strftime("%Y%m%d_%H%M%S")
    return f"{prefix}_{ts}.log"


def configure_logging(log_dir: Path, filename: str, console_level: Optional[str] = None) -> Path:
    """
    Configure root logging from the YAML template.

    Args:
        log_dir: Directory for the log file (created if missing).
        filename: Log file name inside log_dir.
        console_level: Optional override for the console handler level.

    Returns:
        Path: The log file in use.

    Raises:
        KeyError: If the YAML template has no 'file' handler.
    """
    log_dir = Path(log_dir)
    log_dir.mkdir(parents=True, exist_ok=True)
    log_file_path = log_dir / filename

    with open(LOGGER_CONFIG_PATH) as f:
        config = safe_load(f)

    # Work on a copy (each process mutates its own)
    cfg = copy.deepcopy(config)

    handlers = cfg.get("handlers", {})
    if "file" not in handlers:
        raise KeyError("Logging YAML must define a 'file' handler")
    handlers["file"]["filename"] = str(log_file_path)
    if console_level and "console" in handlers:
        handlers["console"]["level"] = console_level.upper()

    logging.config.dictConfig(config=cfg)
    _logger.info(f"Logging configured | File: {log_file_path}")
    return log_file_path
