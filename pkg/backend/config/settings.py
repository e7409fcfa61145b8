# config/settings.py
# Run defaults plus HBMC_* overrides read from backend/.env.

import logging
import os
from pathlib import Path

from dotenv import load_dotenv

_ENV_PATH = Path(__file__).resolve().parent.parent / ".env"
load_dotenv(_ENV_PATH)

SCHEMA_VERSION = 1

DEFAULT_BATCH_SIZE = 32
DEFAULT_ADAM_LR = 5e-4
DEFAULT_FINETUNE_LR = 5e-5
DEFAULT_RMSPROP_LR = 2.5e-4
DEFAULT_CHECKPOINT_EVERY = 500

CALIBRATION_BINS = 15
CALIBRATION_BINS_SMALL = 10
DEFAULT_BOOTSTRAP = 1000

# probabilities are floored here before any log
PMP_FLOOR = 1e-12

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def get_jobs(flag: int | None = None) -> int:
    """
    Worker count for simulation and validation fan-out.
    The --jobs flag wins; otherwise HBMC_JOBS from the environment; otherwise 1.
    """
    if flag is not None:
        return max(1, int(flag))
    env = (os.getenv("HBMC_JOBS") or "").strip()
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            logging.getLogger(__name__).warning("Ignoring non-integer HBMC_JOBS=%r", env)
    return 1


def get_output_root(flag: str | Path | None = None) -> Path:
    """Root directory for run outputs: --out, else HBMC_OUT, else ./runs."""
    if flag:
        return Path(flag)
    env = (os.getenv("HBMC_OUT") or "").strip()
    return Path(env) if env else Path("runs")


def get_log_level() -> int:
    """HBMC_LOG_LEVEL as a logging level (default INFO)."""
    name = (os.getenv("HBMC_LOG_LEVEL") or "INFO").strip().upper()
    level = logging.getLevelName(name)
    return level if isinstance(level, int) else logging.INFO


def configure_logging(level: int | None = None) -> None:
    """Install a single stream handler on the root logger. Safe to call more than once."""
    root = logging.getLogger()
    if not any(getattr(h, "_hbmc", False) for h in root.handlers):
        handler = logging.StreamHandler()
        handler.setFormatter(logging.Formatter(LOG_FORMAT))
        handler._hbmc = True
        root.addHandler(handler)
    root.setLevel(level if level is not None else get_log_level())
