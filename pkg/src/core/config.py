# src/core/config.py
"""
Settings for the toolkit.

Values come from a .env file (if present) and the environment, then fall
back to the defaults below. The CLI copies them into a RunConfig and lets
flags override them.
"""

import logging
import os
from dataclasses import dataclass
from pathlib import Path

from dotenv import load_dotenv

logger = logging.getLogger(__name__)

PACKAGE_DIR = Path(__file__).resolve().parent.parent
DEFAULT_DATA_DIR = PACKAGE_DIR / "data"


@dataclass(frozen=True)
class Settings:
    data_dir: Path = DEFAULT_DATA_DIR
    seed: int = 20240611
    tol: float = 1e-9
    samples: int = 50
    epsilon: int = 1
    log_level: str = "WARNING"
    show_progress: bool = True

    def data_path(self, name: str) -> Path:
        """Resolve a bundled file name (with or without .bvp) inside the data directory"""
        path = Path(name)
        if path.exists():
            return path
        candidate = self.data_dir / name
        if candidate.suffix != ".bvp" and not candidate.exists():
            candidate = candidate.with_suffix(".bvp")
        return candidate


def _as_bool(value: str) -> bool:
    return value.strip().lower() not in ("0", "false", "no", "off", "")


def load_config(env_file: str = None) -> Settings:
    """Read .env and BVPSYM_* variables into a frozen Settings object"""
    load_dotenv(env_file)

    data_dir = Path(os.getenv("BVPSYM_DATA_DIR", str(DEFAULT_DATA_DIR)))
    try:
        settings = Settings(
            data_dir=data_dir,
            seed=int(os.getenv("BVPSYM_SEED", "20240611")),
            tol=float(os.getenv("BVPSYM_TOL", "1e-9")),
            samples=int(os.getenv("BVPSYM_SAMPLES", "50")),
            epsilon=int(os.getenv("BVPSYM_EPSILON", "1")),
            log_level=os.getenv("BVPSYM_LOG_LEVEL", "WARNING").upper(),
            show_progress=_as_bool(os.getenv("BVPSYM_PROGRESS", "1")),
        )
    except ValueError as exc:
        logger.warning(f"⚠️ Bad BVPSYM_* value ({exc}); using defaults")
        settings = Settings(data_dir=data_dir)

    if not settings.data_dir.exists():
        logger.warning(f"⚠️ Data directory {settings.data_dir} does not exist")
    return settings
