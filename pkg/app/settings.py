"""
ShellRig Service Settings
"""

import logging
import os
from typing import Optional

# Environment overrides for deployment; local runs use the defaults
DEFAULT_OUTPUT_DIR = "results"
LOG_LEVEL = os.environ.get("SHELLRIG_LOG_LEVEL", "INFO").upper()
N_JOBS = int(os.environ.get("SHELLRIG_N_JOBS", "1"))

cors_origins_env = os.environ.get("CORS_ORIGINS", "")
if cors_origins_env:
    CORS_ORIGINS = [origin.strip() for origin in cors_origins_env.split(",") if origin.strip()]
else:
    CORS_ORIGINS = ["http://localhost:3000", "http://localhost:5173"]

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def output_dir(configured: Optional[str] = None) -> str:
    """SHELLRIG_OUTPUT_DIR, read per call, takes precedence over [output].dir"""
    return os.environ.get("SHELLRIG_OUTPUT_DIR") or configured or DEFAULT_OUTPUT_DIR


def configure_logging(level: str = LOG_LEVEL):
    """Root logging setup shared by the CLI and the API"""
    logging.basicConfig(level=getattr(logging, level.upper(), logging.INFO), format=LOG_FORMAT, force=True)
