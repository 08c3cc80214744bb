"""
Django settings for the quickdetect project.

quickdetect has no web surface and no database: Django provides the
settings layer, the management-command CLI and the test runner.
Numerical defaults are read from the environment (optionally through a
.env file) so that runs are reproducible from the shell.
"""

import os
from pathlib import Path
import logging
from dotenv import load_dotenv

# Load environment variables from .env file
load_dotenv()

ENV = os.getenv("QD_ENVIRONMENT", "prd")

# Setup logging
logging.basicConfig(
    level=logging.DEBUG if ENV == "dev" else logging.INFO,
    format="%(asctime)s %(levelname)s %(message)s",
    datefmt="%Y-%m-%d %H:%M:%S"
)
logger = logging.getLogger("quickdetect")


def log(msg):
    """Log a settings message."""
    logger.debug(msg)


# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

VERSION = (BASE_DIR / "VERSION").read_text(encoding="utf-8").strip() \
    if (BASE_DIR / "VERSION").exists() else "0.0.0"

log(f"Environment: {ENV}")

# Not used for anything security relevant, Django only insists on a value.
SECRET_KEY = os.getenv("DJANGO_SECRET_KEY", "quickdetect-local")
DEBUG = ENV == "dev"
ALLOWED_HOSTS = []

INSTALLED_APPS = [
    'quickdetect.changepoint',
]

# No persistence: reports are written to files by the management commands.
DATABASES = {}

USE_I18N = False
USE_TZ = True
TIME_ZONE = 'UTC'
DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'

# Integral-equation engine
QD_GRID_SIZE = int(os.getenv("QD_GRID_SIZE", "2000"))
# "log": cells of equal width in log(1+x); "uniform": equal cells
QD_GRID_SPACING = os.getenv("QD_GRID_SPACING", "log")
QD_DIRECT_SOLVE_LIMIT = int(os.getenv("QD_DIRECT_SOLVE_LIMIT", "4000"))
QD_RESIDUAL_RTOL = float(os.getenv("QD_RESIDUAL_RTOL", "1e-10"))
QD_PLATEAU_RTOL = float(os.getenv("QD_PLATEAU_RTOL", "1e-6"))
QD_PLATEAU_RUN = int(os.getenv("QD_PLATEAU_RUN", "10"))
QD_NU_LIMIT = int(os.getenv("QD_NU_LIMIT", "10000"))
QD_CALIBRATION_RTOL = float(os.getenv("QD_CALIBRATION_RTOL", "0.0025"))

# Monte Carlo
QD_SEED = int(os.getenv("QD_SEED", "0"))
QD_SEED_FROM_ENV = "QD_SEED" in os.environ
QD_WORKERS = int(os.getenv("QD_WORKERS", "4"))
QD_MC_BATCH = int(os.getenv("QD_MC_BATCH", "2000"))

log(f"QD_GRID_SIZE: {QD_GRID_SIZE} ({QD_GRID_SPACING} spacing)")
log(f"QD_DIRECT_SOLVE_LIMIT: {QD_DIRECT_SOLVE_LIMIT}")
log(f"QD_SEED: {QD_SEED} (from environment: {QD_SEED_FROM_ENV})")
log(f"QD_WORKERS: {QD_WORKERS}")
