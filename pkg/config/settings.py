"""
Django settings for the manypriors project.

The project has no web surface: Django provides the command-line front end
(management commands), configuration, logging and the test runner.
Every tunable below can be overridden from the environment or a `.env` file.
"""

import os
from pathlib import Path

from dotenv import load_dotenv

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

load_dotenv(BASE_DIR / ".env")

SECRET_KEY = os.getenv("DJANGO_SECRET_KEY", "manypriors-local-only")

DEBUG = os.getenv("DJANGO_DEBUG", "0") == "1"

ALLOWED_HOSTS: list[str] = []


# Application definition

INSTALLED_APPS = [
    "manypriors.apps.ManypriorsConfig",
]

# The codec never touches a database.
DATABASES: dict = {}

USE_TZ = True
TIME_ZONE = "UTC"


# Codec defaults. Command-line flags override these per invocation.

def _env(name, default, cast):
    return cast(os.getenv(f"MANYPRIORS_{name}", default))


MANYPRIORS = {
    "N_CDF": _env("N_CDF", 64, int),
    "C_L": _env("C_L", 256, int),
    "DELTA": _env("DELTA", 0.1, float),
    "SEED": _env("SEED", 0, int),
    "CPM_DEPTH": _env("CPM_DEPTH", 4, int),
    "LEARNING_RATE": _env("LEARNING_RATE", 0.001, float),
    "EVAL_EVERY": _env("EVAL_EVERY", 2500, int),
    "LR_DECAY": _env("LR_DECAY", 0.99, float),
    "PATIENCE": _env("PATIENCE", 2, int),
    "REVIVE_AFTER": _env("REVIVE_AFTER", 50, int),
    "REVIVE_TOP_K": _env("REVIVE_TOP_K", 8, int),
    "STEPS": _env("STEPS", 10000, int),
    "BENCH_RUNS": _env("BENCH_RUNS", 50, int),
}


# Logging

LOG_LEVEL = os.getenv("MANYPRIORS_LOG_LEVEL", "WARNING").upper()

LOGGING = {
    "version": 1,
    "disable_existing_loggers": False,
    "formatters": {
        "colored": {
            "()": "coloredlogs.ColoredFormatter",
            "fmt": "%(asctime)s %(name)s %(levelname)s %(message)s",
        },
    },
    "handlers": {
        "console": {
            "class": "logging.StreamHandler",
            "formatter": "colored",
        },
    },
    "loggers": {
        "manypriors": {
            "handlers": ["console"],
            "level": LOG_LEVEL,
            "propagate": False,
        },
    },
}
