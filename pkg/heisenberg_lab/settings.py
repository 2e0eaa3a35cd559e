import os
from pathlib import Path
from dotenv import load_dotenv

load_dotenv()

BASE_DIR = Path(__file__).resolve().parent.parent

SECRET_KEY = os.getenv("DJANGO_SECRET_KEY", "dev-secret-key")
DEBUG = os.getenv("DJANGO_DEBUG", "0") == "1"

ALLOWED_HOSTS = []

INSTALLED_APPS = [
    "django.contrib.contenttypes",
    "core",
    "analysis",
    "experiments",
    "exports",
]

DATABASES = {
    "default": {
        "ENGINE": "django.db.backends.sqlite3",
        "NAME": os.getenv("HEISLAB_DB_PATH", str(BASE_DIR / "db.sqlite3")),
    }
}

LANGUAGE_CODE = "ru-ru"
TIME_ZONE = "Europe/Helsinki"
USE_I18N = True
USE_TZ = True

DEFAULT_AUTO_FIELD = "django.db.models.BigAutoField"

# --- Логирование ---
LOG_LEVEL = os.getenv("HEISLAB_LOG_LEVEL", "INFO").upper()

LOGGING = {
    "version": 1,
    "disable_existing_loggers": False,
    "formatters": {
        "plain": {"format": "{levelname} {asctime} {name}: {message}", "style": "{"},
    },
    "handlers": {
        "console": {"class": "logging.StreamHandler", "formatter": "plain"},
    },
    "loggers": {
        name: {"handlers": ["console"], "level": LOG_LEVEL, "propagate": False}
        for name in ("core", "analysis", "experiments", "exports")
    },
}

# --- Эксперименты ---
HEISLAB_THREADS = max(1, int(os.getenv("HEISLAB_THREADS", "1") or 1))
HEISLAB_OUTPUT_DIR = Path(os.getenv("HEISLAB_OUTPUT_DIR", str(BASE_DIR / "reports")))
HEISLAB_JOURNAL = os.getenv("HEISLAB_JOURNAL", "0") == "1"

# Допуски по умолчанию; переопределяются флагом --tol name=value
HEISLAB_TOLERANCES = {
    "group": 1e-12,
    "mass": 1e-10,
    "polar": 1e-3,
    "gamma": 1e-8,
    "representation": 1e-3,
    "interior": 1e-10,
    "covariance": 1e-9,
    "power": 1e-6,
    "slope": 0.1,
    "r_squared": 0.9,
    "support_leak": 1e-8,
    "linearization": 1e-10,
    "rk_bound": 1e-8,
    "rk_consistency": 1e-8,
    "asymptotic": 1e-2,
    "refinement": 0.2,
    "sparse_refinement": 0.25,
    "contraction": 0.05,
}
