"""
Django settings for the cometflows project.

The project is driven from the command line (``python manage.py synth|train|
sample|eval|benchmark``); the database only backs the run registry and the
admin pages used to browse it.
"""

import os
import secrets
from pathlib import Path

import dj_database_url

# ============================================
# LOAD ENVIRONMENT VARIABLES
# ============================================
try:
    from dotenv import load_dotenv
    load_dotenv()
except ImportError:
    pass  # python-dotenv not installed


# ============================================
# BASE DIRECTORY
# ============================================
BASE_DIR = Path(__file__).resolve().parent.parent


def _env_flag(name, default="False"):
    return os.getenv(name, default).lower() in ('true', '1', 't')


def _env_float(name, default):
    value = os.getenv(name)
    return float(value) if value not in (None, '') else default


def _env_int(name, default):
    value = os.getenv(name)
    return int(value) if value not in (None, '') else default


def _env_floats(name, default):
    value = os.getenv(name)
    if value in (None, ''):
        return default
    return tuple(float(part) for part in value.replace(',', ' ').split())


def _env_ints(name, default):
    value = os.getenv(name)
    if value in (None, ''):
        return default
    return tuple(int(part) for part in value.replace(',', ' ').split())


# ============================================
# DEBUG / SECURITY
# ============================================
DEBUG = _env_flag("DEBUG")

SECRET_KEY = os.getenv("SECRET_KEY")
if not SECRET_KEY:
    # Admin sessions only; a per-process key is fine for local use
    SECRET_KEY = 'django-insecure-' + secrets.token_urlsafe(32)

ALLOWED_HOSTS = os.getenv('ALLOWED_HOSTS', 'localhost,127.0.0.1').split(',')


# ============================================
# INSTALLED APPLICATIONS
# ============================================
INSTALLED_APPS = [
    'django.contrib.admin',
    'django.contrib.auth',
    'django.contrib.contenttypes',
    'django.contrib.sessions',
    'django.contrib.messages',
    'django.contrib.staticfiles',

    # Local apps
    'marginals.apps.MarginalsConfig',
    'flows.apps.FlowsConfig',
    'datasets.apps.DatasetsConfig',
    'evaluation.apps.EvaluationConfig',
]

MIDDLEWARE = [
    'django.middleware.security.SecurityMiddleware',
    'django.contrib.sessions.middleware.SessionMiddleware',
    'django.middleware.common.CommonMiddleware',
    'django.middleware.csrf.CsrfViewMiddleware',
    'django.contrib.auth.middleware.AuthenticationMiddleware',
    'django.contrib.messages.middleware.MessageMiddleware',
    'django.middleware.clickjacking.XFrameOptionsMiddleware',
]

ROOT_URLCONF = 'cometflows.urls'

TEMPLATES = [
    {
        'BACKEND': 'django.template.backends.django.DjangoTemplates',
        'DIRS': [],
        'APP_DIRS': True,
        'OPTIONS': {
            'context_processors': [
                'django.template.context_processors.request',
                'django.contrib.auth.context_processors.auth',
                'django.contrib.messages.context_processors.messages',
            ],
        },
    },
]



# ============================================
# DATABASE CONFIGURATION (run registry)
# ============================================
# SQLite by default; DATABASE_URL switches to PostgreSQL
SQLITE_DB_NAME = os.getenv('SQLITE_DB_NAME', 'db.sqlite3')
DATABASES = {
    'default': dj_database_url.config(
        default=f"sqlite:///{BASE_DIR / SQLITE_DB_NAME}",
        conn_max_age=600,
    )
}

DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'


# ============================================
# INTERNATIONALIZATION
# ============================================
LANGUAGE_CODE = 'en-us'
TIME_ZONE = os.getenv('TIME_ZONE', 'UTC')
USE_I18N = True
USE_TZ = True

STATIC_URL = '/static/'
STATIC_ROOT = BASE_DIR / 'staticfiles'


# ============================================
# COMET TRAINING CONFIGURATION
# ============================================
# Defaults for flows.services.comet.TrainConfig; every key can be
# overridden with an environment variable COMET_<KEY>.
COMET_CONFIG = {
    'QUANTILES': _env_floats('COMET_QUANTILES', (0.05, 0.95)),
    'LAYERS': _env_int('COMET_LAYERS', 10),
    'HIDDEN': _env_ints('COMET_HIDDEN', (64, 64)),
    'LEARNING_RATE': _env_float('COMET_LEARNING_RATE', 1e-3),
    'BATCH_SIZE': _env_int('COMET_BATCH_SIZE', 256),
    'SIGMA_MAX': _env_float('COMET_SIGMA_MAX', 0.3),
    'MAX_EPOCHS': _env_int('COMET_MAX_EPOCHS', 100),
    'PATIENCE': _env_int('COMET_PATIENCE', 2),
    'SCALE_CLAMP': _env_float('COMET_SCALE_CLAMP', 5.0),
    'SEED': _env_int('COMET_SEED', 0),
    'EVAL_SAMPLES': _env_int('COMET_EVAL_SAMPLES', 10000),
}

# Desk-scale runs (the 20,000-row split) replace these keys; one COMET and
# one baseline fit take a few minutes each on a single core.
COMET_DESK_CONFIG = {
    'LAYERS': _env_int('COMET_DESK_LAYERS', 6),
    'HIDDEN': _env_ints('COMET_DESK_HIDDEN', (32, 32)),
    'MAX_EPOCHS': _env_int('COMET_DESK_MAX_EPOCHS', 30),
}


# ============================================
# LOGGING CONFIGURATION
# ============================================
LOG_LEVEL = os.getenv('LOG_LEVEL', 'INFO').upper()

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,

    'formatters': {
        'verbose': {
            'format': '[{levelname}] {asctime} {module} {process:d} - {message}',
            'style': '{',
            'datefmt': '%Y-%m-%d %H:%M:%S',
        },
        'simple': {
            'format': '{asctime} [{levelname}] {message}',
            'style': '{',
            'datefmt': '%Y-%m-%d %H:%M:%S',
        },
    },

    'handlers': {
        # stderr: stdout is reserved for command summaries
        'console': {
            'class': 'logging.StreamHandler',
            'stream': 'ext://sys.stderr',
            'formatter': 'verbose' if DEBUG else 'simple',
            'level': 'DEBUG',
        },
    },

    'loggers': {
        'django': {
            'handlers': ['console'],
            'level': 'WARNING',
            'propagate': False,
        },
        'marginals': {
            'handlers': ['console'],
            'level': LOG_LEVEL,
            'propagate': False,
        },
        'flows': {
            'handlers': ['console'],
            'level': LOG_LEVEL,
            'propagate': False,
        },
        'datasets': {
            'handlers': ['console'],
            'level': LOG_LEVEL,
            'propagate': False,
        },
        'evaluation': {
            'handlers': ['console'],
            'level': LOG_LEVEL,
            'propagate': False,
        },
    },

    'root': {
        'handlers': ['console'],
        'level': 'WARNING',
    },
}


# ============================================
# ADMIN CUSTOMIZATION
# ============================================
ADMIN_SITE_HEADER = "COMET Flows Run Registry"
ADMIN_SITE_TITLE = "COMET Flows Admin"
ADMIN_INDEX_TITLE = "Training and evaluation runs"
