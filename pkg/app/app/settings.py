"""
Django settings for the asm project.

The project has no web surface: Django provides the settings layer, the
management-command CLI and the test runner for the solver library in the
`core` app.

For the full list of settings and their values, see
https://docs.djangoproject.com/en/5.0/ref/settings/
"""
import os
from pathlib import Path

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

SECRET_KEY = os.environ.get('DJANGO_SECRET_KEY', 'asm-batch-only-no-sessions')

DEBUG = bool(int(os.environ.get('DEBUG', 0)))

ALLOWED_HOSTS = []


# Application definition

INSTALLED_APPS = [
    'core',
]

# Database
# The solver keeps no state; sqlite satisfies Django's system checks.

DATABASES = {
    'default': {
        'ENGINE': 'django.db.backends.sqlite3',
        'NAME': BASE_DIR / 'db.sqlite3',
    }
}

LANGUAGE_CODE = 'en-us'

TIME_ZONE = 'UTC'

USE_I18N = False

USE_TZ = True

DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'


# Logging
# https://docs.djangoproject.com/en/5.0/topics/logging/

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'plain': {
            'format': '%(asctime)s %(levelname)s %(name)s: %(message)s',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': 'plain',
        },
    },
    'loggers': {
        'core': {
            'handlers': ['console'],
            'level': os.environ.get('ASM_LOG_LEVEL', 'WARNING'),
            'propagate': False,
        },
    },
}


# Solver defaults; each key may be overridden by an ASM_<KEY> variable

def _env(key, default, cast=float):
    value = os.environ.get(f'ASM_{key}')
    return default if value is None else cast(value)


def _grid(text):
    return tuple(float(r) for r in text.replace(',', ' ').split())


ASM_SETTINGS = {
    'STEADY_TOL': _env('STEADY_TOL', 1e-12),
    'INNER_TOL': _env('INNER_TOL', 1e-12),
    'INIT_TOL': _env('INIT_TOL', 1e-12),
    'INNER_MAX_ITER': _env('INNER_MAX_ITER', 200, int),
    'SAMPLE_COUNT': _env('SAMPLE_COUNT', 4096, int),
    'RADIUS_GRID': _env('RADIUS_GRID',
                        (0.005, 0.01, 0.02, 0.03, 0.05, 0.075, 0.1), _grid),
    'GRID_POINTS': _env('GRID_POINTS', 501, int),
    'ORDER': _env('ORDER', 2, int),
    'SEED': _env('SEED', 0, int),
    'T': _env('T', 50, int),
    'HORIZON': _env('HORIZON', 20, int),
    'TYPE2_ITERS': _env('TYPE2_ITERS', 4, int),
    'OUTPUT_DIR': _env('OUTPUT_DIR', 'asm_output', str),
}
