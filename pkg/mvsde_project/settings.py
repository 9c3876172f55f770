from pathlib import Path
import os
# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent


SECRET_KEY = os.environ.get('DJANGO_SECRET_KEY', 'mvsde-batch-only-no-http-surface')

DEBUG = os.environ.get('DEBUG', 'False') == 'True'

ALLOWED_HOSTS = []


# Application definition

INSTALLED_APPS = [
    'rest_framework',
    'mvsde',
]

# Batch toolkit: no database, no URL surface.
DATABASES = {}

LANGUAGE_CODE = 'en-us'

TIME_ZONE = 'UTC'

USE_I18N = True

USE_TZ = True


# Numerical defaults, overridable per deployment.
# Anything left out falls back to mvsde.conf.DEFAULTS.
MVSDE = {
    'TOL_MONOTONE': 1e-9,
    'TOL_LIPSCHITZ': 1e-9,
    'FD_STEP': 1e-5,
    'CFL_SAFETY': 0.4,
    'NEWTON_TOL': 1e-10,
    'NEWTON_MAX_ITER': 50,
    'NEGATIVITY_TOL': 1e-12,
    'BOUNDARY_MASS_ALARM': 1e-6,
    'MASS_TOL': 1e-10,
    'AUDIT_T_SAMPLES': 5,
    'AUDIT_X_SAMPLES': 65,
    'AUDIT_R_SAMPLES': 65,
    'AUDIT_PAIR_STRIDE': 1,
    'BOUND_GROWTH_FACTOR': 1.5,
    'WORKERS': 1,
}


LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'keyvalue': {
            'format': 'level={levelname} logger={name} msg="{message}"',
            'style': '{',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': 'keyvalue',
        },
    },
    'loggers': {
        'mvsde': {
            'handlers': ['console'],
            'level': os.environ.get('MVSDE_LOG_LEVEL', 'INFO'),
            'propagate': False,
        },
    },
}
