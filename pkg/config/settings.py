"""
Django settings for the poisson_background project.
"""

import os
from pathlib import Path
from dotenv import load_dotenv

# Build paths inside the project
BASE_DIR = Path(__file__).resolve().parent.parent

# Load environment variables
load_dotenv(BASE_DIR / '.env')

# Only management commands run; nothing is served.
SECRET_KEY = os.getenv('DJANGO_SECRET_KEY', 'django-insecure-change-this-in-production')

DEBUG = os.getenv('DEBUG', 'False') == 'True'

ALLOWED_HOSTS = []

# Application definition
INSTALLED_APPS = [
    'background',
]

# No persistence layer: models, spectra and sweep tables live in files.
DATABASES = {}

# Internationalization
LANGUAGE_CODE = 'en-us'
TIME_ZONE = 'UTC'
USE_I18N = False
USE_TZ = True

# Where `make_fixtures` writes the bundled synthetic data set
FIXTURES_DIR = Path(os.getenv('BACKGROUND_FIXTURES_DIR', BASE_DIR / 'background' / 'fixtures'))

# Numeric defaults. Option schemas read these lazily, so a .env can retune them.
BACKGROUND_DEFAULTS = {
    'bin_count': int(os.getenv('BACKGROUND_BIN_COUNT', '128')),
    # Poisson E-PCA fitting
    'fit_max_iters': int(os.getenv('BACKGROUND_FIT_MAX_ITERS', '500')),
    'fit_tol': float(os.getenv('BACKGROUND_FIT_TOL', '1e-8')),
    'fit_inner_steps': int(os.getenv('BACKGROUND_FIT_INNER_STEPS', '5')),
    'init_scale': float(os.getenv('BACKGROUND_INIT_SCALE', '0.01')),
    'offset_floor': float(os.getenv('BACKGROUND_OFFSET_FLOOR', '1e-6')),
    'theta_cap': float(os.getenv('BACKGROUND_THETA_CAP', '30')),
    # Out-of-sample encoding
    'encode_max_iters': int(os.getenv('BACKGROUND_ENCODE_MAX_ITERS', '100')),
    'encode_tol': float(os.getenv('BACKGROUND_ENCODE_TOL', '1e-10')),
    # SKL histogram estimator
    'skl_bins': int(os.getenv('BACKGROUND_SKL_BINS', '64')),
    'skl_smoothing': float(os.getenv('BACKGROUND_SKL_SMOOTHING', '0.5')),
    # Sweep harness
    'sweep_restarts': int(os.getenv('BACKGROUND_SWEEP_RESTARTS', '30')),
    'sweep_workers': int(os.getenv('BACKGROUND_SWEEP_WORKERS', '1')),
    'master_seed': int(os.getenv('BACKGROUND_MASTER_SEED', '0')),
}

# Logging
LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'verbose': {
            'format': '{levelname} {asctime} {module} {message}',
            'style': '{',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': 'verbose',
        },
    },
    'root': {
        'handlers': ['console'],
        'level': 'WARNING',
    },
    'loggers': {
        'background': {
            'handlers': ['console'],
            'level': 'DEBUG' if DEBUG else os.getenv('BACKGROUND_LOG_LEVEL', 'WARNING'),
            'propagate': False,
        },
    },
}
