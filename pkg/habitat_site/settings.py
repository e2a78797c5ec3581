"""
Django settings for the habitat_site project.

The project has no web surface: Django provides the settings layer, logging
configuration and the management-command CLI for the habitat app.

For the full list of settings and their values, see
https://docs.djangoproject.com/en/5.2/ref/settings/
"""

import os
from pathlib import Path

from dotenv import load_dotenv

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

# Load environment variables
load_dotenv(BASE_DIR / '.env')

SECRET_KEY = os.getenv('DJANGO_SECRET_KEY', 'habitat-local-only-not-a-secret')

DEBUG = os.getenv('DJANGO_DEBUG', '0') == '1'

ALLOWED_HOSTS = []


# Application definition

INSTALLED_APPS = [
    'habitat',
]

# No ORM models; an in-memory sqlite keeps Django's checks quiet.
DATABASES = {
    'default': {
        'ENGINE': 'django.db.backends.sqlite3',
        'NAME': ':memory:',
    }
}

LANGUAGE_CODE = 'en-us'

TIME_ZONE = 'UTC'

USE_I18N = False

USE_TZ = True

DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'


# Habitat pipeline

HABITAT = {
    'ARTIFACT_ROOT': Path(os.getenv('HABITAT_ARTIFACT_ROOT') or BASE_DIR / 'artifacts'),
    # empty -> built-in default taxonomy
    'TAXONOMY_FILE': os.getenv('HABITAT_TAXONOMY_FILE', ''),
    'NUM_WORKERS': int(os.getenv('HABITAT_NUM_WORKERS', '0')),
    'DEVICE': os.getenv('HABITAT_DEVICE', 'cpu'),
    'LOG_LEVEL': os.getenv('HABITAT_LOG_LEVEL', 'INFO'),
    'PLOT_DPI': int(os.getenv('HABITAT_PLOT_DPI', '150')),
}


# Logging

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
        'habitat': {
            'handlers': ['console'],
            'level': HABITAT['LOG_LEVEL'],
            'propagate': False,
        },
    },
}
