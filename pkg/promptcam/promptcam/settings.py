"""
Django settings for the promptcam project.

Besides the usual Django configuration, this holds the defaults for every
run configuration key (POLE_DEFAULTS). Those defaults are the published
training setup; desk-scale runs override them from a JSON run configuration
(see pole/data/toy.json and the README).

For the full list of Django settings and their values, see
https://docs.djangoproject.com/en/3.2/ref/settings/
"""

# Build paths inside the project like this: os.path.join(BASE_DIR, ...)
import os
BASE_DIR = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


# Nothing here is served to the outside world, the admin is a local tool
# for browsing ingested synonym pools.
SECRET_KEY = os.environ.get('POLE_SECRET_KEY', 'promptcam-local-only-key')

DEBUG = os.environ.get('POLE_DEBUG', '') == '1'

ALLOWED_HOSTS = ['localhost', '127.0.0.1']

TEMPLATES = [
    {
        'BACKEND': 'django.template.backends.django.DjangoTemplates',
        'DIRS': [],
        'APP_DIRS': True,
        'OPTIONS': {
            'context_processors': [
                'django.contrib.auth.context_processors.auth',
                'django.template.context_processors.debug',
                'django.template.context_processors.request',
                'django.contrib.messages.context_processors.messages',
            ],
        },
    },
]

# Application definition

INSTALLED_APPS = (
    'django.contrib.admin',
    'django.contrib.auth',
    'django.contrib.contenttypes',
    'django.contrib.sessions',
    'django.contrib.messages',
    'django.contrib.staticfiles',
    'pole',
    'django_extensions',
)

MIDDLEWARE = (
    'django.contrib.sessions.middleware.SessionMiddleware',
    'django.middleware.common.CommonMiddleware',
    'django.middleware.csrf.CsrfViewMiddleware',
    'django.contrib.auth.middleware.AuthenticationMiddleware',
    'django.contrib.messages.middleware.MessageMiddleware',
    'django.middleware.clickjacking.XFrameOptionsMiddleware',
)

ROOT_URLCONF = 'promptcam.urls'


# Database
# Only the ingested synonym pools live here.

DATABASES = {
    'default': {
        'ENGINE': 'django.db.backends.sqlite3',
        'NAME': os.path.join(BASE_DIR, 'db.sqlite3'),
    }
}

DEFAULT_AUTO_FIELD = 'django.db.models.AutoField'

LANGUAGE_CODE = 'en-us'

TIME_ZONE = 'UTC'

USE_I18N = True

USE_L10N = True

USE_TZ = True

STATIC_URL = '/static/'


# Logging
# Library code logs to the "pole" logger, commands write results to stdout.

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
        'pole': {
            'handlers': ['console'],
            'level': os.environ.get('POLE_LOG_LEVEL', 'INFO'),
            'propagate': False,
        },
    },
}


# Toolkit configuration

# Encoder weights and the on-disk text embedding cache
POLE_CACHE_DIR = os.environ.get('POLE_CACHE_DIR', os.path.join(BASE_DIR, 'cache'))

# Synonym table shipped with the app
POLE_SYNONYM_FILE = os.path.join(BASE_DIR, 'pole', 'data', 'voc_synonyms.json')

# Defaults for every run configuration key.
# These are the published training settings, not desk-scale ones.
POLE_DEFAULTS = {
    # data
    'dataset': '',
    'dataset_format': 'voc',
    'image_set': 'train',
    'crop_size': 512,
    'hflip': True,
    # CAM network
    'backbone': 'resnet50',
    'backbone_stride': 16,
    'backbone_channels': 2048,
    # vision-language encoders
    'encoder': 'clip-resnet50',
    'mock_seed': 0,
    'encoder_dim': 64,
    # prompts
    'pool_file': POLE_SYNONYM_FILE,
    'pool_corpus': 'chatgpt',
    'pool_size': 4,
    'template_prefix': 'A photo of ',
    'template_terminator': '.',
    # optimisation
    'lr': 0.00025,
    'momentum': 0.9,
    'weight_decay': 0.0001,
    'schedule': 'cosine',
    'epochs': 10,
    'batch_size': 16,
    # objective
    'alpha': 1.0,
    'beta': 1.0,
    'sim_eps': 0.0001,
    'temperature': None,
    'contrastive_weight': 1.0,
    # adapters
    'adapter_gate_mode': 'learnable',
    'adapter_gate_value': 0.2,
    'adapter_hidden': None,
    'adapter_clamp_gate': False,
    # class selection
    'freeze_selection_epoch': None,
    'select_after_adapter': False,
    # evaluation
    'bg_threshold': 0.25,
    # bookkeeping
    'seed': 0,
    'output_dir': 'runs/default',
}


# Testing
TEST_RUNNER = 'django_slowtests.testrunner.DiscoverSlowestTestsRunner'
NUM_SLOW_TESTS = 10
