"""
Configurações base do projeto tsplat - comuns a todos os ambientes
"""

import os
from pathlib import Path
from decouple import config

# Build paths
BASE_DIR = Path(__file__).resolve().parent.parent.parent

# O projeto não atende requisições HTTP; a chave existe só porque o Django exige.
SECRET_KEY = config("SECRET_KEY", default="tsplat-local-only")

DEBUG = config("DEBUG", default=False, cast=bool)

ALLOWED_HOSTS = []

# Application definition
INSTALLED_APPS = [
    # Apps do projeto
    "apps.splats",
    "apps.rendering",
    "apps.scenes",
    "apps.training",
    "apps.oracles",
]

# Sem banco de dados: checkpoints e cenas vivem em arquivos JSON/PLY/PPM
DATABASES = {}

# Internationalization
LANGUAGE_CODE = "pt-br"
TIME_ZONE = "America/Sao_Paulo"
USE_I18N = True
USE_TZ = True

DEFAULT_AUTO_FIELD = "django.db.models.BigAutoField"

# Renderizador
TSPLAT_THREADS = config("TSPLAT_THREADS", default=os.cpu_count() or 1, cast=int)
TSPLAT_TEST_MODE = config("TSPLAT_TEST_MODE", default=False, cast=bool)
TSPLAT_OUTPUT_DIR = Path(config("TSPLAT_OUTPUT_DIR", default=str(BASE_DIR / "runs")))
