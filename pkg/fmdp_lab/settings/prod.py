import os  # CI mypy 통과용

from .base import *


DEBUG = False

FMDP_AUDIT = os.getenv("FMDP_AUDIT", "False") == "True"

# 장시간 Factory 실험용 기본 워커 수
FMDP_WORKERS = int(os.getenv("FMDP_WORKERS", str(os.cpu_count() or 1)))
