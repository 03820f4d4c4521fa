import os  # CI mypy 통과용

from .base import *


DEBUG = True

# 로컬 실행은 매 변경마다 감사 수행
FMDP_AUDIT = os.getenv("FMDP_AUDIT", "True") == "True"
