import os

from .base import *


# DJANGO_ENV=prod 이면 감사를 끄고 워커를 늘린 설정 사용
if os.getenv("DJANGO_ENV", "local") == "prod":
    from .prod import *
else:
    from .local import *
