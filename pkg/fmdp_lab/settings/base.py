import os

from pathlib import Path

from dotenv import load_dotenv


# 환경별 .env 파일 로드
DJANGO_ENV = os.getenv("DJANGO_ENV", "local")
env_file = f".env.{DJANGO_ENV}"
load_dotenv(env_file)

BASE_DIR = Path(__file__).resolve().parent.parent.parent

DEBUG = os.getenv("DEBUG", "True") == "True"

SECRET_KEY = os.getenv("SECRET_KEY", "fmdp-lab-insecure-local-key")

INSTALLED_APPS = [
    "django.contrib.contenttypes",
    "model_core",
    "domain",
    "simulator",
    "structure",
    "induction",
    "planner",
    "expert",
    "agent",
    "harness",
]

# 모델 저장소 없음: 모든 상태는 실행 중 메모리에만 존재
DATABASES: dict = {}

LANGUAGE_CODE = "ko-kr"
TIME_ZONE = "Asia/Seoul"
USE_I18N = True
USE_TZ = False

# 실험 출력 디렉터리
FMDP_OUTPUT_DIR = Path(os.getenv("FMDP_OUTPUT_DIR", str(BASE_DIR / "runs")))

# 레플리카 병렬 워커 수
FMDP_WORKERS = int(os.getenv("FMDP_WORKERS", "1"))

# 전문가 오라클용 전체 SVI 수렴 기준
FMDP_SVI_TOLERANCE = float(os.getenv("FMDP_SVI_TOLERANCE", "1e-6"))
FMDP_SVI_MAX_ITERATIONS = int(os.getenv("FMDP_SVI_MAX_ITERATIONS", "10000"))

# 이 상태 수를 넘는 도메인은 정책 오차를 샘플링으로 추정
FMDP_FLAT_STATE_LIMIT = int(os.getenv("FMDP_FLAT_STATE_LIMIT", "4096"))

# 누적 보상 지표 할인율
FMDP_RDISC_FACTOR = float(os.getenv("FMDP_RDISC_FACTOR", "0.99"))

# 트리 변경 후 경로 일관성/카운트 감사
FMDP_AUDIT = os.getenv("FMDP_AUDIT", str(DEBUG)) == "True"

# 여러 시드로 Coffee 수렴을 확인하는 느린 테스트 실행 여부
FMDP_SLOW_TESTS = os.getenv("FMDP_SLOW_TESTS", "False") == "True"

LOGGING = {
    "version": 1,
    "disable_existing_loggers": False,
    "formatters": {
        "verbose": {"format": "[%(asctime)s] %(levelname)s - %(name)s - %(message)s"},
        "simple": {"format": "%(levelname)s - %(message)s"},
    },
    "handlers": {
        "console": {
            "level": "INFO",
            "class": "logging.StreamHandler",
            "formatter": "verbose",
        },
    },
    "loggers": {
        "django": {
            "handlers": ["console"],
            "level": "INFO",
            "propagate": True,
        },
        **{
            app: {"handlers": ["console"], "level": "DEBUG", "propagate": False}
            for app in (
                "model_core",
                "domain",
                "simulator",
                "structure",
                "induction",
                "planner",
                "expert",
                "agent",
                "harness",
            )
        },
    },
}
