import logging

from contextlib import contextmanager
from pathlib import Path
from typing import Any, Dict, Iterator, Optional

from django.core.management.base import CommandError, CommandParser

from domain.config import DEFAULTS, ExperimentConfig, parse_config, parse_config_file
from domain.exceptions import ConfigError, DomainSemanticError, DomainSyntaxError


logger = logging.getLogger(__name__)

CONFIG_ERROR_CODE = 2
RUNTIME_ERROR_CODE = 3


def add_config_arguments(parser: CommandParser) -> None:
    """설정 파일 키와 같은 이름의 플래그 (파일 값을 덮어씀)"""
    parser.add_argument("--config", type=Path, help="key=value 설정 파일")
    for key in DEFAULTS:
        parser.add_argument(f"--{key}", dest=key, default=None, metavar=key.upper())


def config_overrides(options: Dict[str, Any]) -> Dict[str, Any]:
    return {key: options[key] for key in DEFAULTS if options.get(key) is not None}


def load_config(options: Dict[str, Any], path: Optional[Path] = None) -> ExperimentConfig:
    path = path if path is not None else options.get("config")
    overrides = config_overrides(options)
    if path is None:
        return parse_config("", overrides)
    return parse_config_file(path, overrides)


@contextmanager
def command_errors(tag: str) -> Iterator[None]:
    """설정/도메인 오류는 종료 코드 2, 그 밖의 실패는 3"""
    try:
        yield
    except CommandError:
        raise
    except (ConfigError, DomainSyntaxError, DomainSemanticError) as e:
        logger.warning(f"[{tag}] 입력 오류: {e}")
        raise CommandError(str(e), returncode=CONFIG_ERROR_CODE)
    except Exception as e:
        logger.error(f"[{tag}] 실행 실패: {e}")
        raise CommandError(str(e), returncode=RUNTIME_ERROR_CODE)
