import logging

from pathlib import Path
from typing import Any, List

from django.conf import settings
from django.core.management.base import BaseCommand, CommandError, CommandParser

from domain.config import ExperimentConfig
from harness.cli import CONFIG_ERROR_CODE, add_config_arguments, command_errors, load_config
from harness.services.compare import compare_variants, comparison_text


logger = logging.getLogger(__name__)


class Command(BaseCommand):
    help = "같은 도메인과 마스터 시드로 여러 에이전트 변형을 실행해 비교합니다."

    def add_arguments(self, parser: CommandParser) -> None:
        add_config_arguments(parser)
        parser.add_argument(
            "--configs", type=Path, nargs="+", default=[], help="비교할 설정 파일들"
        )
        parser.add_argument(
            "--variants",
            default="",
            help="--config 하나에 variant 만 바꿔 비교 (예: default,nonConservative,random)",
        )
        parser.add_argument("--out", type=Path, default=None, help="출력 디렉터리")
        parser.add_argument("--workers", type=int, default=None, help="레플리카 워커 프로세스 수")

    def handle(self, *args: Any, **options: Any) -> None:
        with command_errors("Compare"):
            configs = self.collect_configs(options)
            out_dir = options["out"] or Path(settings.FMDP_OUTPUT_DIR) / "compare"
            comparison = compare_variants(configs, out_dir, workers=options["workers"])
            self.stdout.write(comparison_text(comparison))
            self.stdout.write(self.style.SUCCESS(f"결과: {out_dir}"))

    def collect_configs(self, options: Any) -> List[ExperimentConfig]:
        variants = [name.strip() for name in options["variants"].split(",") if name.strip()]
        if options["configs"] and variants:
            raise CommandError(
                "--configs 와 --variants 는 함께 쓸 수 없습니다.", returncode=CONFIG_ERROR_CODE
            )
        if options["configs"]:
            return [load_config(options, path) for path in options["configs"]]
        if not variants:
            raise CommandError(
                "--configs 또는 --variants 가 필요합니다.", returncode=CONFIG_ERROR_CODE
            )
        return [load_config({**options, "variant": variant}) for variant in variants]
