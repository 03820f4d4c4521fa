import logging

from pathlib import Path
from typing import Any

from django.core.management.base import BaseCommand, CommandParser

from harness.cli import add_config_arguments, command_errors, load_config
from harness.services.runner import run_experiment, summary_text


logger = logging.getLogger(__name__)


class Command(BaseCommand):
    help = "설정 파일의 실험을 레플리카별로 실행하고 CSV 와 summary.txt 를 저장합니다."

    def add_arguments(self, parser: CommandParser) -> None:
        add_config_arguments(parser)
        parser.add_argument("--out", type=Path, default=None, help="출력 디렉터리")
        parser.add_argument("--workers", type=int, default=None, help="레플리카 워커 프로세스 수")

    def handle(self, *args: Any, **options: Any) -> None:
        with command_errors("Run"):
            config = load_config(options)
            result = run_experiment(config, options["out"], workers=options["workers"])
            self.stdout.write(summary_text(result))
            self.stdout.write(self.style.SUCCESS(f"결과: {result.out_dir}"))
