import logging

from pathlib import Path
from typing import Any, List

from django.core.management.base import BaseCommand, CommandParser

from domain.parser import parse_domain_file, resolve_domain_path
from harness.cli import add_config_arguments, command_errors, load_config
from harness.services.runner import run_experiment, solve_oracle
from planner.render import render_tree
from planner.services.svi import greedy_policy


logger = logging.getLogger(__name__)


class Command(BaseCommand):
    help = (
        "도메인의 최적 V/Q/정책 트리를 출력합니다. "
        "--config 를 주면 실험을 실행해 레플리카 최종 정책 중 최빈 정책도 출력합니다. "
        "최적 트리는 실행마다 전체 SVI 로 새로 계산하며 Factory 도메인은 수 분이 걸립니다."
    )

    def add_arguments(self, parser: CommandParser) -> None:
        parser.add_argument("domain_path", nargs="?", default=None, help="도메인 경로 또는 이름")
        add_config_arguments(parser)
        parser.add_argument("--out", type=Path, default=None, help="트리를 저장할 파일")
        parser.add_argument("--workers", type=int, default=None, help="레플리카 워커 프로세스 수")

    def handle(self, *args: Any, **options: Any) -> None:
        with command_errors("Export"):
            config = load_config(options) if options["config"] else None
            fallback = config.domain if config else (options["domain"] or "coffee")
            name = options["domain_path"] or fallback
            base_dir = config.base_dir if config else None
            domain = parse_domain_file(resolve_domain_path(name, base_dir))
            logger.info(
                f"[Export] 상태 {domain.state_count()}개 도메인의 최적 트리를 전체 SVI 로 계산합니다."
            )
            oracle = solve_oracle(domain)

            sections: List[str] = [
                render_tree(oracle.value, domain.variables, title="[V+]"),
                render_tree(greedy_policy(oracle.q_trees), domain.variables, title="[policy+]"),
            ]
            for action in domain.canonical_actions:
                sections.append(
                    render_tree(oracle.q_trees[action], domain.variables, title=f"[Q+ {action}]")
                )
            if config is not None:
                result = run_experiment(config, workers=options["workers"], oracle=oracle)
                modal = result.modal_policy()
                if modal is not None:
                    sections.append(f"[modal final policy: {config.variant}]\n{modal}")

            text = "\n".join(sections)
            if options["out"] is not None:
                options["out"].write_text(text, encoding="utf-8")
                logger.info(f"[Export] 정책 트리 저장: {options['out']}")
            self.stdout.write(text)
