import logging

from typing import Any

from django.core.management.base import BaseCommand, CommandError, CommandParser

from domain.entities import TrueFmdp
from domain.parser import parse_domain, parse_domain_file, resolve_domain_path, serialize_domain
from harness.cli import RUNTIME_ERROR_CODE, command_errors
from model_core.trees import trees_equal


logger = logging.getLogger(__name__)


def same_domain(a: TrueFmdp, b: TrueFmdp) -> bool:
    if a.variables != b.variables or a.action_ids != b.action_ids:
        return False
    if (a.terminal, a.start, a.discount) != (b.terminal, b.start, b.discount):
        return False
    if not trees_equal(a.reward, b.reward):
        return False
    return all(
        trees_equal(a.cpds[action][var], b.cpds[action][var])
        for action in a.action_ids
        for var in a.variable_ids
    )


class Command(BaseCommand):
    help = "도메인 파일을 파싱하고 직렬화 후 재파싱 결과가 같은지 확인합니다."

    def add_arguments(self, parser: CommandParser) -> None:
        parser.add_argument("domain", help="도메인 파일 경로 또는 내장 도메인 이름")

    def handle(self, *args: Any, **options: Any) -> None:
        with command_errors("Validate"):
            path = resolve_domain_path(options["domain"])
            domain = parse_domain_file(path)
            if not same_domain(domain, parse_domain(serialize_domain(domain))):
                raise CommandError(
                    f"{path.name}: 직렬화 후 재파싱 결과가 다릅니다.",
                    returncode=RUNTIME_ERROR_CODE,
                )
            self.stdout.write(f"domain: {path}")
            self.stdout.write(f"variables: {len(domain.variables)} ({domain.state_count()} states)")
            self.stdout.write(f"actions: {', '.join(domain.action_ids)}")
            self.stdout.write(f"reward scope: {', '.join(sorted(domain.reward_scope()))}")
            self.stdout.write(f"start states: {len(domain.start_states())}")
            self.stdout.write(f"discount: {domain.discount:g}")
            self.stdout.write(self.style.SUCCESS("OK"))
