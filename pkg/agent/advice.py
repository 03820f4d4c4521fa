import logging

from dataclasses import dataclass, replace
from typing import AbstractSet, Dict, List, Optional

from model_core.states import ActionId, PartialState, project


logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class MonotonicFact:
    """인지가 늘어도 참으로 남는 조언 내용

    better 는 실제 행동 집합에 있고, 기준 단계 step 의 실제 상태에서
    better 의 최적 Q 가 worse 보다 크다.
    """

    step: int
    better: ActionId
    worse: ActionId


@dataclass(frozen=True)
class DefeasibleEntry:
    """현재 인지로 해석한 조언: key 상태에서는 action 을 택한다"""

    key: PartialState
    action: ActionId
    step: int
    observation: PartialState


class AdviceStore:
    """단조 사실과 투영 상태별 기본 해석 보관소"""

    def __init__(self) -> None:
        self.facts: List[MonotonicFact] = []
        self.entries: Dict[PartialState, DefeasibleEntry] = {}

    def __len__(self) -> int:
        return len(self.entries)

    def record(self, fact: MonotonicFact) -> None:
        self.facts.append(fact)

    def add(self, entry: DefeasibleEntry) -> Optional[DefeasibleEntry]:
        """같은 키에 다른 행동이 있으면 그 항목을 반환하고 저장하지 않는다"""
        existing = self.entries.get(entry.key)
        if existing is not None and existing.action != entry.action:
            logger.info(
                f"[Advice] 해석 충돌: {entry.key} 에서 {existing.action}(단계 {existing.step}) "
                f"vs {entry.action}(단계 {entry.step})"
            )
            return existing
        self.entries[entry.key] = entry
        return None

    def drop(self, entry: DefeasibleEntry) -> None:
        if self.entries.get(entry.key) == entry:
            del self.entries[entry.key]

    def rekey(self, variables: AbstractSet[str]) -> None:
        """저장된 관측을 새 인지 변수에 다시 투영 (같은 키면 최신 항목 유지)"""
        entries = sorted(self.entries.values(), key=lambda entry: entry.step)
        self.entries = {}
        for entry in entries:
            key = project(entry.observation, variables)
            self.entries[key] = replace(entry, key=key)

    def lookup(self, state: PartialState) -> Optional[DefeasibleEntry]:
        """정확히 같은 키를 우선, 없으면 state 와 모순 없는 가장 최근 항목"""
        exact = self.entries.get(state)
        if exact is not None:
            return exact
        matches = [
            entry
            for entry in self.entries.values()
            if len(entry.key) < len(state) and state.satisfies(entry.key)
        ]
        if not matches:
            return None
        return max(matches, key=lambda entry: entry.step)
