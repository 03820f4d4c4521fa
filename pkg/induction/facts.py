import logging

from dataclasses import dataclass
from typing import AbstractSet, Dict, Iterator, List, Optional

from model_core.states import PartialState, VariableId, project


logger = logging.getLogger(__name__)

OK = "ok"
DUPLICATE = "duplicate"
INCONSISTENT = "inconsistent"


@dataclass(frozen=True)
class RewardFact:
    """보상 범위에 투영한 관측과 그 보상 (원래 관측을 함께 보관)"""

    observation: PartialState
    reward: float
    step: int


@dataclass(frozen=True)
class FactUpdate:
    status: str
    conflict: Optional[RewardFact] = None

    @property
    def inconsistent(self) -> bool:
        return self.status == INCONSISTENT


class RewardFacts:
    """보상 범위 투영 키마다 하나의 보상만 갖는 사실 집합"""

    def __init__(self, scope: AbstractSet[VariableId]) -> None:
        self.scope = frozenset(scope)
        self._facts: Dict[PartialState, RewardFact] = {}

    def __len__(self) -> int:
        return len(self._facts)

    def __iter__(self) -> Iterator[RewardFact]:
        return iter(sorted(self._facts.values(), key=lambda fact: fact.step))

    def key_of(self, observation: PartialState) -> PartialState:
        return project(observation, self.scope)

    def get(self, observation: PartialState) -> Optional[RewardFact]:
        return self._facts.get(self.key_of(observation))

    def update(self, observation: PartialState, reward: float, step: int) -> FactUpdate:
        """새 사실 추가, 같은 투영에 다른 보상이 있으면 INCONSISTENT (저장하지 않음)"""
        key = self.key_of(observation)
        existing = self._facts.get(key)
        if existing is not None:
            if existing.reward == reward:
                return FactUpdate(DUPLICATE)
            logger.info(
                f"[RewardFacts] 보상 불일치: {key} 에서 {existing.reward} != {reward}"
            )
            return FactUpdate(INCONSISTENT, existing)
        self._facts[key] = RewardFact(observation, reward, step)
        return FactUpdate(OK)

    def replace(self, observation: PartialState, reward: float, step: int) -> None:
        self._facts[self.key_of(observation)] = RewardFact(observation, reward, step)

    def rescope(self, scope: AbstractSet[VariableId]) -> List[RewardFact]:
        """범위를 바꿔 모든 사실을 다시 투영하고, 키가 겹치면 최신 사실을 남긴다

        버려진 사실 목록을 반환한다.
        """
        self.scope = frozenset(scope)
        facts = sorted(self._facts.values(), key=lambda fact: fact.step)
        self._facts = {}
        dropped: List[RewardFact] = []
        for fact in facts:
            key = self.key_of(fact.observation)
            previous = self._facts.get(key)
            if previous is not None and previous.reward != fact.reward:
                dropped.append(previous)
            self._facts[key] = fact
        if dropped:
            logger.debug(f"[RewardFacts] 재투영으로 오래된 사실 {len(dropped)}개 교체")
        return dropped

    def items(self) -> Dict[PartialState, float]:
        return {key: fact.reward for key, fact in self._facts.items()}
