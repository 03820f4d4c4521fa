from dataclasses import dataclass
from typing import Union

from model_core.states import ActionId, VariableId


@dataclass(frozen=True)
class BetterAction:
    """전역 단계 step의 상태에서는 worse 대신 better 가 낫다"""

    step: int
    better: ActionId
    worse: ActionId


@dataclass(frozen=True)
class DistinctVariable:
    """두 기준 상태에서 값이 다른 변수"""

    variable: VariableId


@dataclass(frozen=True)
class RewardScopeVariable:
    """보상 함수가 의존하는 아직 모르는 변수"""

    variable: VariableId


Advice = Union[BetterAction, DistinctVariable, RewardScopeVariable]
