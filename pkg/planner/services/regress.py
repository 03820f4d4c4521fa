import logging

from typing import Any, Dict, FrozenSet, Mapping, Optional

from model_core.states import VariableId
from model_core.trees import (
    DecisionTree,
    Distribution,
    Leaf,
    Test,
    tree_combine,
    tree_reduce,
)


logger = logging.getLogger(__name__)

# 다음 상태 변수별로 확정 값 또는 배제된 값 집합
NextContext = Dict[VariableId, Any]


class RegressionError(ValueError):
    """가치 트리가 테스트하는 변수의 CPD가 없음"""


def _branch_probability(
    distribution: Distribution, value: int, excluded: FrozenSet[int]
) -> float:
    """X' ∉ excluded 조건에서 P(X' = value)"""
    remaining = sum(p for i, p in enumerate(distribution.probs) if i not in excluded)
    if remaining <= 0.0:
        return 0.0
    return distribution[value] / remaining


def expected_value(
    value_tree: DecisionTree,
    cpds: Mapping[VariableId, DecisionTree],
    context: Optional[NextContext] = None,
) -> DecisionTree:
    """현재 상태 변수 위의 트리로 E[V(s') | s] 를 계산 (상태 열거 없음)

    V 의 테스트 (X' = v) 마다 X 의 CPD 트리를 붙이고, 두 가지의 기댓값을
    P(X' = v | s) 로 가중 결합한다. 다음 상태 변수는 서로 조건부 독립이다.
    """
    context = context or {}
    if isinstance(value_tree, Leaf):
        return Leaf(float(value_tree.payload))
    variable, value = value_tree.variable, value_tree.value
    cpd = cpds.get(variable)
    if cpd is None:
        raise RegressionError(f"가치 트리가 테스트하는 변수의 CPD가 없습니다: {variable}")
    known = context.get(variable)
    excluded: FrozenSet[int] = known if isinstance(known, frozenset) else frozenset()

    passed = expected_value(value_tree.passed, cpds, {**context, variable: value})
    failed = expected_value(value_tree.failed, cpds, {**context, variable: excluded | {value}})

    def weigh(distribution: Distribution, on_pass: float, on_fail: float) -> float:
        p = _branch_probability(distribution, value, excluded)
        return p * on_pass + (1.0 - p) * on_fail

    return tree_reduce(tree_combine([cpd, passed, failed], weigh))


def regress(
    value_tree: DecisionTree,
    cpds: Mapping[VariableId, DecisionTree],
    reward_tree: DecisionTree,
    discount: float,
    terminal_tree: Optional[DecisionTree] = None,
) -> DecisionTree:
    """Q^a(s) = R(s) + γ Σ P(s'|s,a) V(s'), 종료 상태에서는 Q^a(s) = R(s)"""
    if discount == 0.0:
        future: DecisionTree = Leaf(0.0)
    else:
        future = expected_value(value_tree, cpds)
    terminal = terminal_tree if terminal_tree is not None else Leaf(False)

    def backup(is_terminal: Any, reward: Any, continuation: float) -> float:
        if is_terminal:
            return float(reward)
        return float(reward) + discount * continuation

    return tree_reduce(tree_combine([terminal, reward_tree, future], backup))



def scalar_leaves(tree: DecisionTree, default: float = 0.0) -> DecisionTree:
    """레이블 트리의 비어 있는 리프(None)를 기본값으로 채운 스칼라 트리"""
    if isinstance(tree, Leaf):
        return Leaf(default if tree.payload is None else float(tree.payload))
    return Test(
        tree.variable,
        tree.value,
        scalar_leaves(tree.passed, default),
        scalar_leaves(tree.failed, default),
    )
