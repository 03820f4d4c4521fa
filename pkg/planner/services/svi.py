import logging

from dataclasses import dataclass, field
from typing import Any, Dict, Mapping, Optional, Sequence

from model_core.states import ActionId, VariableId
from model_core.trees import (
    DecisionTree,
    Leaf,
    tree_combine,
    tree_eval,
    tree_merge,
    tree_payloads,
    tree_reduce,
)
from planner.services.regress import regress


logger = logging.getLogger(__name__)

ActionModels = Mapping[ActionId, Mapping[VariableId, DecisionTree]]


class ConvergenceError(ValueError):
    """반복 한도 안에 가치 반복이 수렴하지 않음"""


@dataclass
class ValueModel:
    """가치 트리 V 와 행동별 Q 트리"""

    value: DecisionTree = field(default_factory=lambda: Leaf(0.0))
    q_trees: Dict[ActionId, DecisionTree] = field(default_factory=dict)
    iterations: int = 0

    def state_value(self, state: Mapping[VariableId, int]) -> float:
        return float(tree_eval(self.value, state))

    def q_values(self, state: Mapping[VariableId, int]) -> Dict[ActionId, float]:
        return {action: float(tree_eval(q, state)) for action, q in self.q_trees.items()}


def inc_svi(
    model: ValueModel,
    reward_tree: DecisionTree,
    action_models: ActionModels,
    discount: float,
    terminal_tree: Optional[DecisionTree] = None,
) -> ValueModel:
    """모든 행동에 대해 한 번의 회귀 후 max 병합 (수렴 반복 없음)"""
    if not action_models:
        raise ValueError("인지한 행동이 없습니다.")
    q_trees = {
        action: regress(model.value, cpds, reward_tree, discount, terminal_tree)
        for action, cpds in sorted(action_models.items())
    }
    value = tree_merge(list(q_trees.values()), max)
    return ValueModel(value, q_trees, model.iterations + 1)


def max_leaf_change(before: DecisionTree, after: DecisionTree) -> float:
    difference = tree_combine([before, after], lambda a, b: abs(float(a) - float(b)))
    return max(float(v) for v in tree_payloads(difference))


def full_svi(
    reward_tree: DecisionTree,
    action_models: ActionModels,
    discount: float,
    terminal_tree: Optional[DecisionTree] = None,
    tolerance: float = 1e-6,
    max_iterations: int = 10000,
) -> ValueModel:
    """최대 리프 변화가 tolerance 미만이 될 때까지 inc_svi 반복"""
    if tolerance <= 0.0:
        raise ValueError(f"tolerance는 양수여야 합니다: {tolerance}")
    model = ValueModel()
    for _ in range(max_iterations):
        updated = inc_svi(model, reward_tree, action_models, discount, terminal_tree)
        change = max_leaf_change(model.value, updated.value)
        model = updated
        if change < tolerance:
            logger.debug(f"[SVI] {model.iterations}회 반복 후 수렴 (변화 {change:.3g})")
            return model
    raise ConvergenceError(
        f"가치 반복이 {max_iterations}회 안에 수렴하지 않았습니다 (γ={discount})"
    )


def greedy_action(
    q_trees: Mapping[ActionId, DecisionTree],
    state: Mapping[VariableId, int],
    actions: Sequence[ActionId] = (),
) -> ActionId:
    """Q 값이 가장 큰 행동, 동률이면 정렬 순서상 앞선 행동 (Q 트리가 없는 행동은 0)"""
    candidates = sorted(set(actions) | set(q_trees))
    if not candidates:
        raise ValueError("선택할 행동이 없습니다.")
    best, best_value = candidates[0], float("-inf")
    for action in candidates:
        q = q_trees.get(action)
        value = float(tree_eval(q, state)) if q is not None else 0.0
        if value > best_value:
            best, best_value = action, value
    return best


def greedy_policy(q_trees: Mapping[ActionId, DecisionTree]) -> DecisionTree:
    """행동 레이블 리프의 정책 트리"""
    actions = sorted(q_trees)
    if not actions:
        raise ValueError("Q 트리가 없습니다.")

    def argmax(*values: Any) -> ActionId:
        best = 0
        for index, value in enumerate(values):
            if float(value) > float(values[best]):
                best = index
        return actions[best]

    return tree_reduce(tree_combine([q_trees[action] for action in actions], argmax))
