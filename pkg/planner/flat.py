import logging

from typing import Callable, Dict, List, Mapping, Optional

import numpy as np

from domain.entities import TrueFmdp
from model_core.states import ActionId, PartialState, VariableId
from model_core.trees import DecisionTree, tree_eval


logger = logging.getLogger(__name__)

Policy = Callable[[PartialState], ActionId]


class FlatModel:
    """상태를 모두 열거한 행렬 형태의 FMDP (작은 도메인의 검증 기준)"""

    def __init__(
        self,
        domain: TrueFmdp,
        cpds: Optional[Mapping[ActionId, Mapping[VariableId, DecisionTree]]] = None,
        reward: Optional[DecisionTree] = None,
    ) -> None:
        self.domain = domain
        self.discount = domain.discount
        self.states: List[PartialState] = list(domain.iter_states())
        self.index: Dict[PartialState, int] = {s: i for i, s in enumerate(self.states)}
        self.cpds = cpds if cpds is not None else domain.cpds
        self.actions = sorted(self.cpds)
        reward_tree = reward if reward is not None else domain.reward
        self.rewards = np.array([float(tree_eval(reward_tree, s)) for s in self.states])
        self.terminal = np.array([domain.is_terminal(s) for s in self.states])
        start = np.array([domain.is_start(s) for s in self.states], dtype=np.float64)
        self.start = start / start.sum()
        self._transitions: Dict[ActionId, np.ndarray] = {}

    def __len__(self) -> int:
        return len(self.states)

    def transitions(self, action: ActionId) -> np.ndarray:
        """(S, S) 전이 행렬, 변수별 분포의 곱"""
        cached = self._transitions.get(action)
        if cached is not None:
            return cached
        variables = self.domain.variable_ids
        matrix = np.empty((len(self), len(self)))
        for row, state in enumerate(self.states):
            joint = np.ones(1)
            for var in variables:
                joint = np.outer(joint, tree_eval(self.cpds[action][var], state).probs).ravel()
            # iter_states 의 선언 순서 사전식 나열과 같은 순서
            matrix[row] = joint
        self._transitions[action] = matrix
        return matrix

    def backup(self, values: np.ndarray) -> np.ndarray:
        """(A, S) Q 값, 종료 상태는 Q = R"""
        continuation = np.where(self.terminal, 0.0, self.discount)
        return np.stack(
            [
                self.rewards + continuation * (self.transitions(action) @ values)
                for action in self.actions
            ]
        )

    def value_iteration(
        self, tolerance: float = 1e-10, max_iterations: int = 100000
    ) -> np.ndarray:
        values = np.zeros(len(self))
        for _ in range(max_iterations):
            updated = self.backup(values).max(axis=0)
            if np.max(np.abs(updated - values)) < tolerance:
                return updated
            values = updated
        raise ValueError("평면 가치 반복이 수렴하지 않았습니다.")

    def q_values(self, values: np.ndarray) -> np.ndarray:
        return self.backup(values)

    def evaluate_policy(self, policy: Policy) -> np.ndarray:
        """(I - γ D P_π) V = R 를 풀어 정책 가치 계산 (D: 비종료 상태 대각)"""
        chosen = [policy(state) for state in self.states]
        matrix = np.stack(
            [self.transitions(action)[row] for row, action in enumerate(chosen)]
        )
        continuation = np.where(self.terminal, 0.0, self.discount)
        system = np.eye(len(self)) - continuation[:, None] * matrix
        return np.linalg.solve(system, self.rewards)

    def start_value(self, values: np.ndarray) -> float:
        return float(self.start @ values)
