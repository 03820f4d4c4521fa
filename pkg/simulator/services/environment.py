import logging

from typing import List, Optional, Tuple

import numpy as np

from domain.entities import TrueFmdp
from model_core.states import ActionId, Awareness, PartialState, VariableId, project
from model_core.trees import Distribution, tree_eval


logger = logging.getLogger(__name__)

START_REJECTION_LIMIT = 10000


class SimulationError(ValueError):
    """환경 실행 오류"""


class Environment:
    """실제 FMDP를 에피소드 단위로 실행"""

    def __init__(self, domain: TrueFmdp, rng: np.random.Generator) -> None:
        self.domain = domain
        self.rng = rng
        self.state: Optional[PartialState] = None
        self.episode = -1
        self.step_in_episode = 0
        self.global_step = 0
        self.terminal = False
        fixed = dict(domain.start)
        self._free: List[Tuple[VariableId, int]] = [
            (var, decl.size) for var, decl in domain.variables.items() if var not in fixed
        ]
        self._fixed = fixed

    def reset(self) -> PartialState:
        """시작 상태 집합에서 균등 추출 후 새 에피소드 시작"""
        self.state = self._sample_start()
        self.episode += 1
        self.step_in_episode = 0
        self.terminal = False
        logger.debug(f"[Env] 에피소드 {self.episode} 시작: {self.state}")
        return self.state

    def step(self, action: ActionId) -> Tuple[PartialState, float, bool]:
        """행동을 실행해 (다음 상태, 다음 상태 보상, 종료 여부) 반환"""
        if action not in self.domain.actions:
            raise SimulationError(f"알 수 없는 행동입니다: {action}")
        if self.state is None:
            raise SimulationError("reset() 전에 step()을 호출했습니다.")
        if self.terminal:
            raise SimulationError("종료 상태 이후에는 reset()이 필요합니다.")

        cpds = self.domain.cpds[action]
        values = {}
        for var in self.domain.variable_ids:
            distribution: Distribution = tree_eval(cpds[var], self.state)
            values[var] = self._draw(distribution)
        next_state = PartialState(values)
        reward = self.domain.reward_of(next_state)
        self.terminal = self.domain.is_terminal(next_state)
        self.state = next_state
        self.step_in_episode += 1
        self.global_step += 1
        return next_state, reward, self.terminal

    def observe(self, state: PartialState, awareness: Awareness) -> PartialState:
        return project(state, awareness.variables)

    def _draw(self, distribution: Distribution) -> int:
        cumulative = np.cumsum(distribution.probs)
        index = int(np.searchsorted(cumulative, self.rng.random() * cumulative[-1], side="right"))
        return min(index, len(distribution) - 1)

    def _sample_start(self) -> PartialState:
        for _ in range(START_REJECTION_LIMIT):
            values = dict(self._fixed)
            for var, size in self._free:
                values[var] = int(self.rng.integers(size))
            state = PartialState(values)
            if not self.domain.is_terminal(state):
                return state
        if not self.domain.start_states():
            raise SimulationError("시작 상태 집합이 비어 있습니다.")
        raise SimulationError("시작 상태 추출이 반복 한도를 넘었습니다.")
