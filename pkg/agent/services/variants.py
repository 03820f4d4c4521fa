import logging

from typing import Dict, Optional, Protocol, Type

import numpy as np

from agent.services.learner import Learner, StepRecord
from domain.config import ExperimentConfig
from domain.entities import TrueFmdp
from expert.services.oracle import ExpertOracle
from model_core.states import ActionId, Awareness, PartialState
from model_core.trees import DecisionTree
from planner.policy import policy_error_approx
from planner.services.svi import greedy_policy
from simulator.episodes import EpisodeTracker
from simulator.services.environment import Environment


logger = logging.getLogger(__name__)


class Agent(Protocol):
    def run_step(self, env: Environment) -> StepRecord:
        ...

    def greedy_policy(self, state: PartialState) -> ActionId:
        ...

    def policy_tree(self) -> Optional[DecisionTree]:
        ...


class NonConservativeLearner(Learner):
    """변수를 발견할 때마다 DBN, CPD 트리, 가치 트리를 초기 사전확률로 되돌린다"""

    conservative = False


class BaselineAgent:
    """실제 FMDP 전체를 아는 기준선 (학습, 조언, 질의 없음)"""

    def __init__(
        self,
        domain: TrueFmdp,
        config: ExperimentConfig,
        expert: ExpertOracle,
        rng: np.random.Generator,
    ) -> None:
        self.domain = domain
        self.config = config
        self.expert = expert
        self.rng = rng
        self.epsilon = config.epsilon
        self.actions = domain.canonical_actions
        self.awareness = Awareness(
            set(domain.variables), set(domain.actions), domain.reward_scope()
        )
        self.tracker = EpisodeTracker(domain.discount)
        self.cutoff = config.episode_cutoff
        self.step = 0
        self.true_state: Optional[PartialState] = None

    def uniform_action(self) -> ActionId:
        return self.actions[int(self.rng.integers(len(self.actions)))]

    def select_action(self, state: PartialState) -> ActionId:
        raise NotImplementedError

    def greedy_policy(self, state: PartialState) -> ActionId:
        return self.expert.best_action(state)

    def policy_tree(self) -> Optional[DecisionTree]:
        return None

    def run_step(self, env: Environment) -> StepRecord:
        if not self.tracker.active:
            self.true_state = env.reset()
            self.tracker.begin(self.domain.reward_of(self.true_state))
        assert self.true_state is not None
        self.step += 1
        action = self.select_action(self.true_state)
        self.true_state, reward, terminal = env.step(action)
        self.tracker.record(reward)
        cutoff = not terminal and self.tracker.steps >= self.cutoff
        episode = self.tracker.index
        if terminal or cutoff:
            self.tracker.finish(cutoff=cutoff)
        err = None
        if self.tracker.returns:
            window = self.tracker.returns[-self.config.err_window :]
            err = policy_error_approx(window, self.expert.start_value)
        return StepRecord(
            step=self.step,
            episode=episode,
            reward=reward,
            terminal=terminal,
            cutoff=cutoff,
            num_vars_aware=len(self.awareness.variables),
            num_actions_aware=len(self.awareness.actions),
            advice_count=0,
            query_count=0,
            err_approx=err,
        )


class TruePolicyAgent(BaselineAgent):
    """최적 정책 π+ 의 ε-greedy 버전 (성능 상한)"""

    def select_action(self, state: PartialState) -> ActionId:
        if self.rng.random() < self.epsilon:
            return self.uniform_action()
        return self.expert.best_action(state)

    def policy_tree(self) -> Optional[DecisionTree]:
        return greedy_policy(self.expert.model.q_trees)


class RandomAgent(BaselineAgent):
    """실제 행동 집합 A+ 에서 균등 선택 (성능 하한)"""

    def select_action(self, state: PartialState) -> ActionId:
        return self.uniform_action()

    def greedy_policy(self, state: PartialState) -> ActionId:
        return self.uniform_action()


LEARNERS: Dict[str, Type[Learner]] = {
    "default": Learner,
    "nonConservative": NonConservativeLearner,
    "lowTolerance": Learner,
    "highTolerance": Learner,
}

BASELINES: Dict[str, Type[BaselineAgent]] = {
    "truePolicy": TruePolicyAgent,
    "random": RandomAgent,
}


def build_agent(
    domain: TrueFmdp,
    config: ExperimentConfig,
    expert: ExpertOracle,
    rng: np.random.Generator,
) -> Agent:
    """설정의 variant 에 맞는 에이전트 생성 (허용 오차 변형은 β 만 다름)"""
    baseline_class = BASELINES.get(config.variant)
    if baseline_class is not None:
        return baseline_class(domain, config, expert, rng)
    learner_class = LEARNERS.get(config.variant)
    if learner_class is None:
        raise ValueError(f"알 수 없는 에이전트 변형입니다: {config.variant}")
    logger.debug(f"[Agent] {config.variant} 에이전트 생성 (β={config.beta})")
    return learner_class(domain, config, expert, rng)
