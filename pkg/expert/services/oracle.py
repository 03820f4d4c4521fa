import logging

from typing import AbstractSet, Dict, Iterable, List, Optional

import numpy as np

from django.conf import settings

from domain.entities import TrueFmdp
from expert.messages import BetterAction, DistinctVariable, RewardScopeVariable
from model_core.states import ActionId, PartialState, VariableId
from planner.services.svi import ValueModel, full_svi, greedy_action
from simulator.episodes import EpisodeTracker


logger = logging.getLogger(__name__)

# Q 비교 시 부동소수 오차로 생기는 가짜 우위 무시
Q_MARGIN = 1e-9


class ProtocolViolation(ValueError):
    """전문가가 답할 수 없는 질의 (학습자 쪽 버그)"""


class ExpertOracle:
    """실제 모델을 아는 전문가: 성능 감시, 조언, 질의 응답"""

    def __init__(
        self,
        domain: TrueFmdp,
        mu: int,
        beta: float,
        kappa: int,
        evidence: Iterable[VariableId] = (),
        tolerance: Optional[float] = None,
        max_iterations: Optional[int] = None,
        model: Optional[ValueModel] = None,
    ) -> None:
        self.domain = domain
        self.mu = mu
        self.beta = beta
        self.kappa = kappa
        if model is None:
            model = full_svi(
                domain.reward,
                domain.cpds,
                domain.discount,
                domain.terminal_tree(),
                tolerance=tolerance or settings.FMDP_SVI_TOLERANCE,
                max_iterations=max_iterations or settings.FMDP_SVI_MAX_ITERATIONS,
            )
        self.model = model
        self.start_value = float(
            np.mean([model.state_value(s) for s in domain.start_states()])
        )
        self.last_step = 0
        self.last_episode = 0
        self.evidence = set(evidence)
        self.history: Dict[int, PartialState] = {}
        self.advice_count = 0
        self.query_count = 0
        self.utterances: List[BetterAction] = []
        logger.info(
            f"[Expert] 최적 가치 계산 완료: 시작 상태 기대값 {self.start_value:.4f} "
            f"({model.iterations}회 반복)"
        )

    def best_action(self, state: PartialState) -> ActionId:
        return greedy_action(self.model.q_trees, state)

    def observe(self, step: int, state: PartialState) -> None:
        self.history[step] = state

    def error(self, tracker: EpisodeTracker, state: PartialState) -> float:
        """마지막 발화 이후 에피소드들의 근사 정책 오차

        창은 마지막 발화가 있던 에피소드 n' 부터 현재 에피소드 n 까지이며 n' 자신도 포함한다.
        진행 중인 에피소드는 현재 상태부터 최적 정책을 따른다고 보고 반환값을 추정한다.
        """
        window = list(tracker.completed_since(self.last_episode))
        if tracker.active:
            window.append(
                tracker.partial_return(
                    self.model.state_value(state), self.domain.reward_of(state)
                )
            )
        if not window:
            return 0.0
        return self.start_value - float(np.mean(window))

    def monitor(
        self,
        step: int,
        episode: int,
        episode_step: int,
        state: PartialState,
        action: ActionId,
        tracker: EpisodeTracker,
    ) -> Optional[BetterAction]:
        self.observe(step, state)
        if step - self.last_step <= self.mu:
            return None
        if episode_step <= self.kappa and self.error(tracker, state) <= self.beta:
            return None
        q_values = self.model.q_values(state)
        better = self.best_action(state)
        if q_values[better] <= q_values[action] + Q_MARGIN:
            return None

        advice = BetterAction(step, better, action)
        self.assert_truthful(advice)
        self.last_step = step
        self.last_episode = episode
        self.advice_count += 1
        self.utterances.append(advice)
        logger.info(
            f"[Expert] 조언 #{self.advice_count}: 단계 {step}에서 {action} 대신 {better} "
            f"(에피소드 {episode}, {episode_step}단계째)"
        )
        return advice

    def assert_truthful(self, advice: BetterAction) -> None:
        state = self.history.get(advice.step)
        if state is None:
            raise ProtocolViolation(f"기록되지 않은 단계입니다: {advice.step}")
        q_values = self.model.q_values(state)
        if not q_values[advice.better] > q_values[advice.worse]:
            raise ProtocolViolation(f"사실이 아닌 조언입니다: {advice}")

    def answer_distinct_variable(self, step_a: int, step_b: int) -> DistinctVariable:
        """두 기준 상태에서 값이 다른 변수 하나 (학습자가 모를 법한 변수 우선)"""
        states = [self.history.get(step) for step in (step_a, step_b)]
        if states[0] is None or states[1] is None:
            raise ProtocolViolation(f"기록되지 않은 단계입니다: {step_a}, {step_b}")
        first, second = states
        differing = [
            var for var in self.domain.canonical_variables if first[var] != second[var]
        ]
        if not differing:
            raise ProtocolViolation(f"단계 {step_a}와 {step_b}의 상태가 같습니다.")
        unseen = [var for var in differing if var not in self.evidence]
        variable = (unseen or differing)[0]
        self.evidence.add(variable)
        self.query_count += 1
        logger.info(f"[Expert] 구별 변수 질의 (단계 {step_a}, {step_b}) 응답: {variable}")
        return DistinctVariable(variable)

    def answer_reward_scope(self, known: AbstractSet[VariableId]) -> RewardScopeVariable:
        self.evidence.update(known)
        missing = sorted(self.domain.reward_scope() - set(known))
        if not missing:
            raise ProtocolViolation(f"보상 범위를 이미 모두 알고 있습니다: {sorted(known)}")
        variable = missing[0]
        self.evidence.add(variable)
        self.query_count += 1
        logger.info(f"[Expert] 보상 범위 질의 응답: {variable}")
        return RewardScopeVariable(variable)
