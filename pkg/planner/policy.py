import logging

from typing import Callable, Sequence

import numpy as np

from domain.entities import TrueFmdp
from model_core.states import ActionId, PartialState
from planner.flat import FlatModel, Policy
from simulator.episodes import EpisodeTracker
from simulator.services.environment import Environment


logger = logging.getLogger(__name__)


def policy_error_exact(policy: Policy, flat: FlatModel, optimal_values: np.ndarray) -> float:
    """Σ_{s0} P(s0) (V+(s0) - V_π(s0)), 시작 상태 균등 분포"""
    policy_values = flat.evaluate_policy(policy)
    return float(flat.start @ (optimal_values - policy_values))


def policy_error_approx(returns: Sequence[float], optimal_start_value: float) -> float:
    """Σ_{s0} P(s0) V+(s0) - 최근 에피소드 반환값 평균"""
    if not returns:
        raise ValueError("반환값 창이 비어 있습니다.")
    return optimal_start_value - float(np.mean(returns))


def sampled_policy_value(
    domain: TrueFmdp,
    policy: Callable[[PartialState], ActionId],
    rng: np.random.Generator,
    episodes: int,
    cutoff: int,
) -> float:
    """정책을 따르는 에피소드를 모의 실행해 Σ P(s0) V_π(s0) 를 추정"""
    if episodes < 1:
        raise ValueError(f"에피소드 수는 1 이상이어야 합니다: {episodes}")
    env = Environment(domain, rng)
    tracker = EpisodeTracker(domain.discount)
    for _ in range(episodes):
        state = env.reset()
        tracker.begin(domain.reward_of(state))
        terminal = False
        while not terminal and tracker.steps < cutoff:
            state, reward, terminal = env.step(policy(state))
            tracker.record(reward)
        tracker.finish(cutoff=not terminal)
    truncated = sum(tracker.cutoffs)
    if truncated:
        logger.warning(f"[Policy] 표본 에피소드 {truncated}개가 {cutoff}단계에서 잘렸습니다.")
    return float(np.mean(tracker.returns))


def policy_error_sampled(
    domain: TrueFmdp,
    policy: Callable[[PartialState], ActionId],
    optimal_start_value: float,
    rng: np.random.Generator,
    episodes: int = 500,
    cutoff: int = 500,
) -> float:
    return optimal_start_value - sampled_policy_value(domain, policy, rng, episodes, cutoff)
