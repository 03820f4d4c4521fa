from functools import lru_cache
from typing import Callable, Set

import numpy as np

from django.test import SimpleTestCase

from domain.parser import DATA_DIR, parse_domain_file
from expert.messages import BetterAction
from expert.services.oracle import ExpertOracle, ProtocolViolation
from model_core.states import ActionId, PartialState
from planner.services.svi import ValueModel, full_svi
from simulator.episodes import EpisodeTracker
from simulator.services.environment import Environment


COFFEE = parse_domain_file(DATA_DIR / "coffee.sfmdp")


@lru_cache(maxsize=None)
def coffee_model() -> ValueModel:
    return full_svi(COFFEE.reward, COFFEE.cpds, COFFEE.discount, COFFEE.terminal_tree())


def coffee_expert(mu: int = 10, beta: float = 0.1, kappa: int = 50) -> ExpertOracle:
    return ExpertOracle(COFFEE, mu, beta, kappa, evidence=["HUC"], model=coffee_model())


def coffee_state(**values: int) -> PartialState:
    full = {"HUC": 0, "HRC": 0, "W": 0, "R": 0, "U": 0, "L": 0}
    full.update(values)
    return PartialState(full)


def run_with_expert(
    expert: ExpertOracle, choose: Callable[[PartialState], ActionId], steps: int, seed: int
) -> None:
    env = Environment(COFFEE, np.random.default_rng(seed))
    tracker = EpisodeTracker(COFFEE.discount)
    state = env.reset()
    tracker.begin(COFFEE.reward_of(state))
    for step in range(1, steps + 1):
        action = choose(state)
        expert.monitor(step, tracker.index, tracker.steps, state, action, tracker)
        state, reward, terminal = env.step(action)
        tracker.record(reward)
        if terminal or tracker.steps >= 500:
            tracker.finish(cutoff=not terminal)
            state = env.reset()
            tracker.begin(COFFEE.reward_of(state))


class MonitorTests(SimpleTestCase):
    def setUp(self) -> None:
        self.expert = coffee_expert()
        self.tracker = EpisodeTracker(COFFEE.discount)
        self.tracker.begin(COFFEE.reward_of(coffee_state()))

    def test_start_value_averages_start_states(self) -> None:
        values = [coffee_model().state_value(s) for s in COFFEE.start_states()]
        self.assertEqual(len(values), 32)
        self.assertAlmostEqual(self.expert.start_value, float(np.mean(values)))

    def test_quiet_within_tolerance_window(self) -> None:
        state = coffee_state(HRC=1, L=1)
        advice = self.expert.monitor(10, 0, 60, state, "MOVE", self.tracker)
        self.assertIsNone(advice)
        self.assertEqual(self.expert.history[10], state)

    def test_overrun_episode_gets_unknown_action_advice(self) -> None:
        for _ in range(51):
            self.tracker.record(0.1)
        state = coffee_state(HRC=1, L=1)
        advice = self.expert.monitor(60, 0, 51, state, "MOVE", self.tracker)
        self.assertEqual(advice, BetterAction(60, "DELC", "MOVE"))
        self.assertEqual(self.expert.advice_count, 1)
        self.assertEqual(self.expert.last_step, 60)
        again = self.expert.monitor(65, 0, 56, state, "MOVE", self.tracker)
        self.assertIsNone(again)

    def test_no_advice_when_action_is_optimal(self) -> None:
        for _ in range(60):
            self.tracker.record(0.0)
        state = coffee_state(HRC=1, L=1)
        self.assertIsNone(self.expert.monitor(70, 0, 60, state, "DELC", self.tracker))

    def test_quiet_when_returns_are_near_optimal(self) -> None:
        state = coffee_state()
        optimistic = coffee_model().state_value(state)
        self.tracker.finish()
        self.tracker.returns[-1] = 2 * self.expert.start_value - optimistic
        self.tracker.begin(COFFEE.reward_of(state))
        error = self.expert.error(self.tracker, state)
        self.assertAlmostEqual(error, 0.0, delta=1e-12)
        self.assertIsNone(self.expert.monitor(20, 1, 0, state, "GETU", self.tracker))

    def test_error_window_starts_at_last_advice_episode(self) -> None:
        tracker = EpisodeTracker(COFFEE.discount)
        for value in (0.0, 1.0, 2.0):
            tracker.begin(0.0)
            tracker.finish()
            tracker.returns[-1] = value
        self.expert.last_episode = 1
        error = self.expert.error(tracker, coffee_state())
        self.assertAlmostEqual(error, self.expert.start_value - 1.5)
        self.expert.last_episode = 3
        self.assertEqual(self.expert.error(tracker, coffee_state()), 0.0)

    def test_optimal_agent_hears_nothing(self) -> None:
        expert = coffee_expert()
        run_with_expert(expert, expert.best_action, 2000, seed=4)
        self.assertEqual(expert.advice_count, 0)

    def test_utterances_are_truthful_and_spaced(self) -> None:
        expert = coffee_expert()
        run_with_expert(expert, lambda state: "MOVE", 1000, seed=5)
        self.assertGreater(expert.advice_count, 0)
        steps = [advice.step for advice in expert.utterances]
        for earlier, later in zip([0] + steps, steps):
            self.assertGreater(later - earlier, expert.mu)
        for advice in expert.utterances:
            expert.assert_truthful(advice)
            self.assertEqual(advice.better, expert.best_action(expert.history[advice.step]))


class QueryTests(SimpleTestCase):
    def setUp(self) -> None:
        self.expert = coffee_expert()

    def test_unique_witness(self) -> None:
        self.expert.observe(1, coffee_state(R=0))
        self.expert.observe(2, coffee_state(R=1))
        self.assertEqual(self.expert.answer_distinct_variable(1, 2).variable, "R")
        self.assertIn("R", self.expert.evidence)
        self.assertEqual(self.expert.query_count, 1)

    def test_canonical_order_among_unknown(self) -> None:
        self.expert.observe(1, coffee_state(R=0, U=0))
        self.expert.observe(2, coffee_state(R=1, U=1))
        self.assertEqual(self.expert.answer_distinct_variable(1, 2).variable, "R")

    def test_prefers_variables_outside_evidence(self) -> None:
        self.expert.evidence.add("R")
        self.expert.observe(1, coffee_state(R=0, U=0))
        self.expert.observe(2, coffee_state(R=1, U=1))
        self.assertEqual(self.expert.answer_distinct_variable(2, 1).variable, "U")

    def test_identical_states_violate_protocol(self) -> None:
        self.expert.observe(1, coffee_state())
        self.expert.observe(2, coffee_state())
        with self.assertRaises(ProtocolViolation):
            self.expert.answer_distinct_variable(1, 2)
        with self.assertRaises(ProtocolViolation):
            self.expert.answer_distinct_variable(1, 3)

    def test_reward_scope(self) -> None:
        self.assertEqual(self.expert.answer_reward_scope({"HUC"}).variable, "W")
        with self.assertRaises(ProtocolViolation):
            self.expert.answer_reward_scope({"HUC", "W"})
        self.assertEqual(self.expert.query_count, 1)

    def test_repeated_scope_queries_reveal_whole_scope(self) -> None:
        known: Set[str] = set()
        while known != COFFEE.reward_scope():
            known.add(self.expert.answer_reward_scope(known).variable)
        self.assertEqual(known, {"HUC", "W"})
