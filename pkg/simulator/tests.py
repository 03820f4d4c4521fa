from collections import Counter

import numpy as np

from django.test import SimpleTestCase

from domain.parser import DATA_DIR, parse_domain_file
from model_core.states import Awareness, PartialState
from simulator.episodes import EpisodeTracker, discounted_return
from simulator.services.environment import Environment, SimulationError


COFFEE = parse_domain_file(DATA_DIR / "coffee.sfmdp")
FACTORY = parse_domain_file(DATA_DIR / "factory.sfmdp")


def coffee_state(**values: int) -> PartialState:
    base = {"HUC": 0, "HRC": 0, "W": 0, "R": 0, "U": 0, "L": 0}
    base.update(values)
    return PartialState(base)


class ResetTests(SimpleTestCase):
    def test_coffee_start_is_non_terminal(self) -> None:
        env = Environment(COFFEE, np.random.default_rng(0))
        for _ in range(50):
            self.assertEqual(env.reset()["HUC"], 0)
        self.assertEqual(env.episode, 49)

    def test_factory_start_can_connect(self) -> None:
        env = Environment(FACTORY, np.random.default_rng(0))
        for _ in range(20):
            state = env.reset()
            self.assertEqual(state["CONNECTED"], 0)
            self.assertEqual(state["JOINT"], 0)
            self.assertEqual(state["GLUE"], 1)

    def test_same_seed_same_resets(self) -> None:
        first = Environment(COFFEE, np.random.default_rng(7))
        second = Environment(COFFEE, np.random.default_rng(7))
        self.assertEqual([first.reset() for _ in range(10)], [second.reset() for _ in range(10)])

    def test_start_set_covers_all_non_terminals(self) -> None:
        env = Environment(COFFEE, np.random.default_rng(3))
        seen = {env.reset() for _ in range(2000)}
        self.assertEqual(seen, set(COFFEE.start_states()))


class StepTests(SimpleTestCase):
    def test_deliver_coffee_probability(self) -> None:
        env = Environment(COFFEE, np.random.default_rng(1))
        hits = 0
        draws = 20000
        for _ in range(draws):
            env.state, env.terminal = coffee_state(HRC=1, L=1), False
            next_state, _, _ = env.step("DELC")
            hits += next_state["HUC"]
        sigma = np.sqrt(0.8 * 0.2 / draws)
        self.assertLess(abs(hits / draws - 0.8), 3 * sigma)

    def test_deterministic_cpd(self) -> None:
        env = Environment(FACTORY, np.random.default_rng(2))
        for _ in range(20):
            env.reset()
            next_state, reward, terminal = env.step("GLUE")
            self.assertEqual(next_state["CONNECTED"], 1)
            self.assertEqual(next_state["JOINT"], 1)
            self.assertTrue(terminal)
            self.assertEqual(reward, FACTORY.reward_of(next_state))

    def test_joint_frequencies_match_factored_product(self) -> None:
        env = Environment(COFFEE, np.random.default_rng(5))
        start = coffee_state(R=1, U=0, W=0, L=0)
        draws = 100000
        counts: Counter = Counter()
        for _ in range(draws):
            env.state, env.terminal = start, False
            next_state, _, _ = env.step("MOVE")
            counts[(next_state["W"], next_state["L"])] += 1
        expected = {
            (w, loc): (0.9 if w else 0.1) * (0.9 if loc else 0.1)
            for w in (0, 1)
            for loc in (0, 1)
        }
        for outcome, probability in expected.items():
            sigma = np.sqrt(probability * (1 - probability) / draws)
            self.assertLess(abs(counts[outcome] / draws - probability), 3 * sigma + 1e-12)

    def test_reward_is_next_state_reward(self) -> None:
        env = Environment(COFFEE, np.random.default_rng(4))
        env.reset()
        for _ in range(30):
            next_state, reward, terminal = env.step("MOVE")
            self.assertEqual(reward, COFFEE.reward_of(next_state))
            self.assertFalse(terminal)

    def test_unknown_action(self) -> None:
        env = Environment(COFFEE, np.random.default_rng(0))
        env.reset()
        with self.assertRaises(SimulationError):
            env.step("FLY")

    def test_step_after_terminal_needs_reset(self) -> None:
        env = Environment(FACTORY, np.random.default_rng(0))
        env.reset()
        env.step("GLUE")
        with self.assertRaises(SimulationError):
            env.step("GLUE")

    def test_step_before_reset(self) -> None:
        with self.assertRaises(SimulationError):
            Environment(COFFEE, np.random.default_rng(0)).step("MOVE")

    def test_same_seed_same_trajectory(self) -> None:
        def trajectory(seed: int) -> list:
            env = Environment(COFFEE, np.random.default_rng(seed))
            env.reset()
            return [env.step(action) for action in ["MOVE", "BUYC", "MOVE", "GETU"] * 3]

        self.assertEqual(trajectory(11), trajectory(11))


class ObserveTests(SimpleTestCase):
    def setUp(self) -> None:
        self.env = Environment(COFFEE, np.random.default_rng(0))
        self.state = coffee_state(R=1, L=1)

    def test_full_awareness_is_identity(self) -> None:
        awareness = Awareness(set(COFFEE.variables), set(COFFEE.actions), {"HUC"})
        self.assertEqual(self.env.observe(self.state, awareness), self.state)

    def test_initial_awareness(self) -> None:
        awareness = Awareness({"HUC"}, {"MOVE"}, {"HUC"})
        self.assertEqual(self.env.observe(self.state, awareness), PartialState({"HUC": 0}))

    def test_empty_awareness(self) -> None:
        self.assertEqual(len(self.env.observe(self.state, Awareness())), 0)


class EpisodeTrackerTests(SimpleTestCase):
    def test_discounted_return_includes_start_reward(self) -> None:
        self.assertAlmostEqual(discounted_return([0.1, 0.1, 1.0], 0.8), 0.1 + 0.08 + 0.64)

    def test_tracker_matches_discounted_return(self) -> None:
        tracker = EpisodeTracker(0.8)
        tracker.begin(0.1)
        tracker.record(0.1)
        tracker.record(1.0)
        self.assertAlmostEqual(tracker.finish(), discounted_return([0.1, 0.1, 1.0], 0.8))
        self.assertFalse(tracker.active)

    def test_partial_return_replaces_current_reward_by_value(self) -> None:
        tracker = EpisodeTracker(0.5)
        tracker.begin(0.0)
        tracker.record(0.2)
        # 현재 상태 보상 0.2를 가치 1.0으로 교체
        self.assertAlmostEqual(tracker.partial_return(1.0, 0.2), 0.5)
