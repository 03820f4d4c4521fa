import math

from typing import List

import numpy as np

from django.test import SimpleTestCase

from domain.parser import DATA_DIR, parse_domain_file
from model_core.states import PartialState
from model_core.trees import (
    DecisionTree,
    Leaf,
    Test,
    is_path_consistent,
    map_leaves,
    tree_eval,
    tree_merge,
    tree_reduce,
)
from planner.flat import FlatModel
from planner.policy import (
    policy_error_approx,
    policy_error_exact,
    policy_error_sampled,
    sampled_policy_value,
)
from planner.render import render_tree
from planner.services.regress import RegressionError, regress, scalar_leaves
from planner.services.svi import (
    ConvergenceError,
    ValueModel,
    full_svi,
    greedy_action,
    greedy_policy,
    inc_svi,
    max_leaf_change,
)


COFFEE = parse_domain_file(DATA_DIR / "coffee.sfmdp")
COFFEE_FLAT = FlatModel(COFFEE)
TERMINAL = COFFEE.terminal_tree()


def random_value_tree(rng: np.random.Generator, depth: int) -> DecisionTree:
    variables = COFFEE.variable_ids
    if depth == 0 or rng.random() < 0.25:
        return Leaf(float(rng.uniform(-1.0, 1.0)))
    return Test(
        variables[int(rng.integers(len(variables)))],
        int(rng.integers(2)),
        random_value_tree(rng, depth - 1),
        random_value_tree(rng, depth - 1),
    )


def state_values(tree: DecisionTree) -> np.ndarray:
    return np.array([float(tree_eval(tree, s)) for s in COFFEE_FLAT.states])


class RegressTests(SimpleTestCase):
    def test_constant_value(self) -> None:
        q = regress(Leaf(2.0), COFFEE.cpds["MOVE"], COFFEE.reward, 0.8, TERMINAL)
        for state in COFFEE.iter_states():
            expected = COFFEE.reward_of(state)
            if not COFFEE.is_terminal(state):
                expected += 0.8 * 2.0
            self.assertAlmostEqual(tree_eval(q, state), expected, delta=1e-12)

    def test_zero_discount_gives_reward(self) -> None:
        value = random_value_tree(np.random.default_rng(0), 4)
        q = regress(value, COFFEE.cpds["DELC"], COFFEE.reward, 0.0, TERMINAL)
        for state in COFFEE.iter_states():
            self.assertAlmostEqual(tree_eval(q, state), COFFEE.reward_of(state))

    def test_matches_flat_backup(self) -> None:
        rng = np.random.default_rng(1)
        for _ in range(10):
            value = tree_reduce(random_value_tree(rng, 5))
            flat_q = COFFEE_FLAT.backup(state_values(value))
            for row, action in enumerate(COFFEE_FLAT.actions):
                q = regress(value, COFFEE.cpds[action], COFFEE.reward, 0.8, TERMINAL)
                self.assertTrue(is_path_consistent(q))
                np.testing.assert_allclose(state_values(q), flat_q[row], atol=1e-9)

    def test_missing_cpd(self) -> None:
        value = Test("W", 1, Leaf(1.0), Leaf(0.0))
        with self.assertRaises(RegressionError):
            regress(value, {"HUC": COFFEE.cpds["MOVE"]["HUC"]}, COFFEE.reward, 0.8)

    def test_empty_label_leaves_become_default(self) -> None:
        tree = scalar_leaves(Test("W", 1, Leaf(None), Leaf(0.5)))
        self.assertEqual(tree_eval(tree, {"W": 1}), 0.0)
        self.assertEqual(tree_eval(tree, {"W": 0}), 0.5)


class SviTests(SimpleTestCase):
    def test_zero_fixpoint(self) -> None:
        model = inc_svi(ValueModel(), Leaf(0.0), {"MOVE": COFFEE.cpds["MOVE"]}, 0.8)
        self.assertEqual(tree_eval(model.value, {}), 0.0)
        self.assertEqual(model.iterations, 1)

    def test_value_is_max_of_q(self) -> None:
        merged = tree_merge([Leaf(2.0), Leaf(3.0)], max)
        self.assertEqual(tree_eval(merged, {}), 3.0)

    def test_full_svi_matches_flat_value_iteration(self) -> None:
        model = full_svi(COFFEE.reward, COFFEE.cpds, 0.8, TERMINAL, tolerance=1e-8)
        flat_values = COFFEE_FLAT.value_iteration()
        np.testing.assert_allclose(state_values(model.value), flat_values, atol=1e-5)
        self.assertTrue(is_path_consistent(model.value))
        for tree in model.q_trees.values():
            self.assertTrue(is_path_consistent(tree))

    def test_incremental_backups_contract(self) -> None:
        bound = math.ceil(math.log(1e-6 * (1 - 0.8)) / math.log(0.8))
        model = ValueModel()
        changes: List[float] = []
        for _ in range(bound):
            updated = inc_svi(model, COFFEE.reward, COFFEE.cpds, 0.8, TERMINAL)
            changes.append(max_leaf_change(model.value, updated.value))
            model = updated
        flat_values = COFFEE_FLAT.value_iteration()
        np.testing.assert_allclose(state_values(model.value), flat_values, atol=1e-6)
        for before, after in zip(changes[5:], changes[6:]):
            self.assertLessEqual(after, 0.8 * before + 1e-9)

    def test_zero_discount_value_is_reward(self) -> None:
        model = full_svi(COFFEE.reward, COFFEE.cpds, 0.0, TERMINAL)
        for state in COFFEE.iter_states():
            self.assertAlmostEqual(model.state_value(state), COFFEE.reward_of(state))

    def test_iteration_cap(self) -> None:
        with self.assertRaises(ConvergenceError):
            full_svi(COFFEE.reward, COFFEE.cpds, 0.8, TERMINAL, tolerance=1e-12, max_iterations=3)


class GreedyPolicyTests(SimpleTestCase):
    @classmethod
    def setUpClass(cls) -> None:
        super().setUpClass()
        cls.optimal = full_svi(COFFEE.reward, COFFEE.cpds, 0.8, TERMINAL)

    def test_single_action_is_constant(self) -> None:
        policy = greedy_policy({"MOVE": self.optimal.q_trees["MOVE"]})
        self.assertIsInstance(policy, Leaf)
        self.assertEqual(policy.payload, "MOVE")  # type: ignore[union-attr]

    def test_deliver_when_holding_coffee_at_office(self) -> None:
        state = PartialState({"HUC": 0, "HRC": 1, "W": 0, "R": 0, "U": 0, "L": 1})
        self.assertEqual(greedy_action(self.optimal.q_trees, state), "DELC")
        self.assertEqual(tree_eval(greedy_policy(self.optimal.q_trees), state), "DELC")

    def test_scaling_keeps_argmax(self) -> None:
        policy = greedy_policy(self.optimal.q_trees)
        scaled = {
            a: map_leaves(q, lambda v: 2.0 * v + 1.0) for a, q in self.optimal.q_trees.items()
        }
        scaled_policy = greedy_policy(scaled)
        for state in COFFEE.iter_states():
            self.assertEqual(tree_eval(policy, state), tree_eval(scaled_policy, state))

    def test_missing_q_counts_as_zero(self) -> None:
        self.assertEqual(greedy_action({}, {}, ["MOVE", "BUYC"]), "BUYC")


class PolicyErrorTests(SimpleTestCase):
    @classmethod
    def setUpClass(cls) -> None:
        super().setUpClass()
        cls.optimal = full_svi(COFFEE.reward, COFFEE.cpds, 0.8, TERMINAL, tolerance=1e-10)
        cls.values = COFFEE_FLAT.value_iteration()
        cls.start_value = COFFEE_FLAT.start_value(cls.values)

    def optimal_policy(self, state: PartialState) -> str:
        return greedy_action(self.optimal.q_trees, state)

    def test_optimal_policy_has_no_error(self) -> None:
        error = policy_error_exact(self.optimal_policy, COFFEE_FLAT, self.values)
        self.assertAlmostEqual(error, 0.0, delta=1e-8)

    def test_single_action_policy_has_positive_error(self) -> None:
        error = policy_error_exact(lambda state: "MOVE", COFFEE_FLAT, self.values)
        self.assertGreater(error, 0.0)

    def test_epsilon_greedy_bound(self) -> None:
        epsilon = 0.2
        flat = COFFEE_FLAT
        chosen = [self.optimal_policy(s) for s in flat.states]
        optimal_matrix = np.stack([flat.transitions(a)[i] for i, a in enumerate(chosen)])
        uniform = np.mean([flat.transitions(a) for a in flat.actions], axis=0)
        matrix = (1 - epsilon) * optimal_matrix + epsilon * uniform
        continuation = np.where(flat.terminal, 0.0, flat.discount)
        mixed = np.linalg.solve(np.eye(len(flat)) - continuation[:, None] * matrix, flat.rewards)
        error = float(flat.start @ (self.values - mixed))
        spread = flat.rewards.max() - flat.rewards.min()
        self.assertGreaterEqual(error, -1e-9)
        self.assertLessEqual(error, epsilon * spread / (1 - flat.discount) ** 2)

    def test_approx_error(self) -> None:
        self.assertEqual(policy_error_approx([self.start_value], self.start_value), 0.0)
        self.assertEqual(policy_error_approx([0.0, 0.0], self.start_value), self.start_value)
        with self.assertRaises(ValueError):
            policy_error_approx([], self.start_value)

    def test_sampled_optimal_returns_approach_start_value(self) -> None:
        rng = np.random.default_rng(2)
        estimate = sampled_policy_value(COFFEE, self.optimal_policy, rng, 500, 200)
        self.assertLess(abs(estimate - self.start_value), 0.05)
        error = policy_error_sampled(
            COFFEE, self.optimal_policy, self.start_value, np.random.default_rng(3)
        )
        self.assertLess(abs(error), 0.05)


class RenderTests(SimpleTestCase):
    def test_reward_tree_dump(self) -> None:
        text = render_tree(COFFEE.reward, COFFEE.variables, title="reward")
        lines = text.splitlines()
        self.assertEqual(lines[0], "reward")
        self.assertEqual(lines[1], "HUC = 0 ?")
        self.assertTrue(any(line.strip() == "yes: 1" for line in lines))

    def test_location_labels(self) -> None:
        text = render_tree(Test("L", 1, Leaf("DELC"), Leaf("MOVE")), COFFEE.variables)
        self.assertEqual(text, "L = office ?\n  yes: DELC\n  no: MOVE\n")
