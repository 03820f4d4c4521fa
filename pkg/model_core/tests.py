import itertools

from typing import Dict, List

import numpy as np

from django.test import SimpleTestCase

from model_core.states import Awareness, PartialState, VariableDecl, project
from model_core.trees import (
    DecisionTree,
    Distribution,
    Leaf,
    PayloadMismatchError,
    Test,
    is_path_consistent,
    tree_eval,
    tree_merge,
    tree_reduce,
    trees_equal,
)


def random_tree(rng: np.random.Generator, variables: List[str], depth: int) -> DecisionTree:
    if depth == 0 or rng.random() < 0.2:
        return Leaf(float(rng.integers(0, 4)))
    variable = variables[int(rng.integers(len(variables)))]
    return Test(
        variable,
        int(rng.integers(2)),
        random_tree(rng, variables, depth - 1),
        random_tree(rng, variables, depth - 1),
    )


def complete_states(variables: List[str]) -> List[Dict[str, int]]:
    return [
        dict(zip(variables, values))
        for values in itertools.product((0, 1), repeat=len(variables))
    ]


class PartialStateTests(SimpleTestCase):
    def test_project_selects_subset(self) -> None:
        state = PartialState({"HUC": 1, "R": 0})
        self.assertEqual(project(state, {"HUC"}), PartialState({"HUC": 1}))

    def test_project_on_empty_set(self) -> None:
        state = PartialState({"HUC": 1, "R": 0})
        self.assertEqual(len(project(state, set())), 0)

    def test_project_drops_absent_variables(self) -> None:
        state = PartialState({"HUC": 0})
        self.assertEqual(project(state, {"HUC", "W"}), PartialState({"HUC": 0}))

    def test_project_is_idempotent_and_monotone(self) -> None:
        state = PartialState({"A": 0, "B": 1, "C": 1, "D": 0})
        first, second = {"A", "B", "C"}, {"B", "C", "D"}
        self.assertEqual(
            project(project(state, first), second), project(state, first & second)
        )

    def test_hash_matches_equality(self) -> None:
        a = PartialState({"X": 1, "Y": 0})
        b = PartialState([("Y", 0), ("X", 1)])
        self.assertEqual(a, b)
        self.assertEqual(len({a, b}), 1)

    def test_validate_rejects_out_of_range_value(self) -> None:
        decls = {"X": VariableDecl("X", "X", ("0", "1"))}
        with self.assertRaises(ValueError):
            PartialState({"X": 2}).validate(decls)

    def test_variable_domain_must_be_unique(self) -> None:
        with self.assertRaises(ValueError):
            VariableDecl("X", "X", ("a", "a"))


class AwarenessTests(SimpleTestCase):
    def test_reward_scope_must_be_known(self) -> None:
        with self.assertRaises(ValueError):
            Awareness({"HUC"}, {"MOVE"}, {"W"})

    def test_adding_scope_variable_adds_variable(self) -> None:
        awareness = Awareness({"HUC"}, {"MOVE"}, {"HUC"})
        self.assertTrue(awareness.add_reward_scope("W"))
        self.assertIn("W", awareness.variables)
        self.assertFalse(awareness.add_variable("W"))


class TreeEvalTests(SimpleTestCase):
    def setUp(self) -> None:
        self.reward = Test(
            "X",
            1,
            Test("Y", 0, Leaf(1.0), Leaf(0.5)),
            Leaf(0.0),
        )

    def test_walks_tests(self) -> None:
        self.assertEqual(tree_eval(self.reward, {"X": 1, "Y": 0}), 1.0)

    def test_single_leaf(self) -> None:
        self.assertEqual(tree_eval(Leaf(7.0), {"Q": 1}), 7.0)

    def test_unassigned_variable_fails(self) -> None:
        tree = Test("Z", 1, Leaf("pass"), Leaf("fail"))
        self.assertEqual(tree_eval(tree, {"X": 1}), "fail")


class TreeMergeTests(SimpleTestCase):
    def test_max_of_constants(self) -> None:
        merged = tree_merge([Leaf(2.0), Leaf(3.0)], max)
        self.assertTrue(trees_equal(merged, Leaf(3.0)))

    def test_self_merge_is_identity_in_evaluation(self) -> None:
        rng = np.random.default_rng(1)
        variables = ["A", "B", "C"]
        tree = random_tree(rng, variables, 4)
        merged = tree_merge([tree, tree], max)
        for state in complete_states(variables):
            self.assertEqual(tree_eval(merged, state), tree_eval(tree, state))

    def test_merge_matches_pointwise_max(self) -> None:
        rng = np.random.default_rng(2)
        variables = ["A", "B", "C", "D", "E", "F"]
        for _ in range(10):
            trees = [random_tree(rng, variables, 5) for _ in range(3)]
            merged = tree_merge(trees, max)
            self.assertTrue(is_path_consistent(merged))
            for state in complete_states(variables):
                self.assertEqual(
                    tree_eval(merged, state), max(tree_eval(t, state) for t in trees)
                )

    def test_max_merge_commutes_and_associates(self) -> None:
        rng = np.random.default_rng(3)
        variables = ["A", "B", "C", "D"]
        a, b, c = (random_tree(rng, variables, 4) for _ in range(3))
        left = tree_merge([tree_merge([a, b], max), c], max)
        right = tree_merge([c, tree_merge([b, a], max)], max)
        for state in complete_states(variables):
            self.assertEqual(tree_eval(left, state), tree_eval(right, state))

    def test_mixed_payloads_rejected(self) -> None:
        with self.assertRaises(PayloadMismatchError):
            tree_merge([Leaf(1.0), Leaf(Distribution((0.5, 0.5)))], max)


class TreeReduceTests(SimpleTestCase):
    def test_identical_branches_collapse(self) -> None:
        tree = Test("X", 1, Leaf(5.0), Leaf(5.0))
        self.assertTrue(trees_equal(tree_reduce(tree), Leaf(5.0)))

    def test_reduced_tree_is_fixpoint(self) -> None:
        tree = Test("X", 1, Leaf(1.0), Test("Y", 0, Leaf(2.0), Leaf(3.0)))
        self.assertTrue(trees_equal(tree_reduce(tree), tree))

    def test_contradicting_tests_removed(self) -> None:
        tree = Test("X", 1, Test("X", 1, Leaf(1.0), Leaf(9.0)), Leaf(0.0))
        reduced = tree_reduce(tree)
        self.assertTrue(is_path_consistent(reduced))
        self.assertTrue(trees_equal(reduced, Test("X", 1, Leaf(1.0), Leaf(0.0))))

    def test_random_trees_keep_evaluation(self) -> None:
        rng = np.random.default_rng(4)
        variables = ["A", "B", "C", "D"]
        for _ in range(25):
            tree = random_tree(rng, variables, 6)
            reduced = tree_reduce(tree)
            self.assertTrue(is_path_consistent(reduced))
            for state in complete_states(variables):
                self.assertEqual(tree_eval(reduced, state), tree_eval(tree, state))

    def test_multivalued_exclusion_is_not_promoted(self) -> None:
        # L에서 0, 1을 배제해도 L=2로 추론하지 않는다
        tree = Test("L", 0, Leaf(0.0), Test("L", 1, Leaf(1.0), Test("L", 2, Leaf(2.0), Leaf(3.0))))
        reduced = tree_reduce(tree)
        self.assertEqual(tree_eval(reduced, {"L": 2}), 2.0)
        self.assertEqual(tree_eval(reduced, {}), 3.0)


class DistributionTests(SimpleTestCase):
    def test_rejects_unnormalized(self) -> None:
        with self.assertRaises(ValueError):
            Distribution((0.5, 0.4))

    def test_point_mass(self) -> None:
        self.assertEqual(Distribution.point(1, 3).probs, (0.0, 1.0, 0.0))
