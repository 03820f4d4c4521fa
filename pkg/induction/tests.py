import itertools

from typing import Callable, Dict, Iterator, List, Mapping, Sequence, Tuple

import numpy as np

from django.test import SimpleTestCase

from domain.parser import DATA_DIR, parse_domain_file
from induction.facts import DUPLICATE, INCONSISTENT, OK, RewardFacts
from induction.services.cpd_tree import (
    CpdTree,
    Region,
    dt_log_posterior,
    expected_params,
    tree_prior_from_alphas,
)
from induction.services.label_tree import LabelTree
from induction.services.repack import (
    OldModelConditional,
    TrialGrouping,
    new_variable_alphas,
    repack_action,
    repack_alphas,
)
from model_core.states import PartialState, VariableId
from model_core.trees import (
    DecisionTree,
    DirichletLeaf,
    Distribution,
    Leaf,
    Test,
    tree_eval,
    trees_equal,
)
from structure.services.posterior import ParentPosterior


COFFEE = parse_domain_file(DATA_DIR / "coffee.sfmdp")
BINARY = {"A": 2, "B": 2, "C": 2, "Z": 2}

Example = Tuple[Mapping[VariableId, int], int]


def structures(parents: Tuple[VariableId, ...], region: Region) -> Iterator[DecisionTree]:
    """부모 변수 위의 모든 경로 일관 이진 트리 구조"""
    yield Leaf(None)
    for position, allowed in enumerate(region):
        if len(allowed) < 2:
            continue
        for value in sorted(allowed):
            passed = region[:position] + (frozenset({value}),) + region[position + 1 :]
            failed = region[:position] + (allowed - {value},) + region[position + 1 :]
            for left, right in itertools.product(
                list(structures(parents, passed)), list(structures(parents, failed))
            ):
                yield Test(parents[position], value, left, right)


def uniform_tree(parents: Sequence[VariableId], examples: Sequence[Example] = ()) -> CpdTree:
    alphas = np.full((2 ** len(parents), 2), 0.5)
    return CpdTree("ACT", "X", parents, BINARY, 2, alphas, examples)


def sample_examples(
    rng: np.random.Generator,
    count: int,
    parents: Sequence[VariableId],
    rule: Callable[[Dict[VariableId, int]], float],
) -> List[Example]:
    examples = []
    for _ in range(count):
        state = {var: int(rng.integers(2)) for var in parents}
        examples.append((state, int(rng.random() < rule(state))))
    return examples


class ExpectedParamsTests(SimpleTestCase):
    def test_prior_mean(self) -> None:
        self.assertEqual(expected_params(DirichletLeaf([0.5, 0.5])).probs, (0.5, 0.5))

    def test_counts_and_alphas(self) -> None:
        probs = expected_params(DirichletLeaf([1.0, 1.0], [3.0, 1.0])).probs
        self.assertAlmostEqual(probs[0], 4 / 6)
        self.assertAlmostEqual(probs[1], 2 / 6)

    def test_is_probability_vector(self) -> None:
        rng = np.random.default_rng(0)
        for _ in range(50):
            alphas = rng.uniform(0.01, 5.0, size=3)
            counts = rng.integers(0, 100, size=3)
            probs = expected_params(DirichletLeaf(alphas, counts)).probs
            self.assertAlmostEqual(sum(probs), 1.0, delta=1e-9)
            self.assertTrue(all(p >= 0.0 for p in probs))


class CpdTreeTests(SimpleTestCase):
    def test_empty_tree_is_single_prior_leaf(self) -> None:
        cpd = uniform_tree(("A", "B"))
        self.assertIsInstance(cpd.tree, Leaf)
        self.assertEqual(dt_log_posterior(cpd.tree, informed=False), 0.0)

    def test_first_insert(self) -> None:
        cpd = uniform_tree(())
        cpd.insert({"A": 1}, 1)
        leaf = cpd.restructure()
        assert isinstance(leaf, Leaf)
        self.assertEqual(leaf.payload.counts.tolist(), [0.0, 1.0])

    def test_leaf_counts_are_conserved(self) -> None:
        cpd = uniform_tree(("A", "B"))
        for state, child in sample_examples(np.random.default_rng(1), 100, "AB", lambda s: 0.5):
            cpd.insert(state, child)
        cpd.restructure()
        total = sum(leaf.payload.counts.sum() for leaf in _leaves(cpd.tree))
        self.assertEqual(total, 100.0)

    def test_no_stale_nodes_is_identity(self) -> None:
        examples = sample_examples(np.random.default_rng(2), 20, "A", lambda s: 0.5)
        cpd = uniform_tree(("A",), examples)
        first = cpd.restructure()
        self.assertIs(cpd.restructure(), first)

    def test_incremental_tree_matches_exhaustive_optimum(self) -> None:
        examples = sample_examples(
            np.random.default_rng(3), 300, "ABC", lambda s: 0.9 if s["A"] and s["B"] else 0.2
        )
        cpd = uniform_tree(("A", "B", "C"))
        for step, (state, child) in enumerate(examples):
            cpd.insert(state, child)
            if step % 50 == 0:
                cpd.restructure()
        tree = cpd.restructure()
        root = tuple(frozenset({0, 1}) for _ in range(3))
        best = max(cpd.score_structure(t) for t in structures(("A", "B", "C"), root))
        self.assertAlmostEqual(cpd.score(), best, delta=1e-9)
        self.assertAlmostEqual(cpd.score_structure(tree), best, delta=1e-9)
        cpd.audit()

    def test_stream_with_changing_dependence_matches_batch(self) -> None:
        rng = np.random.default_rng(4)
        early = sample_examples(rng, 200, "AB", lambda s: 0.95 if s["A"] else 0.05)
        late = sample_examples(rng, 600, "AB", lambda s: 0.95 if s["B"] else 0.05)
        cpd = uniform_tree(("A", "B"), early)
        first = cpd.restructure()
        assert isinstance(first, Test)
        self.assertEqual(first.variable, "A")
        for state, child in late:
            cpd.insert(state, child)
        final = cpd.restructure()
        batch = uniform_tree(("A", "B"), early + late)
        self.assertTrue(trees_equal(final, batch.tree))
        self.assertFalse(trees_equal(first, final))
        cpd.audit()

    def test_learned_cpd_matches_generator(self) -> None:
        truth = COFFEE.cpds["DELC"]["HUC"]
        parents = ("HRC", "HUC", "L")
        rng = np.random.default_rng(5)
        cpd = CpdTree("DELC", "HUC", parents, COFFEE.sizes(), 2, np.full((8, 2), 0.5))
        for _ in range(4000):
            state = PartialState({var: int(rng.integers(2)) for var in parents})
            probs = tree_eval(truth, state).probs
            cpd.insert(state, int(rng.random() < probs[1]))
        learned = cpd.expected_tree()
        for values in itertools.product((0, 1), repeat=3):
            state = PartialState(dict(zip(parents, values)))
            self.assertLess(abs(tree_eval(learned, state)[1] - tree_eval(truth, state)[1]), 0.05)

    def test_audit_detects_tampered_leaf(self) -> None:
        examples = sample_examples(np.random.default_rng(6), 30, "A", lambda s: 0.5)
        cpd = uniform_tree(("A",), examples)
        next(iter(_leaves(cpd.tree))).payload.counts[0] += 1.0
        with self.assertRaises(AssertionError):
            cpd.audit()


class TreePriorTests(SimpleTestCase):
    def split(self, variable: VariableId) -> DecisionTree:
        return Test(variable, 0, Leaf(None), Leaf(None))

    def test_uniform_alphas_give_equal_priors(self) -> None:
        cpd = uniform_tree(("A", "B"))
        self.assertAlmostEqual(
            tree_prior_from_alphas(cpd.fill(self.split("A"), {})),
            tree_prior_from_alphas(cpd.fill(self.split("B"), {})),
        )

    def test_informative_alphas_favor_tracked_parent(self) -> None:
        mass = 5.0
        alphas = np.array(
            [[0.9, 0.1] if a == 0 else [0.1, 0.9] for a in (0, 1) for _ in (0, 1)]
        ) * (mass / 4)
        cpd = CpdTree("ACT", "X", ("A", "B"), BINARY, 2, alphas, informed=True)
        tracked = tree_prior_from_alphas(cpd.fill(self.split("A"), {}))
        irrelevant = tree_prior_from_alphas(cpd.fill(self.split("B"), {}))
        self.assertGreater(tracked, irrelevant)
        self.assertAlmostEqual(cpd.score_structure(self.split("A")), tracked)

    def test_single_leaf_without_data(self) -> None:
        leaf = Leaf(DirichletLeaf([2.0, 3.0]))
        self.assertEqual(dt_log_posterior(leaf, informed=False), 0.0)
        self.assertAlmostEqual(dt_log_posterior(leaf, informed=True), tree_prior_from_alphas(leaf))


class LabelTreeTests(SimpleTestCase):
    def test_reward_tree_reproduces_rewards(self) -> None:
        tree = LabelTree("reward", {"HUC", "W"}, COFFEE.sizes())
        for state in COFFEE.iter_states():
            tree.insert(state, COFFEE.reward_of(state))
        learned = tree.restructure()
        for state in COFFEE.iter_states():
            self.assertEqual(tree_eval(learned, state), COFFEE.reward_of(state))
        self.assertEqual(len(tree), 4)

    def test_xor_labels_are_separated(self) -> None:
        tree = LabelTree("xor", {"A", "B"}, BINARY)
        for a, b in itertools.product((0, 1), repeat=2):
            tree.insert({"A": a, "B": b}, bool(a ^ b))
        learned = tree.restructure()
        for a, b in itertools.product((0, 1), repeat=2):
            self.assertEqual(tree_eval(learned, {"A": a, "B": b}), bool(a ^ b))

    def test_duplicate_key_is_replaced(self) -> None:
        tree = LabelTree("reward", {"A"}, BINARY)
        tree.insert({"A": 1, "B": 0}, 0.5)
        tree.insert({"A": 1, "B": 1}, 0.7)
        self.assertEqual(len(tree), 1)
        self.assertEqual(tree_eval(tree.restructure(), {"A": 1}), 0.7)
        tree.audit()

    def test_missing_variable_fails_test(self) -> None:
        tree = LabelTree("reward", {"A", "B"}, BINARY)
        tree.insert({"A": 1, "B": 1}, 1.0)
        tree.insert({"A": 1}, 0.0)
        learned = tree.restructure()
        self.assertEqual(tree_eval(learned, {"A": 1, "B": 1}), 1.0)
        self.assertEqual(tree_eval(learned, {"A": 1}), 0.0)

    def test_restructure_keeps_counts_consistent(self) -> None:
        rng = np.random.default_rng(7)
        tree = LabelTree("random", {"A", "B", "C"}, BINARY)
        for step in range(200):
            state = {var: int(rng.integers(2)) for var in "ABC"}
            label = int(state["A"] & state["C"]) if step < 100 else int(state["B"])
            tree.insert(state, label)
            if step % 7 == 0:
                tree.restructure()
                tree.audit()
        learned = tree.restructure()
        tree.audit()
        for key, label in tree.labels().items():
            self.assertEqual(tree_eval(learned, key), label)

    def test_set_variables_reprojects_examples(self) -> None:
        tree = LabelTree("reward", {"A"}, BINARY)
        tree.insert({"A": 0}, 0.1)
        tree.insert({"A": 1}, 0.9)
        tree.set_variables({"A", "B"})
        tree.insert({"A": 0, "B": 1}, 0.0)
        learned = tree.restructure()
        self.assertEqual(tree_eval(learned, {"A": 0, "B": 1}), 0.0)
        self.assertEqual(tree_eval(learned, {"A": 0}), 0.1)
        self.assertEqual(tree_eval(learned, {"A": 1, "B": 0}), 0.9)
        tree.audit()


class RewardFactsTests(SimpleTestCase):
    def test_duplicate_fact(self) -> None:
        facts = RewardFacts({"HUC"})
        self.assertEqual(facts.update(PartialState({"HUC": 1, "W": 0}), 0.9, 0).status, OK)
        self.assertEqual(facts.update(PartialState({"HUC": 1, "W": 1}), 0.9, 1).status, DUPLICATE)
        self.assertEqual(len(facts), 1)

    def test_conflicting_fact(self) -> None:
        facts = RewardFacts({"HUC"})
        facts.update(PartialState({"HUC": 1}), 0.9, 0)
        result = facts.update(PartialState({"HUC": 1}), 0.8, 1)
        self.assertEqual(result.status, INCONSISTENT)
        assert result.conflict is not None
        self.assertEqual(result.conflict.reward, 0.9)
        self.assertEqual(len(facts), 1)

    def test_scope_growth_rebuilds_coffee_reward(self) -> None:
        facts = RewardFacts({"HUC"})
        tree = LabelTree("reward", facts.scope, COFFEE.sizes())
        conflicts = 0
        for step, state in enumerate(COFFEE.iter_states()):
            reward = COFFEE.reward_of(state)
            result = facts.update(state, reward, step)
            if result.inconsistent:
                conflicts += 1
                facts.rescope(facts.scope | {"W"})
                facts.update(state, reward, step)
        self.assertGreater(conflicts, 0)
        tree.set_variables(facts.scope)
        for fact in facts:
            tree.insert(fact.observation, fact.reward)
        learned = tree.restructure()
        for state in COFFEE.iter_states():
            self.assertEqual(tree_eval(learned, state), COFFEE.reward_of(state))

    def test_rescope_keeps_facts_observed_without_new_variable(self) -> None:
        facts = RewardFacts({"A"})
        facts.update(PartialState({"A": 0}), 0.1, 0)
        self.assertTrue(facts.update(PartialState({"A": 0, "B": 1}), 0.0, 1).inconsistent)
        self.assertEqual(facts.rescope({"A", "B"}), [])
        self.assertEqual(facts.update(PartialState({"A": 0, "B": 1}), 0.0, 1).status, OK)
        self.assertEqual(
            facts.items(),
            {PartialState({"A": 0}): 0.1, PartialState({"A": 0, "B": 1}): 0.0},
        )

    def test_rescope_keeps_newest_on_collision(self) -> None:
        facts = RewardFacts({"A", "B"})
        facts.update(PartialState({"A": 0, "B": 0}), 0.1, 0)
        facts.update(PartialState({"A": 0, "B": 1}), 0.3, 4)
        dropped = facts.rescope({"A"})
        self.assertEqual([fact.reward for fact in dropped], [0.1])
        self.assertEqual(facts.items(), {PartialState({"A": 0}): 0.3})


class RepackTests(SimpleTestCase):
    def old_tree(self) -> DecisionTree:
        return Test("A", 1, Leaf(Distribution((0.9, 0.1))), Leaf(Distribution((0.2, 0.8))))

    def trials(self, count: int = 200) -> List[dict]:
        rng = np.random.default_rng(8)
        return [{"A": int(rng.integers(2)), "B": int(rng.integers(2))} for _ in range(count)]

    def test_new_variable_child_mass(self) -> None:
        posterior = ParentPosterior("ACT", "Z", ("A", "Z"), BINARY, 0.1, 2)
        alphas = new_variable_alphas(posterior, "Z", 5.0)
        cells = alphas[posterior.cell_slice(posterior.index[("A",)])]
        np.testing.assert_allclose(cells, 5.0 / 4)
        self.assertAlmostEqual(float(cells.sum()), 5.0)

    def test_uniform_old_model_gives_uniform_alphas(self) -> None:
        posterior = ParentPosterior("ACT", "A", ("A", "Z"), BINARY, 0.1, 2)
        grouping = TrialGrouping([], ("A",), BINARY)
        old = OldModelConditional(Leaf(Distribution((0.5, 0.5))), 2, grouping)
        alphas = repack_alphas(posterior, "Z", 5.0, old)
        for c in range(len(posterior.candidates)):
            cells = alphas[posterior.cell_slice(c)]
            np.testing.assert_allclose(cells, cells[0])

    def test_zero_data_reproduces_old_conditional(self) -> None:
        posterior = ParentPosterior("ACT", "B", ("A", "B", "Z"), BINARY, 0.1, 2)
        grouping = TrialGrouping(self.trials(), ("A", "B"), BINARY)
        old = OldModelConditional(self.old_tree(), 2, grouping)
        posterior.set_alphas(repack_alphas(posterior, "Z", 5.0, old))
        for parents in (("A",), ("A", "B"), ("A", "Z")):
            _, alphas = posterior.table(posterior.index[parents])
            for j, values in enumerate(itertools.product((0, 1), repeat=len(parents))):
                state = dict(zip(parents, values))
                expected = tree_eval(self.old_tree(), state).probs
                predicted = expected_params(DirichletLeaf(alphas[j])).probs
                np.testing.assert_allclose(predicted, expected, atol=1e-9)

    def test_larger_mass_stays_closer_to_old_model(self) -> None:
        distances = []
        for mass in (1.0, 5.0, 25.0):
            posterior = ParentPosterior("ACT", "B", ("A", "B", "Z"), BINARY, 0.1, 2)
            grouping = TrialGrouping(self.trials(), ("A", "B"), BINARY)
            old = OldModelConditional(self.old_tree(), 2, grouping)
            posterior.set_alphas(repack_alphas(posterior, "Z", mass, old))
            _, alphas = posterior.table(posterior.index[("A",)])
            # A=1 설정에서 이전 모델이 드물다고 본 값 1을 한 번 관측
            predicted = expected_params(DirichletLeaf(alphas[1], [0.0, 1.0])).probs
            distances.append(abs(predicted[0] - 0.9))
        self.assertEqual(distances, sorted(distances, reverse=True))

    def test_repack_action_discards_counts(self) -> None:
        posteriors = {
            child: ParentPosterior("ACT", child, ("A", "B", "Z"), BINARY, 0.1, 2)
            for child in ("A", "B", "Z")
        }
        posteriors["A"].update(np.array([1, 0, 0]), 1)
        trees = {"A": Leaf(Distribution((0.3, 0.7))), "B": self.old_tree()}
        repack_action(posteriors, trees, self.trials(50), ("A", "B"), "Z", 5.0)
        for posterior in posteriors.values():
            self.assertTrue(posterior.informed)
            self.assertTrue(np.all(posterior.alphas > 0.0))
        self.assertEqual(posteriors["A"].counts.sum(), 0.0)


def _leaves(tree: DecisionTree) -> List[Leaf]:
    if isinstance(tree, Leaf):
        return [tree]
    return _leaves(tree.passed) + _leaves(tree.failed)
