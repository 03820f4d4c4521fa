import math

from typing import List

import numpy as np

from django.test import SimpleTestCase
from scipy.integrate import quad
from scipy.special import logsumexp

from domain.parser import DATA_DIR, parse_domain_file
from model_core.states import PartialState
from simulator.services.environment import Environment
from structure.scoring import bde_log_score, config_strides, struct_log_prior
from structure.services.posterior import (
    ParentPosterior,
    StructureLearner,
    enumerate_candidates,
)


COFFEE = parse_domain_file(DATA_DIR / "coffee.sfmdp")
BINARY = {"A": 2, "B": 2, "C": 2, "Z": 2}


def noisy_copy(rng: np.random.Generator, value: int) -> int:
    return value if rng.random() < 0.9 else 1 - value


def chain_trials(rng: np.random.Generator, count: int) -> List[tuple]:
    """A' 무작위, B'는 A를, C'는 B를 0.9 확률로 따르는 DBN 표본"""
    trials = []
    for _ in range(count):
        state = {var: int(rng.integers(2)) for var in ("A", "B", "C")}
        next_state = {
            "A": int(rng.integers(2)),
            "B": noisy_copy(rng, state["A"]),
            "C": noisy_copy(rng, state["B"]),
        }
        trials.append((state, next_state))
    return trials


def beta_kernel(theta: float, a: float, b: float) -> float:
    return theta ** (a - 1) * (1 - theta) ** (b - 1)


class StructPriorTests(SimpleTestCase):
    def test_empty_parent_set(self) -> None:
        self.assertAlmostEqual(struct_log_prior(0, 6, 0.1), math.log(0.531441))

    def test_full_parent_set(self) -> None:
        self.assertAlmostEqual(struct_log_prior(6, 6, 0.1), 6 * math.log(0.1))

    def test_rho_range(self) -> None:
        with self.assertRaises(ValueError):
            struct_log_prior(1, 6, 0.5)
        with self.assertRaises(ValueError):
            struct_log_prior(1, 6, 0.0)

    def test_prior_decreases_with_size(self) -> None:
        values = [struct_log_prior(size, 5, 0.3) for size in range(6)]
        self.assertEqual(values, sorted(values, reverse=True))


class BdeScoreTests(SimpleTestCase):
    def test_zero_counts_give_prior(self) -> None:
        counts = np.zeros((4, 2))
        alphas = np.full((4, 2), 0.5)
        self.assertEqual(bde_log_score(counts, alphas, log_prior=-1.25), -1.25)

    def test_beta_ratio(self) -> None:
        score = bde_log_score(np.array([[3.0, 1.0]]), np.array([[1.0, 1.0]]))
        self.assertAlmostEqual(score, math.log(1.0 / 20.0), places=12)

    def test_matches_numeric_marginal(self) -> None:
        for first in range(6):
            for second in range(6 - first):
                for a1, a2 in ((1.0, 1.0), (2.0, 1.0), (1.5, 3.0)):
                    expected = math.log(
                        quad(beta_kernel, 0, 1, args=(first + a1, second + a2))[0]
                        / quad(beta_kernel, 0, 1, args=(a1, a2))[0]
                    )
                    score = bde_log_score(np.array([[first, second]]), np.array([[a1, a2]]))
                    self.assertAlmostEqual(score, expected, delta=1e-8)

    def test_nonpositive_alpha(self) -> None:
        with self.assertRaises(ValueError):
            bde_log_score(np.zeros((1, 2)), np.array([[1.0, 0.0]]))

    def test_shape_mismatch(self) -> None:
        with self.assertRaises(ValueError):
            bde_log_score(np.zeros((2, 2)), np.ones((1, 2)))

    def test_config_strides(self) -> None:
        self.assertEqual(config_strides([2, 3, 2]), (6, 2, 1))
        self.assertEqual(config_strides([]), ())


class ParentPosteriorTests(SimpleTestCase):
    def make(self, variables: tuple = ("A", "B", "C"), degree: int = 3) -> ParentPosterior:
        return ParentPosterior("ACT", "B", variables, BINARY, 0.1, degree)

    def test_candidates_ordered_by_size(self) -> None:
        self.assertEqual(
            enumerate_candidates(["B", "A", "C"], 2),
            [(), ("A",), ("B",), ("C",), ("A", "B"), ("A", "C"), ("B", "C")],
        )

    def test_prior_is_normalized(self) -> None:
        posterior = self.make()
        self.assertAlmostEqual(float(logsumexp(posterior.log_posterior())), 0.0, delta=1e-9)
        self.assertEqual(posterior.map_parents(), ())

    def test_one_trial_increments_one_cell_per_candidate(self) -> None:
        posterior = self.make()
        posterior.update(np.array([1, 0, 1]), 1)
        self.assertEqual(posterior.counts.sum(), len(posterior.candidates))
        counts, _ = posterior.table(posterior.index[("A", "C")])
        # (A=1, C=1) 설정 인덱스 3
        self.assertEqual(counts[3, 1], 1.0)

    def test_identical_trials_accumulate(self) -> None:
        posterior = self.make()
        posterior.update(np.array([0, 1, 1]), 0)
        posterior.update(np.array([0, 1, 1]), 0)
        self.assertEqual(posterior.counts.max(), 2.0)
        self.assertEqual(posterior.counts.sum(), 2 * len(posterior.candidates))

    def test_incremental_score_matches_replay(self) -> None:
        rng = np.random.default_rng(3)
        posterior = self.make()
        values, children = [], []
        for state, next_state in chain_trials(rng, 300):
            vector = np.array([state["A"], state["B"], state["C"]])
            posterior.update(vector, next_state["B"])
            values.append(vector)
            children.append(next_state["B"])
        posterior.audit(values, children)
        self.assertAlmostEqual(float(logsumexp(posterior.log_posterior())), 0.0, delta=1e-9)

    def test_audit_detects_missing_trial(self) -> None:
        posterior = self.make()
        posterior.update(np.array([0, 0, 0]), 1)
        with self.assertRaises(AssertionError):
            posterior.audit([], [])

    def test_chain_structure_is_recovered(self) -> None:
        learner = StructureLearner(["A", "B", "C"], BINARY, 0.1, 3)
        learner.init_action("ACT")
        for state, next_state in chain_trials(np.random.default_rng(0), 5000):
            learner.update("ACT", state, next_state)
        parents = {child: p.map_parents() for child, p in learner.posteriors["ACT"].items()}
        self.assertEqual(parents, {"A": (), "B": ("A",), "C": ("B",)})

    def test_coffee_move_location_depends_on_location(self) -> None:
        sizes = {var: decl.size for var, decl in COFFEE.variables.items()}
        learner = StructureLearner(COFFEE.variable_ids, sizes, 0.1, 5)
        learner.init_action("MOVE")
        env = Environment(COFFEE, np.random.default_rng(9))
        rng = np.random.default_rng(10)
        for _ in range(1000):
            state = PartialState({var: int(rng.integers(2)) for var in COFFEE.variable_ids})
            env.state, env.terminal = state, False
            next_state, _, _ = env.step("MOVE")
            learner.update("MOVE", state, next_state)
        self.assertEqual(learner.posteriors["MOVE"]["L"].map_parents(), ("L",))


class RebuildPriorTests(SimpleTestCase):
    def uniform_old(self) -> ParentPosterior:
        return ParentPosterior(
            "ACT", "A", ("A", "B"), BINARY, 0.1, 3, log_prior=np.full(4, math.log(0.25))
        )

    def test_uniform_old_posterior(self) -> None:
        expanded = self.uniform_old().expanded("Z", BINARY)
        probabilities = np.exp(expanded.log_posterior())
        for candidate, probability in zip(expanded.candidates, probabilities):
            expected = 0.025 if "Z" in candidate else 0.225
            self.assertAlmostEqual(float(probability), expected, places=12)
        self.assertAlmostEqual(float(probabilities.sum()), 1.0, places=12)
        self.assertEqual(expanded.counts.sum(), 0.0)

    def test_ranking_of_old_candidates_preserved(self) -> None:
        old = ParentPosterior("ACT", "B", ("A", "B", "C"), BINARY, 0.2, 2)
        for state, next_state in chain_trials(np.random.default_rng(4), 200):
            old.update(np.array([state["A"], state["B"], state["C"]]), next_state["B"])
        expanded = old.expanded("Z", BINARY)
        kept = [expanded.index[pa] for pa in old.candidates]
        new_order = np.argsort(-expanded.log_prior[kept], kind="stable")
        old_order = np.argsort(-old.log_posterior(), kind="stable")
        self.assertEqual(new_order.tolist(), old_order.tolist())
        self.assertAlmostEqual(float(logsumexp(expanded.log_prior)), 0.0, delta=1e-9)

    def test_learner_rebuild_adds_child_with_structure_prior(self) -> None:
        learner = StructureLearner(["A", "B"], BINARY, 0.1, 3)
        learner.init_action("ACT")
        learner.update("ACT", {"A": 1, "B": 0}, {"A": 1, "B": 1})
        previous = learner.rebuild_on_new_variable("Z")
        self.assertEqual(set(previous["ACT"]), {"A", "B"})
        self.assertEqual(learner.variables, ("A", "B", "Z"))
        fresh = learner.posteriors["ACT"]["Z"]
        self.assertAlmostEqual(
            float(np.exp(fresh.log_posterior()[0])),
            0.9**3 / sum(math.comb(3, k) * 0.1**k * 0.9 ** (3 - k) for k in range(4)),
        )
        with self.assertRaises(ValueError):
            learner.rebuild_on_new_variable("Z")


class InitActionTests(SimpleTestCase):
    def setUp(self) -> None:
        self.learner = StructureLearner(["A", "B", "C"], BINARY, 0.1, 2)

    def test_fresh_dbn_map_is_empty(self) -> None:
        dbn = self.learner.init_action("GETU")
        self.assertEqual(set(dbn), {"A", "B", "C"})
        for posterior in dbn.values():
            self.assertEqual(posterior.map_parents(), ())
            np.testing.assert_allclose(posterior.log_posterior(), posterior.log_prior)

    def test_duplicate_action(self) -> None:
        self.learner.init_action("GETU")
        with self.assertRaises(ValueError):
            self.learner.init_action("GETU")
