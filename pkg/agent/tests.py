import itertools

from collections import Counter
from functools import lru_cache
from typing import Any, Optional, Type

import numpy as np

from django.test import SimpleTestCase
from scipy.special import logsumexp
from scipy.stats import chisquare

from agent.advice import AdviceStore, DefeasibleEntry
from agent.services.learner import AwarenessError, Learner, Trial
from agent.services.variants import (
    NonConservativeLearner,
    RandomAgent,
    TruePolicyAgent,
    build_agent,
)
from domain.config import ExperimentConfig, parse_config
from domain.parser import DATA_DIR, parse_domain_file
from expert.messages import BetterAction
from expert.services.oracle import ExpertOracle
from model_core.states import PartialState
from model_core.trees import Leaf, Test, tree_eval, trees_equal
from planner.services.svi import ValueModel, full_svi
from simulator.services.environment import Environment


COFFEE = parse_domain_file(DATA_DIR / "coffee.sfmdp")


@lru_cache(maxsize=None)
def coffee_model() -> ValueModel:
    return full_svi(COFFEE.reward, COFFEE.cpds, COFFEE.discount, COFFEE.terminal_tree())


BASE_CONFIG = "initial_variables=HUC\ninitial_reward_scope=HUC\ninitial_actions=MOVE\n"


def coffee_config(**overrides: Any) -> ExperimentConfig:
    return parse_config(BASE_CONFIG, overrides)


def coffee_expert(config: ExperimentConfig) -> ExpertOracle:
    awareness = config.initial_awareness(COFFEE)
    return ExpertOracle(
        COFFEE,
        config.mu,
        config.beta,
        config.kappa,
        evidence=awareness.variables,
        model=coffee_model(),
    )


def coffee_learner(
    seed: int = 0, learner_class: Type[Learner] = Learner, advised: bool = True, **overrides: Any
) -> Learner:
    config = coffee_config(**overrides)
    expert = coffee_expert(config) if advised else None
    return learner_class(COFFEE, config, expert, np.random.default_rng(seed))


def coffee_state(**values: int) -> PartialState:
    full = {"HUC": 0, "HRC": 0, "W": 0, "R": 0, "U": 0, "L": 0}
    full.update(values)
    return PartialState(full)


def run(learner: Learner, steps: int, seed: int) -> Environment:
    env = Environment(COFFEE, np.random.default_rng(seed))
    previous: Optional[tuple] = None
    for _ in range(steps):
        record = learner.run_step(env)
        current = (record.num_vars_aware, record.num_actions_aware)
        if previous is not None:
            assert current[0] >= previous[0] and current[1] >= previous[1]
        previous = current
    return env


class AdviceStoreTests(SimpleTestCase):
    def setUp(self) -> None:
        self.store = AdviceStore()
        self.observation = PartialState({"HUC": 0, "R": 1})
        self.key = PartialState({"HUC": 0})

    def entry(self, action: str, step: int) -> DefeasibleEntry:
        return DefeasibleEntry(self.key, action, step, self.observation)

    def test_first_entry(self) -> None:
        self.assertIsNone(self.store.add(self.entry("GETU", 3)))
        self.assertEqual(len(self.store), 1)

    def test_conflict_is_returned_and_not_stored(self) -> None:
        first = self.entry("GETU", 3)
        self.store.add(first)
        self.assertEqual(self.store.add(self.entry("MOVE", 9)), first)
        self.assertEqual(self.store.lookup(self.key), first)

    def test_same_action_moves_anchor(self) -> None:
        self.store.add(self.entry("GETU", 3))
        self.assertIsNone(self.store.add(self.entry("GETU", 9)))
        self.assertEqual(self.store.lookup(self.key).step, 9)  # type: ignore[union-attr]

    def test_rekey_uses_stored_observation(self) -> None:
        self.store.add(self.entry("GETU", 3))
        self.store.rekey({"HUC", "R"})
        self.assertIsNone(self.store.entries.get(self.key))
        self.assertEqual(self.store.lookup(self.observation).action, "GETU")  # type: ignore[union-attr]

    def test_lookup_falls_back_to_newest_compatible_entry(self) -> None:
        self.store.add(self.entry("GETU", 3))
        other = PartialState({"L": 1})
        self.store.add(DefeasibleEntry(other, "DELC", 7, other))
        state = PartialState({"HUC": 0, "L": 1, "R": 0})
        self.assertEqual(self.store.lookup(state).action, "DELC")  # type: ignore[union-attr]
        self.assertIsNone(self.store.lookup(PartialState({"HUC": 1, "L": 0})))


class SelectActionTests(SimpleTestCase):
    def test_full_exploration_is_uniform(self) -> None:
        learner = coffee_learner(epsilon=1.0)
        learner.awareness.add_action("GETU")
        counts = Counter(learner.select_action(PartialState({"HUC": 0})) for _ in range(10000))
        self.assertEqual(set(counts), {"GETU", "MOVE"})
        self.assertGreater(chisquare(list(counts.values())).pvalue, 0.01)

    def test_advice_overrides_q_values(self) -> None:
        learner = coffee_learner(epsilon=0.0)
        state = PartialState({"HUC": 0})
        learner.value = ValueModel(Leaf(0.0), {"MOVE": Leaf(5.0)})
        learner.advice.add(DefeasibleEntry(state, "GETU", 1, state))
        self.assertEqual(learner.select_action(state), "GETU")

    def test_single_action(self) -> None:
        learner = coffee_learner(epsilon=0.0)
        self.assertEqual(learner.select_action(PartialState({"HUC": 0})), "MOVE")


class IntegrateTrialTests(SimpleTestCase):
    def setUp(self) -> None:
        self.learner = coffee_learner()
        self.dry = PartialState({"HUC": 0})

    def trial(self, step: int, reward: float) -> Trial:
        return Trial(step, self.dry, "MOVE", self.dry, reward, False)

    def test_consistent_rewards(self) -> None:
        self.learner.integrate_trial(self.trial(1, 0.1))
        self.learner.integrate_trial(self.trial(2, 0.1))
        self.assertEqual(len(self.learner.facts), 1)
        self.assertEqual(self.learner.trials["MOVE"], [(self.dry, self.dry)] * 2)
        self.learner.cpd_trees["MOVE"]["HUC"].audit()

    def test_wet_reward_reveals_reward_scope(self) -> None:
        self.learner.true_state = coffee_state()
        self.learner.integrate_trial(self.trial(1, 0.1))
        self.learner.true_state = coffee_state(W=1)
        self.learner.integrate_trial(self.trial(2, 0.0))
        self.assertEqual(self.learner.awareness.reward_scope, {"HUC", "W"})
        self.assertIn("W", self.learner.awareness.variables)
        self.assertEqual(self.learner.expert.query_count, 1)  # type: ignore[union-attr]
        self.assertEqual(self.learner.trials["MOVE"], [])
        reward = self.learner.learned_reward()
        self.assertEqual(tree_eval(reward, {"HUC": 0, "W": 1}), 0.0)
        self.learner.audit()

    def test_reward_tree_matches_true_reward_after_exploration(self) -> None:
        learner = coffee_learner(seed=1, initial_actions="MOVE,BUYC,DELC,GETU")
        run(learner, 500, seed=1)
        self.assertEqual(learner.awareness.reward_scope, {"HUC", "W"})
        reward = learner.learned_reward()
        for key in learner.facts.items():
            if {"HUC", "W"} <= set(key):
                self.assertEqual(tree_eval(reward, key), COFFEE.reward_of(key))


class HandleAdviceTests(SimpleTestCase):
    def setUp(self) -> None:
        self.learner = coffee_learner()
        self.expert = self.learner.expert
        assert self.expert is not None
        self.learner.history[1] = PartialState({"HUC": 0})
        self.learner.history[2] = PartialState({"HUC": 0})
        self.expert.observe(1, coffee_state(R=0))
        self.expert.observe(2, coffee_state(R=1))

    def test_first_advice(self) -> None:
        self.learner.handle_advice(BetterAction(1, "DELC", "MOVE"))
        self.assertEqual(len(self.learner.advice.facts), 1)
        self.assertEqual(len(self.learner.advice), 1)
        self.assertIn("DELC", self.learner.awareness.actions)
        self.assertIn("DELC", self.learner.structure.posteriors)
        self.assertIn("DELC", self.learner.cpd_trees)

    def test_contradiction_reveals_distinguishing_variable(self) -> None:
        self.learner.handle_advice(BetterAction(1, "GETU", "MOVE"))
        self.learner.handle_advice(BetterAction(2, "MOVE", "GETU"))
        self.assertEqual(self.learner.awareness.variables, {"HUC", "R"})
        self.assertEqual(self.expert.query_count, 1)  # type: ignore[union-attr]
        self.assertEqual(len(self.learner.advice), 0)
        self.assertEqual(len(self.learner.advice.facts), 2)

        self.learner.history[3] = PartialState({"HUC": 0, "R": 1})
        self.expert.observe(3, coffee_state(R=1))  # type: ignore[union-attr]
        self.learner.handle_advice(BetterAction(3, "GETU", "MOVE"))
        self.assertIn(PartialState({"HUC": 0, "R": 1}), self.learner.advice.entries)


class AdaptTests(SimpleTestCase):
    def setUp(self) -> None:
        self.learner = coffee_learner(seed=2, advised=False, initial_variables="HUC,L")
        run(self.learner, 60, seed=2)

    def test_value_tree_is_retained(self) -> None:
        value = Test("L", 1, Leaf(2.0), Leaf(1.0))
        self.learner.value = ValueModel(value, {"MOVE": value})
        self.learner.adapt_on_new_variable("R")
        self.assertIs(self.learner.value.value, value)
        self.assertTrue(trees_equal(self.learner.value.value, Test("L", 1, Leaf(2.0), Leaf(1.0))))
        self.assertEqual(tree_eval(self.learner.value.value, {"L": 1, "HUC": 0}), 2.0)

    def test_priors_are_normalized(self) -> None:
        self.learner.adapt_on_new_variable("R")
        for children in self.learner.structure.posteriors.values():
            self.assertIn("R", children)
            for posterior in children.values():
                self.assertAlmostEqual(float(logsumexp(posterior.log_prior)), 0.0, delta=1e-9)
                self.assertTrue(posterior.informed)
        self.learner.audit()

    def test_zero_data_reproduces_previous_conditionals(self) -> None:
        previous = {
            child: (tree.parents, tree.expected_tree())
            for child, tree in self.learner.cpd_trees["MOVE"].items()
        }
        self.learner.adapt_on_new_variable("R")
        for child, (parents, expected) in previous.items():
            posterior = self.learner.structure.posteriors["MOVE"][child]
            _, alphas = posterior.table(posterior.index[parents])
            shape = [COFFEE.domain_size(var) for var in parents]
            for row, values in enumerate(itertools.product(*[range(n) for n in shape])):
                old = tree_eval(expected, dict(zip(parents, values))).probs
                np.testing.assert_allclose(alphas[row] / alphas[row].sum(), old, atol=1e-9)

    def test_duplicate_discovery(self) -> None:
        with self.assertRaises(AwarenessError):
            self.learner.adapt_on_new_variable("L")

    def test_non_conservative_resets_models(self) -> None:
        learner = coffee_learner(
            seed=2,
            learner_class=NonConservativeLearner,
            advised=False,
            initial_variables="HUC,L",
        )
        run(learner, 60, seed=2)
        learner.adapt_on_new_variable("R")
        self.assertEqual(learner.value.iterations, 0)
        for children in learner.structure.posteriors.values():
            for posterior in children.values():
                self.assertFalse(posterior.informed)
                self.assertEqual(posterior.trials, 0)


class RunStepTests(SimpleTestCase):
    def test_single_action_agent_gets_new_action_advice(self) -> None:
        learner = coffee_learner(seed=3)
        run(learner, 300, seed=3)
        self.assertGreater(learner.expert.advice_count, 0)  # type: ignore[union-attr]
        self.assertGreater(len(learner.awareness.actions), 1)
        self.assertEqual(len(learner.advice.facts), learner.expert.advice_count)  # type: ignore[union-attr]
        learner.audit()
        for fact in learner.advice.facts:
            q_values = coffee_model().q_values(learner.expert.history[fact.step])  # type: ignore[union-attr]
            self.assertGreater(q_values[fact.better], q_values[fact.worse])

    def test_records_count_steps(self) -> None:
        learner = coffee_learner(seed=4)
        env = Environment(COFFEE, np.random.default_rng(4))
        records = [learner.run_step(env) for _ in range(20)]
        self.assertEqual([r.step for r in records], list(range(1, 21)))
        self.assertEqual(records[0].num_actions_aware, 1)

    def test_random_variant_plays_every_true_action(self) -> None:
        config = coffee_config(variant="random")
        expert = coffee_expert(config)
        agent = build_agent(COFFEE, config, expert, np.random.default_rng(5))
        env = Environment(COFFEE, np.random.default_rng(5))
        records = [agent.run_step(env) for _ in range(300)]
        self.assertEqual(agent.awareness.actions, set(COFFEE.actions))  # type: ignore[attr-defined]
        self.assertEqual(agent.awareness.variables, set(COFFEE.variables))  # type: ignore[attr-defined]
        self.assertTrue(all(r.num_actions_aware == 4 and r.num_vars_aware == 6 for r in records))
        self.assertTrue(all(r.advice_count == 0 and r.query_count == 0 for r in records))
        self.assertEqual(expert.advice_count, 0)
        self.assertIsNone(agent.policy_tree())

    def test_random_variant_is_uniform_over_actions(self) -> None:
        config = coffee_config(variant="random")
        agent = RandomAgent(COFFEE, config, coffee_expert(config), np.random.default_rng(8))
        counts = Counter(agent.select_action(coffee_state()) for _ in range(4000))
        self.assertEqual(set(counts), set(COFFEE.actions))
        self.assertGreater(chisquare([counts[a] for a in COFFEE.canonical_actions]).pvalue, 0.001)

    def test_true_policy_explores_at_epsilon(self) -> None:
        config = coffee_config(variant="truePolicy", epsilon=0.2)
        expert = coffee_expert(config)
        agent = TruePolicyAgent(COFFEE, config, expert, np.random.default_rng(9))
        state = coffee_state()
        best = expert.best_action(state)
        picks = [agent.select_action(state) for _ in range(4000)]
        off_policy = sum(pick != best for pick in picks) / len(picks)
        self.assertAlmostEqual(off_policy, 0.2 * 3 / 4, delta=0.03)
        self.assertEqual({pick for pick in picks if pick != best}, set(COFFEE.actions) - {best})

    def test_true_policy_without_exploration_is_greedy(self) -> None:
        config = coffee_config(variant="truePolicy", epsilon=0.0)
        expert = coffee_expert(config)
        agent = TruePolicyAgent(COFFEE, config, expert, np.random.default_rng(10))
        state = coffee_state(L=1, W=1)
        picks = {agent.select_action(state) for _ in range(200)}
        self.assertEqual(picks, {expert.best_action(state)})

    def test_true_policy_variant(self) -> None:
        config = coffee_config(variant="truePolicy")
        agent = build_agent(COFFEE, config, coffee_expert(config), np.random.default_rng(6))
        self.assertIsInstance(agent, TruePolicyAgent)
        env = Environment(COFFEE, np.random.default_rng(6))
        records = [agent.run_step(env) for _ in range(100)]
        self.assertTrue(all(r.num_vars_aware == 6 for r in records))
        self.assertTrue(any(r.terminal for r in records))
        self.assertEqual(records[-1].advice_count, 0)

    def test_build_agent_variants(self) -> None:
        for variant, expected in (
            ("default", Learner),
            ("nonConservative", NonConservativeLearner),
            ("random", RandomAgent),
            ("truePolicy", TruePolicyAgent),
            ("highTolerance", Learner),
        ):
            config = coffee_config(variant=variant)
            agent = build_agent(COFFEE, config, coffee_expert(config), np.random.default_rng(0))
            self.assertIs(type(agent), expected)
        self.assertEqual(coffee_config(variant="highTolerance").beta, 0.5)
