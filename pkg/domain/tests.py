import numpy as np

from django.test import SimpleTestCase

from domain.config import parse_config
from domain.entities import TrueFmdp
from domain.exceptions import ConfigError, DomainSemanticError, DomainSyntaxError
from domain.parser import DATA_DIR, parse_domain, parse_domain_file, serialize_domain
from domain.trace import TRACE_COLUMNS, TraceRow, read_trace, write_trace
from model_core.states import PartialState
from model_core.trees import Leaf, Test, is_path_consistent, payloads_equal, tree_eval


TINY_DOMAIN = """
(variables (X 0 1) (Y 0 1))
action FLIP
  X (X (0 (dist 0.2 0.8)) (1 (dist 0.8 0.2)))
  Y same
endaction
reward (X (1 (1.0)) (0 (0.0)))
terminal (Y 1)
start (Y 0)
discount 0.5
"""


def coffee() -> TrueFmdp:
    return parse_domain_file(DATA_DIR / "coffee.sfmdp")


def assert_evaluation_equal(
    case: SimpleTestCase, first: TrueFmdp, second: TrueFmdp, states: list[PartialState]
) -> None:
    for state in states:
        case.assertTrue(
            payloads_equal(tree_eval(first.reward, state), tree_eval(second.reward, state))
        )
        for action in first.action_ids:
            for var in first.variable_ids:
                case.assertTrue(
                    payloads_equal(
                        tree_eval(first.cpds[action][var], state),
                        tree_eval(second.cpds[action][var], state),
                    )
                )


class ParseDomainTests(SimpleTestCase):
    def test_coffee_shape(self) -> None:
        domain = coffee()
        self.assertEqual(domain.variable_ids, ["HUC", "HRC", "W", "R", "U", "L"])
        self.assertEqual(domain.action_ids, ["MOVE", "DELC", "BUYC", "GETU"])
        self.assertEqual(domain.discount, 0.8)
        self.assertEqual(domain.state_count(), 64)
        self.assertEqual(domain.reward_scope(), {"HUC", "W"})

    def test_coffee_terminal_is_user_has_coffee(self) -> None:
        domain = coffee()
        self.assertEqual(domain.terminal, (("HUC", 1),))
        self.assertEqual(len(domain.start_states()), 32)
        self.assertTrue(all(state["HUC"] == 0 for state in domain.start_states()))

    def test_coffee_reward_leaves(self) -> None:
        domain = coffee()
        self.assertEqual(domain.reward_of({"HUC": 1, "W": 0}), 1.0)
        self.assertEqual(domain.reward_of({"HUC": 1, "W": 1}), 0.9)
        self.assertEqual(domain.reward_of({"HUC": 0, "W": 0}), 0.1)
        self.assertEqual(domain.reward_of({"HUC": 0, "W": 1}), 0.0)

    def test_factory_shape(self) -> None:
        domain = parse_domain_file(DATA_DIR / "factory.sfmdp")
        self.assertEqual(len(domain.variables), 14)
        self.assertEqual(len(domain.actions), 14)
        self.assertEqual(domain.state_count() * len(domain.actions), 774144)
        self.assertEqual(domain.terminal, (("CONNECTED", 1),))
        self.assertEqual(domain.discount, 0.9)

    def test_factory_rewards_are_rescaled(self) -> None:
        domain = parse_domain_file(DATA_DIR / "factory.sfmdp")
        rewards = [float(tree_eval(domain.reward, state)) for state in domain.iter_states()]
        self.assertGreaterEqual(min(rewards), 0.0)
        self.assertLessEqual(max(rewards), 1.0)
        terminal_rewards = [
            domain.reward_of(state) for state in domain.iter_states() if domain.is_terminal(state)
        ]
        self.assertGreater(min(terminal_rewards), 0.0)

    def test_bundled_reward_trees_test_their_first_variable(self) -> None:
        for name, root in (("coffee.sfmdp", "HUC"), ("factory.sfmdp", "CONNECTED")):
            reward = parse_domain_file(DATA_DIR / name).reward
            self.assertIsInstance(reward, Test)
            assert isinstance(reward, Test)
            self.assertEqual((reward.variable, reward.value), (root, 0))

    def test_constant_reward_forms(self) -> None:
        for form in ("(0.5)", "0.5"):
            text = TINY_DOMAIN.replace("(X (1 (1.0)) (0 (0.0)))", form)
            reward = parse_domain(text).reward
            self.assertIsInstance(reward, Leaf)
            self.assertEqual(reward.payload, 0.5)  # type: ignore[union-attr]

    def test_all_trees_path_consistent(self) -> None:
        domain = coffee()
        self.assertTrue(is_path_consistent(domain.reward))
        for trees in domain.cpds.values():
            for tree in trees.values():
                self.assertTrue(is_path_consistent(tree))

    def test_unnormalized_leaf_names_leaf(self) -> None:
        text = TINY_DOMAIN.replace("(dist 0.2 0.8)", "(dist 0.5 0.4)")
        with self.assertRaises(DomainSemanticError) as ctx:
            parse_domain(text)
        self.assertIn("(dist 0.5 0.4)", ctx.exception.symbol or "")
        self.assertIn("FLIP/X", ctx.exception.symbol or "")

    def test_near_normalized_leaf_is_renormalized(self) -> None:
        domain = parse_domain(TINY_DOMAIN.replace("(dist 0.2 0.8)", "(dist 0.2 0.8000001)"))
        distribution = tree_eval(domain.cpds["FLIP"]["X"], {"X": 0})
        self.assertAlmostEqual(sum(distribution.probs), 1.0, places=12)

    def test_missing_cpd(self) -> None:
        with self.assertRaises(DomainSemanticError) as ctx:
            parse_domain(TINY_DOMAIN.replace("  Y same\n", ""))
        self.assertEqual(ctx.exception.symbol, "FLIP/Y")

    def test_undeclared_variable_in_tree(self) -> None:
        text = TINY_DOMAIN.replace("reward (X", "reward (Z")
        with self.assertRaises(DomainSemanticError) as ctx:
            parse_domain(text)
        self.assertIn("Z", ctx.exception.symbol or "")

    def test_syntax_error_has_position(self) -> None:
        with self.assertRaises(DomainSyntaxError) as ctx:
            parse_domain("(variables (X 0 1)\naction")
        self.assertGreaterEqual(ctx.exception.line, 1)
        self.assertGreaterEqual(ctx.exception.column, 1)

    def test_serialize_round_trip_is_fixpoint(self) -> None:
        domain = coffee()
        again = parse_domain(serialize_domain(domain))
        self.assertEqual(again.variable_ids, domain.variable_ids)
        self.assertEqual(again.action_ids, domain.action_ids)
        self.assertEqual(again.terminal, domain.terminal)
        self.assertEqual(again.start, domain.start)
        assert_evaluation_equal(self, domain, again, list(domain.iter_states()))
        third = parse_domain(serialize_domain(again))
        self.assertEqual(serialize_domain(third), serialize_domain(again))

    def test_factory_round_trip_on_sampled_states(self) -> None:
        domain = parse_domain_file(DATA_DIR / "factory.sfmdp")
        again = parse_domain(serialize_domain(domain))
        rng = np.random.default_rng(0)
        states = list(domain.iter_states())
        sample = [states[int(i)] for i in rng.choice(len(states), size=200, replace=False)]
        assert_evaluation_equal(self, domain, again, sample)


class ParseConfigTests(SimpleTestCase):
    def test_empty_file_takes_defaults(self) -> None:
        config = parse_config("")
        self.assertEqual(config.epsilon, 0.1)
        self.assertEqual(config.rho, 0.1)
        self.assertEqual(config.alpha_mass, 5.0)
        self.assertEqual(config.mu, 10)
        self.assertEqual(config.beta, 0.1)
        self.assertEqual(config.kappa, 50)
        self.assertEqual(config.max_in_degree, 5)
        self.assertEqual(config.episode_cutoff, 500)

    def test_high_beta_is_high_tolerance(self) -> None:
        self.assertEqual(parse_config("beta=0.5").expert_profile, "highTolerance")

    def test_tolerance_variant_sets_beta(self) -> None:
        self.assertEqual(parse_config("variant=lowTolerance").beta, 0.01)
        self.assertEqual(parse_config("variant=highTolerance\nbeta=0.2").beta, 0.2)

    def test_epsilon_out_of_range(self) -> None:
        with self.assertRaises(ConfigError) as ctx:
            parse_config("epsilon=1.5")
        self.assertEqual(ctx.exception.key, "epsilon")

    def test_rho_must_be_below_half(self) -> None:
        with self.assertRaises(ConfigError):
            parse_config("rho=0.5")

    def test_unknown_key(self) -> None:
        with self.assertRaises(ConfigError) as ctx:
            parse_config("gamma=0.9")
        self.assertEqual(ctx.exception.key, "gamma")

    def test_comments_and_overrides(self) -> None:
        config = parse_config("# Coffee\nsteps=200  # short\n", {"steps": 300, "seed": None})
        self.assertEqual(config.steps, 300)
        self.assertEqual(config.provenance["steps"], "flag")
        self.assertEqual(config.provenance["seed"], "default")

    def test_scope_must_be_within_initial_variables(self) -> None:
        with self.assertRaises(ConfigError):
            parse_config("initial_variables=HUC\ninitial_reward_scope=HUC,W")

    def test_default_initial_awareness(self) -> None:
        awareness = parse_config("").initial_awareness(coffee())
        self.assertEqual(awareness.variables, {"HUC"})
        self.assertEqual(awareness.reward_scope, {"HUC"})
        self.assertEqual(awareness.actions, {"MOVE"})

    def test_initial_awareness_must_resolve(self) -> None:
        config = parse_config("initial_actions=FLY")
        with self.assertRaises(ConfigError):
            config.initial_awareness(coffee())


class WriteTraceTests(SimpleTestCase):
    def row(self, step: int) -> TraceRow:
        return TraceRow(step, 0, 0.1, 0.1, None, 1, 1, 0, 0)

    def test_empty_rows_gives_header_only(self) -> None:
        self.assertEqual(write_trace([]), ",".join(TRACE_COLUMNS) + "\r\n")

    def test_one_row_gives_two_lines(self) -> None:
        text = write_trace([self.row(1)])
        self.assertEqual(text.count("\r\n"), 2)
        self.assertTrue(text.startswith("step,episode,reward,rdisc,errApprox,"))

    def test_read_back(self) -> None:
        rows = [self.row(1), TraceRow(2, 1, 1.0, 1.099, 0.25, 2, 3, 1, 1, False, True)]
        self.assertEqual(read_trace(write_trace(rows)), rows)
