import io
import tempfile

from dataclasses import replace
from functools import lru_cache
from pathlib import Path
from typing import Any, Dict, List
from unittest import mock, skipUnless

import numpy as np

from django.conf import settings
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase, override_settings

from domain.config import ExperimentConfig, parse_config, parse_config_file
from domain.trace import TraceRow, read_trace
from harness.management.commands.export_policy import Command as ExportPolicyCommand
from harness.services.compare import (
    check_comparable,
    compare_variants,
    first_step_below,
    paired_sign_test,
    variant_labels,
)
from harness.services.runner import (
    ReplicaError,
    ReplicaResult,
    RunResult,
    aggregate,
    load_domain,
    replica_seeds,
    run_experiment,
    solve_oracle,
)
from planner.services.svi import ValueModel


CONFIG_DIR = Path(__file__).resolve().parent / "configs"
COFFEE_TEXT = "initial_variables=HUC\ninitial_reward_scope=HUC\ninitial_actions=MOVE\n"


@lru_cache(maxsize=None)
def coffee_oracle() -> ValueModel:
    return solve_oracle(load_domain(small_config()))


def small_config(**overrides: Any) -> ExperimentConfig:
    values = {"steps": 60, "replicas": 2, "seed": 7}
    values.update(overrides)
    return parse_config(COFFEE_TEXT, values)


def trace_row(step: int, reward: float, vars_aware: int = 1) -> TraceRow:
    return TraceRow(
        step=step,
        episode=0,
        reward=reward,
        rdisc=reward,
        err_approx=None,
        num_vars_aware=vars_aware,
        num_actions_aware=1,
        advice_count=0,
        query_count=0,
    )


class ReplicaSeedTests(SimpleTestCase):
    def test_seeds_are_reproducible_and_distinct(self) -> None:
        seeds = replica_seeds(0, 20)
        self.assertEqual(seeds, replica_seeds(0, 20))
        self.assertEqual(len(set(seeds)), 20)

    def test_prefix_is_stable_when_replicas_grow(self) -> None:
        self.assertEqual(replica_seeds(3, 5), replica_seeds(3, 8)[:5])

    def test_master_seed_changes_streams(self) -> None:
        self.assertNotEqual(replica_seeds(0, 3), replica_seeds(1, 3))


class AggregateTests(SimpleTestCase):
    def test_single_replica_has_zero_stderr(self) -> None:
        replica = ReplicaResult(0, 1, [trace_row(1, 1.0), trace_row(2, 0.5)])
        frame = aggregate([replica])
        self.assertEqual(list(frame["reward_mean"]), [1.0, 0.5])
        self.assertEqual(list(frame["reward_stderr"]), [0.0, 0.0])

    def test_stderr_uses_sample_deviation(self) -> None:
        replicas = [
            ReplicaResult(0, 1, [trace_row(1, 0.0, vars_aware=1)]),
            ReplicaResult(1, 2, [trace_row(1, 1.0, vars_aware=3)]),
        ]
        frame = aggregate(replicas)
        self.assertAlmostEqual(frame["reward_mean"][0], 0.5)
        self.assertAlmostEqual(frame["reward_stderr"][0], np.std([0.0, 1.0], ddof=1) / np.sqrt(2))
        self.assertAlmostEqual(frame["numVarsAware_mean"][0], 2.0)

    def test_missing_error_values_are_skipped(self) -> None:
        rows = [trace_row(1, 0.0), trace_row(1, 0.0)]
        rows[1] = replace(rows[1], err_approx=0.4)
        frame = aggregate([ReplicaResult(0, 1, [rows[0]]), ReplicaResult(1, 2, [rows[1]])])
        self.assertAlmostEqual(frame["errApprox_mean"][0], 0.4)

    def test_unequal_lengths_are_rejected(self) -> None:
        replicas = [
            ReplicaResult(0, 1, [trace_row(1, 0.0)]),
            ReplicaResult(1, 2, [trace_row(1, 0.0), trace_row(2, 0.0)]),
        ]
        with self.assertRaises(ValueError):
            aggregate(replicas)


@override_settings(FMDP_WORKERS=1, FMDP_AUDIT=False)
class RunExperimentTests(SimpleTestCase):
    def run_small(self, out_dir: Path, **overrides: Any) -> Any:
        return run_experiment(small_config(**overrides), out_dir, oracle=coffee_oracle())

    def test_writes_replica_aggregate_and_summary(self) -> None:
        with tempfile.TemporaryDirectory() as tmp:
            out = Path(tmp)
            result = self.run_small(out)
            self.assertTrue((out / "replica_0.csv").exists())
            self.assertTrue((out / "replica_1.csv").exists())
            self.assertTrue((out / "aggregate.csv").exists())
            summary = (out / "summary.txt").read_text(encoding="utf-8")
        self.assertIn("initial_actions = MOVE  (file)", summary)
        self.assertIn("steps = 60  (flag)", summary)
        self.assertIn("epsilon = 0.1  (default)", summary)
        self.assertEqual(len(result.aggregate), 60)
        self.assertEqual(list(result.aggregate["step"]), list(range(1, 61)))

    def test_discounted_reward_follows_recurrence(self) -> None:
        with tempfile.TemporaryDirectory() as tmp:
            self.run_small(Path(tmp))
            rows = read_trace((Path(tmp) / "replica_0.csv").read_text(encoding="utf-8"))
        previous = 0.0
        for row in rows:
            self.assertEqual(row.rdisc, row.reward + 0.99 * previous)
            previous = row.rdisc

    def test_same_seed_gives_identical_files(self) -> None:
        outputs: List[bytes] = []
        for _ in range(2):
            with tempfile.TemporaryDirectory() as tmp:
                self.run_small(Path(tmp))
                outputs.append((Path(tmp) / "replica_1.csv").read_bytes())
                outputs.append((Path(tmp) / "aggregate.csv").read_bytes())
        self.assertEqual(outputs[0], outputs[2])
        self.assertEqual(outputs[1], outputs[3])

    def test_awareness_columns_never_decrease(self) -> None:
        with tempfile.TemporaryDirectory() as tmp:
            result = self.run_small(Path(tmp), steps=300)
        for replica in result.replicas:
            variables = [row.num_vars_aware for row in replica.rows]
            actions = [row.num_actions_aware for row in replica.rows]
            self.assertEqual(variables, sorted(variables))
            self.assertEqual(actions, sorted(actions))
            self.assertGreater(actions[-1], 1)

    def test_single_replica_aggregate_equals_replica(self) -> None:
        with tempfile.TemporaryDirectory() as tmp:
            result = self.run_small(Path(tmp), replicas=1)
        rows = result.replicas[0].rows
        self.assertEqual(list(result.aggregate["rdisc_mean"]), [row.rdisc for row in rows])
        self.assertTrue((result.aggregate["rdisc_stderr"] == 0.0).all())

    def test_final_policy_error_is_exact_on_small_domain(self) -> None:
        with tempfile.TemporaryDirectory() as tmp:
            result = self.run_small(Path(tmp), variant="truePolicy", replicas=1)
        replica = result.replicas[0]
        self.assertAlmostEqual(replica.final_error, 0.0, places=4)
        assert replica.policy is not None
        self.assertIn("DELC", replica.policy)

    def test_random_variant_has_no_policy(self) -> None:
        with tempfile.TemporaryDirectory() as tmp:
            result = self.run_small(Path(tmp), variant="random", replicas=1)
        self.assertIsNone(result.replicas[0].policy)
        self.assertIsNone(result.modal_policy())

    def test_replica_failure_names_replica_and_seed(self) -> None:
        seed = replica_seeds(7, 2)[0]
        with mock.patch("harness.services.runner.build_agent", side_effect=RuntimeError("boom")):
            with tempfile.TemporaryDirectory() as tmp:
                with self.assertRaises(ReplicaError) as caught:
                    self.run_small(Path(tmp))
        self.assertEqual(caught.exception.index, 0)
        self.assertEqual(caught.exception.seed, seed)
        self.assertIn(str(seed), str(caught.exception))


@skipUnless(settings.FMDP_SLOW_TESTS, "FMDP_SLOW_TESTS=True 일 때만 실행")
class CoffeeConvergenceTests(SimpleTestCase):
    """기본 파라미터, 1000단계, 20개 시드로 Coffee 수렴과 전문가 허용 오차 효과 확인"""

    results: Dict[str, RunResult]

    @classmethod
    def setUpClass(cls) -> None:
        super().setUpClass()
        cls.results = {}
        with tempfile.TemporaryDirectory() as tmp, override_settings(FMDP_AUDIT=False):
            for variant in ("default", "lowTolerance", "highTolerance"):
                config = small_config(variant=variant, steps=1000, replicas=20, seed=2024)
                cls.results[variant] = run_experiment(
                    config, Path(tmp) / variant, workers=4, oracle=coffee_oracle()
                )

    def mean_final_vars(self, variant: str) -> float:
        return float(np.mean([r.rows[-1].num_vars_aware for r in self.results[variant].replicas]))

    def test_default_final_policy_error(self) -> None:
        errors = [r.final_error for r in self.results["default"].replicas]
        self.assertEqual(len(errors), 20)
        self.assertTrue(all(error is not None for error in errors))
        self.assertLessEqual(float(np.mean(errors)), 0.15)  # type: ignore[arg-type]

    def test_every_seed_learns_the_needed_actions_and_variables(self) -> None:
        for replica in self.results["default"].replicas:
            last = replica.rows[-1]
            self.assertGreaterEqual(last.num_actions_aware, 3, f"seed {replica.seed}")
            self.assertGreaterEqual(last.num_vars_aware, 4, f"seed {replica.seed}")
            assert replica.policy is not None
            for action in ("BUYC", "DELC", "MOVE"):
                self.assertIn(action, replica.policy, f"seed {replica.seed}")

    def test_tolerant_expert_reveals_fewer_variables(self) -> None:
        tolerant = self.mean_final_vars("highTolerance")
        self.assertLessEqual(tolerant, self.mean_final_vars("default"))
        self.assertLessEqual(tolerant, self.mean_final_vars("lowTolerance"))


class CompareTests(SimpleTestCase):
    def test_sign_test_counts_paired_wins(self) -> None:
        test = paired_sign_test([3.0, 2.0, 5.0, 1.0], [1.0, 2.0, 4.0, 0.0], "a", "b")
        self.assertEqual((test.wins, test.losses, test.ties), (3, 0, 1))
        self.assertAlmostEqual(test.p_value, 0.125)

    def test_sign_test_without_decisive_pairs(self) -> None:
        self.assertEqual(paired_sign_test([1.0], [1.0], "a", "b").p_value, 1.0)

    def test_labels_disambiguate_repeated_variants(self) -> None:
        configs = [small_config(), small_config(), small_config(variant="random")]
        self.assertEqual(variant_labels(configs), ["default", "default_2", "random"])

    def test_mismatched_steps_are_rejected(self) -> None:
        with self.assertRaises(ValueError):
            check_comparable([small_config(steps=60), small_config(steps=70)])

    def test_mismatched_domains_are_rejected(self) -> None:
        factory = parse_config("initial_variables=CONNECTED\n", {"domain": "factory"})
        with self.assertRaises(ValueError):
            check_comparable([small_config(), factory])

    @override_settings(FMDP_WORKERS=1, FMDP_AUDIT=False)
    def test_compare_writes_curves_and_table(self) -> None:
        configs = [small_config(variant="truePolicy"), small_config(variant="random")]
        with tempfile.TemporaryDirectory() as tmp:
            comparison = compare_variants(configs, Path(tmp))
            self.assertTrue((Path(tmp) / "curves.csv").exists())
            self.assertTrue((Path(tmp) / "random" / "aggregate.csv").exists())
        self.assertEqual(list(comparison.table["variant"]), ["truePolicy", "random"])
        self.assertIn("random_rdisc_mean", comparison.curves.columns)
        self.assertEqual(len(comparison.sign_tests), 1)
        self.assertEqual(comparison.sign_tests[0].baseline, "truePolicy")
        self.assertLessEqual(first_step_below(comparison.results[0], 10.0), 60)


class BundledConfigTests(SimpleTestCase):
    def test_coffee_config_matches_experiment_defaults(self) -> None:
        config = parse_config_file(CONFIG_DIR / "coffee.cfg")
        self.assertEqual((config.steps, config.replicas), (1000, 50))
        self.assertEqual((config.mu, config.beta, config.kappa), (10, 0.1, 50))
        self.assertEqual(config.initial_actions, ("MOVE",))
        self.assertEqual(len(config.initial_awareness(load_domain(config)).variables), 1)

    def test_factory_config_resolves_bundled_domain(self) -> None:
        config = parse_config_file(CONFIG_DIR / "factory.cfg")
        self.assertEqual((config.steps, config.replicas), (10000, 20))
        awareness = config.initial_awareness(load_domain(config))
        self.assertEqual(awareness.sorted_actions(), ["BOLT", "DRILLA", "DRILLB", "GLUE"])


@override_settings(FMDP_WORKERS=1, FMDP_AUDIT=False)
class CommandTests(SimpleTestCase):
    def call(self, *args: str) -> str:
        out = io.StringIO()
        call_command(*args, stdout=out)
        return out.getvalue()

    def test_run_writes_outputs(self) -> None:
        with tempfile.TemporaryDirectory() as tmp:
            output = self.call(
                "run",
                f"--config={CONFIG_DIR / 'coffee.cfg'}",
                "--steps=40",
                "--replicas=1",
                f"--out={tmp}",
            )
            self.assertTrue((Path(tmp) / "replica_0.csv").exists())
        self.assertIn("steps = 40  (flag)", output)

    def test_invalid_flag_exits_with_config_code(self) -> None:
        with self.assertRaises(CommandError) as caught:
            self.call("run", "--epsilon=2.0", "--steps=10", "--replicas=1")
        self.assertEqual(caught.exception.returncode, 2)

    def test_missing_domain_exits_with_config_code(self) -> None:
        with self.assertRaises(CommandError) as caught:
            self.call("validate_domain", "/nonexistent/missing.sfmdp")
        self.assertEqual(caught.exception.returncode, 2)

    def test_runtime_failure_exits_with_runtime_code(self) -> None:
        target = "harness.management.commands.run.run_experiment"
        with mock.patch(target, side_effect=RuntimeError("boom")):
            with self.assertRaises(CommandError) as caught:
                self.call("run", "--steps=10", "--replicas=1")
        self.assertEqual(caught.exception.returncode, 3)

    def test_validate_domain_reports_bundled_coffee(self) -> None:
        output = self.call("validate_domain", "coffee")
        self.assertIn("64 states", output)
        self.assertIn("OK", output)

    def test_syntax_error_exits_with_config_code(self) -> None:
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "broken.sfmdp"
            path.write_text("(variables (A 0 1)\naction X\n", encoding="utf-8")
            with self.assertRaises(CommandError) as caught:
                self.call("validate_domain", str(path))
        self.assertEqual(caught.exception.returncode, 2)

    def test_export_policy_prints_optimal_trees(self) -> None:
        output = self.call("export_policy", "coffee")
        self.assertIn("[V+]", output)
        self.assertIn("[policy+]", output)
        self.assertIn("[Q+ DELC]", output)

    def test_export_policy_help_warns_about_oracle_cost(self) -> None:
        self.assertIn("전체 SVI", ExportPolicyCommand.help)
        self.assertIn("Factory", ExportPolicyCommand.help)

    def test_compare_requires_configs_or_variants(self) -> None:
        with self.assertRaises(CommandError) as caught:
            self.call("compare", "--steps=10")
        self.assertEqual(caught.exception.returncode, 2)
