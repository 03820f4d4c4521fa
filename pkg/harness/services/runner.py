import logging

from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from django.conf import settings

from agent.services.learner import StepRecord
from agent.services.variants import build_agent
from domain.config import ExperimentConfig
from domain.entities import TrueFmdp
from domain.parser import parse_domain_file, resolve_domain_path
from domain.trace import TraceRow, write_trace
from expert.services.oracle import ExpertOracle
from model_core.states import PartialState
from model_core.trees import DecisionTree, tree_eval
from planner.flat import FlatModel
from planner.policy import policy_error_exact, policy_error_sampled
from planner.render import render_tree
from planner.services.svi import ValueModel, full_svi
from simulator.services.environment import Environment


logger = logging.getLogger(__name__)

METRIC_COLUMNS = [
    "reward",
    "rdisc",
    "errApprox",
    "numVarsAware",
    "numActionsAware",
    "adviceCount",
    "queryCount",
]


class ReplicaError(RuntimeError):
    """레플리카 실행 실패 (레플리카 번호와 시드 포함)"""

    def __init__(self, index: int, seed: int, cause: Exception) -> None:
        super().__init__(f"레플리카 {index} (seed {seed}) 실패: {cause}")
        self.index = index
        self.seed = seed


@dataclass(frozen=True)
class ReplicaTask:
    config: ExperimentConfig
    domain_path: Path
    index: int
    seed: int
    oracle: ValueModel
    rdisc_factor: float
    flat_state_limit: int


@dataclass
class ReplicaResult:
    index: int
    seed: int
    rows: List[TraceRow]
    policy: Optional[str] = None
    final_error: Optional[float] = None
    discoveries: List[str] = field(default_factory=list)

    @property
    def final_rdisc(self) -> float:
        return self.rows[-1].rdisc if self.rows else 0.0


@dataclass
class RunResult:
    config: ExperimentConfig
    replicas: List[ReplicaResult]
    aggregate: pd.DataFrame
    out_dir: Optional[Path] = None

    def final_rdisc(self) -> List[float]:
        return [replica.final_rdisc for replica in self.replicas]

    def modal_policy(self) -> Optional[str]:
        """복제 실행들의 최종 정책 중 가장 흔한 것 (동률이면 먼저 나온 것)"""
        policies = [replica.policy for replica in self.replicas if replica.policy is not None]
        if not policies:
            return None
        return Counter(policies).most_common(1)[0][0]


def replica_seeds(master_seed: int, count: int) -> List[int]:
    """마스터 시드를 SeedSequence.spawn 으로 나눈 레플리카별 32비트 시드"""
    children = np.random.SeedSequence(master_seed).spawn(count)
    return [int(child.generate_state(1, dtype=np.uint32)[0]) for child in children]


def load_domain(config: ExperimentConfig) -> TrueFmdp:
    return parse_domain_file(resolve_domain_path(config.domain, config.base_dir))


def solve_oracle(domain: TrueFmdp) -> ValueModel:
    return full_svi(
        domain.reward,
        domain.cpds,
        domain.discount,
        domain.terminal_tree(),
        tolerance=settings.FMDP_SVI_TOLERANCE,
        max_iterations=settings.FMDP_SVI_MAX_ITERATIONS,
    )


def to_trace_row(record: StepRecord, rdisc: float) -> TraceRow:
    return TraceRow(
        step=record.step,
        episode=record.episode,
        reward=record.reward,
        rdisc=rdisc,
        err_approx=record.err_approx,
        num_vars_aware=record.num_vars_aware,
        num_actions_aware=record.num_actions_aware,
        advice_count=record.advice_count,
        query_count=record.query_count,
        cutoff=record.cutoff,
        terminal=record.terminal,
    )


def final_policy_error(
    domain: TrueFmdp,
    policy_tree: DecisionTree,
    oracle: ExpertOracle,
    rng: np.random.Generator,
    flat_state_limit: int,
    cutoff: int,
) -> float:
    """작은 도메인은 정확한 정책 오차, 큰 도메인은 표본 추정"""

    def policy(state: PartialState) -> str:
        return str(tree_eval(policy_tree, state))

    if domain.state_count() <= flat_state_limit:
        flat = FlatModel(domain)
        return policy_error_exact(policy, flat, flat.value_iteration())
    logger.warning(
        f"[Runner] 상태 {domain.state_count()}개: 정책 오차를 표본 에피소드로 추정합니다."
    )
    return policy_error_sampled(domain, policy, oracle.start_value, rng, cutoff=cutoff)


def run_replica(task: ReplicaTask) -> ReplicaResult:
    config = task.config.with_seed(task.seed)
    try:
        domain = parse_domain_file(task.domain_path)
        env_rng = np.random.default_rng([task.seed, 0])
        agent_rng = np.random.default_rng([task.seed, 1])
        awareness = config.initial_awareness(domain)
        expert = ExpertOracle(
            domain,
            config.mu,
            config.beta,
            config.kappa,
            evidence=awareness.variables,
            model=task.oracle,
        )
        agent = build_agent(domain, config, expert, agent_rng)
        env = Environment(domain, env_rng)
        logger.info(f"[Runner] 레플리카 {task.index} 시작 (seed {task.seed}, {config.variant})")

        rows: List[TraceRow] = []
        rdisc = 0.0
        for _ in range(config.steps):
            record = agent.run_step(env)
            rdisc = record.reward + task.rdisc_factor * rdisc
            rows.append(to_trace_row(record, rdisc))

        tree = agent.policy_tree()
        result = ReplicaResult(task.index, task.seed, rows)
        if tree is not None:
            result.policy = render_tree(tree, domain.variables)
            result.final_error = final_policy_error(
                domain,
                tree,
                expert,
                np.random.default_rng([task.seed, 2]),
                task.flat_state_limit,
                config.episode_cutoff,
            )
        result.discoveries = list(getattr(agent, "discoveries", []))
    except Exception as e:
        logger.error(f"[Runner] 레플리카 {task.index} (seed {task.seed}) 실패: {e}")
        raise ReplicaError(task.index, task.seed, e) from e
    logger.info(
        f"[Runner] 레플리카 {task.index} 완료: R^disc {result.final_rdisc:.4f}, "
        f"인지 변수 {rows[-1].num_vars_aware}개, 행동 {rows[-1].num_actions_aware}개"
    )
    return result


def replica_frame(replica: ReplicaResult) -> pd.DataFrame:
    frame = pd.DataFrame(
        {
            "step": [row.step for row in replica.rows],
            "reward": [row.reward for row in replica.rows],
            "rdisc": [row.rdisc for row in replica.rows],
            "errApprox": [
                np.nan if row.err_approx is None else row.err_approx for row in replica.rows
            ],
            "numVarsAware": [row.num_vars_aware for row in replica.rows],
            "numActionsAware": [row.num_actions_aware for row in replica.rows],
            "adviceCount": [row.advice_count for row in replica.rows],
            "queryCount": [row.query_count for row in replica.rows],
        }
    )
    frame["replica"] = replica.index
    return frame


def aggregate(replicas: Sequence[ReplicaResult]) -> pd.DataFrame:
    """단계별 평균과 표준오차 (표본 표준편차 / √레플리카 수)"""
    if not replicas:
        raise ValueError("집계할 레플리카가 없습니다.")
    lengths = {len(replica.rows) for replica in replicas}
    if len(lengths) != 1:
        raise ValueError(f"레플리카 길이가 다릅니다: {sorted(lengths)}")
    frame = pd.concat([replica_frame(replica) for replica in replicas], ignore_index=True)
    grouped = frame.groupby("step")[METRIC_COLUMNS]
    means = grouped.mean()
    if len(replicas) > 1:
        errors = grouped.std(ddof=1) / np.sqrt(grouped.count())
    else:
        errors = means * 0.0
    result = pd.DataFrame(index=means.index)
    for column in METRIC_COLUMNS:
        result[f"{column}_mean"] = means[column]
        result[f"{column}_stderr"] = errors[column].fillna(0.0)
    return result.reset_index()


def summary_text(result: RunResult) -> str:
    config = result.config
    lines = ["[config]"]
    for key, value in config.as_dict().items():
        source = config.provenance.get(key, "derived")
        lines.append(f"{key} = {value}  ({source})")

    finals = np.array(result.final_rdisc())
    stderr = finals.std(ddof=1) / np.sqrt(len(finals)) if len(finals) > 1 else 0.0
    lines += ["", "[result]", f"final_rdisc = {finals.mean():.6g} ± {stderr:.3g}"]
    errors = [r.final_error for r in result.replicas if r.final_error is not None]
    if errors:
        lines.append(f"final_policy_error = {np.mean(errors):.6g}")
    last = result.aggregate.iloc[-1]
    lines.append(f"num_vars_aware = {last['numVarsAware_mean']:.3g}")
    lines.append(f"num_actions_aware = {last['numActionsAware_mean']:.3g}")

    lines += ["", "[replicas]"]
    for replica in result.replicas:
        error = "-" if replica.final_error is None else f"{replica.final_error:.6g}"
        discovered = ",".join(replica.discoveries) or "-"
        lines.append(
            f"{replica.index} seed={replica.seed} rdisc={replica.final_rdisc:.6g} "
            f"error={error} discovered={discovered}"
        )
    modal = result.modal_policy()
    if modal is not None:
        lines += ["", "[modal final policy]", modal.rstrip("\n")]
    return "\n".join(lines) + "\n"


def write_outputs(result: RunResult, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    for replica in result.replicas:
        path = out_dir / f"replica_{replica.index}.csv"
        path.write_text(write_trace(replica.rows), encoding="utf-8", newline="")
    result.aggregate.to_csv(out_dir / "aggregate.csv", index=False, float_format="%.10g")
    (out_dir / "summary.txt").write_text(summary_text(result), encoding="utf-8")
    result.out_dir = out_dir
    logger.info(f"[Runner] 결과 저장: {out_dir}")


def default_out_dir(config: ExperimentConfig) -> Path:
    name = Path(config.domain).stem
    return Path(settings.FMDP_OUTPUT_DIR) / f"{name}-{config.variant}-seed{config.seed}"


def run_experiment(
    config: ExperimentConfig,
    out_dir: Optional[Path] = None,
    workers: Optional[int] = None,
    oracle: Optional[ValueModel] = None,
) -> RunResult:
    """레플리카별로 환경, 전문가, 에이전트를 만들어 실행하고 CSV 로 저장"""
    domain_path = resolve_domain_path(config.domain, config.base_dir)
    domain = parse_domain_file(domain_path)
    config.initial_awareness(domain)
    if oracle is None:
        oracle = solve_oracle(domain)
    tasks = [
        ReplicaTask(
            config,
            domain_path,
            index,
            seed,
            oracle,
            settings.FMDP_RDISC_FACTOR,
            settings.FMDP_FLAT_STATE_LIMIT,
        )
        for index, seed in enumerate(replica_seeds(config.seed, config.replicas))
    ]
    workers = workers or settings.FMDP_WORKERS
    logger.info(
        f"[Runner] {config.variant} 실행: 도메인 {domain_path.name}, "
        f"{config.replicas}개 레플리카 × {config.steps}단계 (워커 {workers})"
    )
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            replicas = list(pool.map(run_replica, tasks))
    else:
        replicas = [run_replica(task) for task in tasks]

    result = RunResult(config, replicas, aggregate(replicas))
    write_outputs(result, out_dir or default_out_dir(config))
    return result


def summary_row(result: RunResult) -> Dict[str, float]:
    finals = np.array(result.final_rdisc())
    stderr = finals.std(ddof=1) / np.sqrt(len(finals)) if len(finals) > 1 else 0.0
    last = result.aggregate.iloc[-1]
    errors = [r.final_error for r in result.replicas if r.final_error is not None]
    return {
        "final_rdisc_mean": float(finals.mean()),
        "final_rdisc_stderr": float(stderr),
        "num_vars_aware": float(last["numVarsAware_mean"]),
        "num_actions_aware": float(last["numActionsAware_mean"]),
        "final_policy_error": float(np.mean(errors)) if errors else float("nan"),
    }
