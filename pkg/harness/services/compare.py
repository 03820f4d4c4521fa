import logging

from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from scipy import stats

from domain.config import ExperimentConfig
from domain.parser import resolve_domain_path
from harness.services.runner import (
    RunResult,
    load_domain,
    run_experiment,
    solve_oracle,
    summary_row,
)


logger = logging.getLogger(__name__)

CURVE_COLUMNS = ["rdisc", "errApprox", "numVarsAware", "numActionsAware"]
ERROR_THRESHOLD = 0.15


@dataclass(frozen=True)
class SignTest:
    baseline: str
    other: str
    wins: int
    losses: int
    ties: int
    p_value: float


@dataclass
class Comparison:
    labels: List[str]
    results: List[RunResult]
    curves: pd.DataFrame
    table: pd.DataFrame
    sign_tests: List[SignTest]


def variant_labels(configs: Sequence[ExperimentConfig]) -> List[str]:
    """variant 이름, 중복이면 순번을 붙인다"""
    counts: Dict[str, int] = {}
    labels = []
    for config in configs:
        seen = counts.get(config.variant, 0)
        counts[config.variant] = seen + 1
        labels.append(config.variant if seen == 0 else f"{config.variant}_{seen + 1}")
    return labels


def check_comparable(configs: Sequence[ExperimentConfig]) -> None:
    if len(configs) < 2:
        raise ValueError("비교하려면 설정이 2개 이상 필요합니다.")
    domains = {resolve_domain_path(c.domain, c.base_dir).resolve() for c in configs}
    if len(domains) != 1:
        raise ValueError(f"도메인이 서로 다릅니다: {sorted(str(d) for d in domains)}")
    steps = {c.steps for c in configs}
    if len(steps) != 1:
        raise ValueError(f"단계 수 T 가 서로 다릅니다: {sorted(steps)}")


def paired_sign_test(
    baseline: Sequence[float], other: Sequence[float], baseline_label: str, other_label: str
) -> SignTest:
    """같은 시드끼리 짝지어 baseline 이 더 큰지 단측 부호 검정 (동률 제외)"""
    pairs = list(zip(baseline, other))
    wins = sum(1 for a, b in pairs if a > b)
    losses = sum(1 for a, b in pairs if a < b)
    ties = len(pairs) - wins - losses
    n = wins + losses
    p_value = stats.binomtest(wins, n, 0.5, alternative="greater").pvalue if n else 1.0
    return SignTest(baseline_label, other_label, wins, losses, ties, float(p_value))


def first_step_below(result: RunResult, threshold: float) -> float:
    """레플리카별 errApprox 가 처음 threshold 이하가 된 단계의 평균 (도달 못하면 T)"""
    steps = []
    for replica in result.replicas:
        reached = [
            row.step
            for row in replica.rows
            if row.err_approx is not None and row.err_approx <= threshold
        ]
        steps.append(reached[0] if reached else len(replica.rows))
    return float(np.mean(steps))


def aligned_curves(labels: Sequence[str], results: Sequence[RunResult]) -> pd.DataFrame:
    curves = pd.DataFrame({"step": results[0].aggregate["step"]})
    for label, result in zip(labels, results):
        for column in CURVE_COLUMNS:
            curves[f"{label}_{column}_mean"] = result.aggregate[f"{column}_mean"].to_numpy()
            curves[f"{label}_{column}_stderr"] = result.aggregate[f"{column}_stderr"].to_numpy()
    return curves


def compare_variants(
    configs: Sequence[ExperimentConfig],
    out_dir: Path,
    workers: Optional[int] = None,
    threshold: float = ERROR_THRESHOLD,
) -> Comparison:
    """같은 도메인, 같은 마스터 시드로 여러 변형을 실행하고 곡선과 요약표를 만든다"""
    check_comparable(configs)
    labels = variant_labels(configs)
    oracle = solve_oracle(load_domain(configs[0]))

    results = []
    for label, config in zip(labels, configs):
        logger.info(f"[Compare] {label} 실행")
        results.append(run_experiment(config, out_dir / label, workers=workers, oracle=oracle))

    rows = []
    for label, result in zip(labels, results):
        row: Dict[str, object] = {"variant": label, "replicas": len(result.replicas)}
        row.update(summary_row(result))
        row["mean_steps_to_error"] = first_step_below(result, threshold)
        rows.append(row)
    table = pd.DataFrame(rows)

    baseline = results[0].final_rdisc()
    sign_tests = [
        paired_sign_test(baseline, result.final_rdisc(), labels[0], label)
        for label, result in zip(labels[1:], results[1:])
    ]
    curves = aligned_curves(labels, results)
    comparison = Comparison(labels, results, curves, table, sign_tests)
    write_comparison(comparison, out_dir)
    return comparison


def comparison_text(comparison: Comparison) -> str:
    lines = [comparison.table.to_string(index=False, float_format=lambda v: f"{v:.4g}"), ""]
    for test in comparison.sign_tests:
        lines.append(
            f"sign test {test.baseline} > {test.other}: "
            f"wins={test.wins} losses={test.losses} ties={test.ties} p={test.p_value:.4g}"
        )
    return "\n".join(lines) + "\n"


def write_comparison(comparison: Comparison, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    comparison.curves.to_csv(out_dir / "curves.csv", index=False, float_format="%.10g")
    comparison.table.to_csv(out_dir / "comparison.csv", index=False, float_format="%.10g")
    (out_dir / "comparison.txt").write_text(comparison_text(comparison), encoding="utf-8")
    logger.info(f"[Compare] 비교 결과 저장: {out_dir}")
