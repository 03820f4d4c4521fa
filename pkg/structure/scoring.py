import math

from typing import Sequence, Tuple

import numpy as np

from scipy.special import gammaln


def struct_log_prior(parent_count: int, n_vars: int, rho: float) -> float:
    """부모 집합 크기에 대한 구조 사전확률 (의존성이 많을수록 벌점)"""
    if not 0.0 < rho < 0.5:
        raise ValueError(f"rho는 (0, 0.5) 범위여야 합니다: {rho}")
    return parent_count * math.log(rho) + (n_vars - parent_count) * math.log(1.0 - rho)


def log_multivariate_beta(alphas: np.ndarray) -> np.ndarray:
    """마지막 축을 따라 log Β(α_1, ..., α_m)"""
    alphas = np.asarray(alphas, dtype=np.float64)
    return np.sum(gammaln(alphas), axis=-1) - gammaln(np.sum(alphas, axis=-1))


def bde_log_score(counts: np.ndarray, alphas: np.ndarray, log_prior: float = 0.0) -> float:
    """BDe 점수: logPrior + Σ_j [log Β(N_j + α_j) - log Β(α_j)]

    counts, alphas 모양은 (부모 설정 수, 자식 값 수).
    """
    counts = np.asarray(counts, dtype=np.float64)
    alphas = np.asarray(alphas, dtype=np.float64)
    if counts.shape != alphas.shape:
        raise ValueError(f"카운트와 α 모양이 다릅니다: {counts.shape} != {alphas.shape}")
    if np.any(alphas <= 0.0):
        raise ValueError("α는 모두 양수여야 합니다.")
    data_term = log_multivariate_beta(counts + alphas) - log_multivariate_beta(alphas)
    return float(log_prior + np.sum(data_term))


def config_strides(sizes: Sequence[int]) -> Tuple[int, ...]:
    """부모 값 튜플을 설정 인덱스로 바꾸는 혼합 진법 자릿값 (첫 부모가 최상위)"""
    strides = []
    acc = 1
    for size in reversed(sizes):
        strides.append(acc)
        acc *= size
    return tuple(reversed(strides))
