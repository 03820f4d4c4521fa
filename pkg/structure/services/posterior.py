import itertools
import logging
import math

from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from scipy.special import logsumexp

from model_core.states import ActionId, VariableId
from structure.scoring import bde_log_score, config_strides, struct_log_prior


logger = logging.getLogger(__name__)

ParentSet = Tuple[VariableId, ...]


def enumerate_candidates(variables: Sequence[VariableId], max_in_degree: int) -> List[ParentSet]:
    """크기 순, 같은 크기에서는 정렬된 변수의 사전식 순으로 부모 집합 나열"""
    ordered = sorted(variables)
    candidates: List[ParentSet] = []
    for size in range(0, min(max_in_degree, len(ordered)) + 1):
        candidates.extend(itertools.combinations(ordered, size))
    return candidates


class ParentPosterior:
    """(행동, 다음 단계 변수) 쌍의 부모 집합 후보별 BDe 사후확률

    후보별 카운트와 α는 하나의 평탄 배열에 (설정, 자식 값) 순으로 이어 붙여 저장한다.
    """

    def __init__(
        self,
        action: ActionId,
        child: VariableId,
        variables: Sequence[VariableId],
        sizes: Mapping[VariableId, int],
        rho: float,
        max_in_degree: int,
        log_prior: Optional[np.ndarray] = None,
    ) -> None:
        self.action = action
        self.child = child
        self.variables: Tuple[VariableId, ...] = tuple(sorted(variables))
        self.sizes = {var: sizes[var] for var in self.variables}
        self.child_size = sizes[child]
        self.rho = rho
        self.max_in_degree = max_in_degree
        self.candidates = enumerate_candidates(self.variables, max_in_degree)
        self.index: Dict[ParentSet, int] = {pa: i for i, pa in enumerate(self.candidates)}
        self.informed = False
        self.trials = 0

        position = {var: i for i, var in enumerate(self.variables)}
        width = max(1, max(len(pa) for pa in self.candidates))
        self.parent_idx = np.zeros((len(self.candidates), width), dtype=np.int64)
        self.strides = np.zeros((len(self.candidates), width), dtype=np.int64)
        configs = np.ones(len(self.candidates), dtype=np.int64)
        for c, pa in enumerate(self.candidates):
            shape = [self.sizes[var] for var in pa]
            for slot, (var, stride) in enumerate(zip(pa, config_strides(shape))):
                self.parent_idx[c, slot] = position[var]
                self.strides[c, slot] = stride
            configs[c] = int(np.prod(shape, dtype=np.int64))
        self.configs = configs
        self.row_offset = np.concatenate(([0], np.cumsum(configs)[:-1])).astype(np.int64)
        total_rows = int(configs.sum())

        self.counts = np.zeros(total_rows * self.child_size, dtype=np.float64)
        self.alphas = np.full(total_rows * self.child_size, 1.0 / self.child_size)
        self.row_mass = np.ones(total_rows, dtype=np.float64)
        self.log_likelihood = np.zeros(len(self.candidates), dtype=np.float64)

        if log_prior is None:
            n_vars = len(self.variables)
            raw = np.array(
                [struct_log_prior(len(pa), n_vars, rho) for pa in self.candidates]
            )
            log_prior = raw - logsumexp(raw)
        self.log_prior = np.asarray(log_prior, dtype=np.float64)

    def __repr__(self) -> str:
        return f"ParentPosterior({self.action}, {self.child}, {len(self.candidates)} candidates)"

    def cell_slice(self, candidate: int) -> slice:
        start = int(self.row_offset[candidate]) * self.child_size
        return slice(start, start + int(self.configs[candidate]) * self.child_size)

    def table(self, candidate: int) -> Tuple[np.ndarray, np.ndarray]:
        """(설정 수, 자식 값 수) 모양의 카운트와 α 뷰"""
        cells = self.cell_slice(candidate)
        shape = (int(self.configs[candidate]), self.child_size)
        return self.counts[cells].reshape(shape), self.alphas[cells].reshape(shape)

    def config_indices(self, values: np.ndarray) -> np.ndarray:
        """모든 후보에 대해 현재 상태 값 벡터의 부모 설정 인덱스"""
        return np.sum(values[self.parent_idx] * self.strides, axis=1)

    def update(self, values: np.ndarray, child_value: int) -> None:
        """시행 하나를 모든 후보 카운트에 반영하고 로그 점수를 증분 갱신"""
        rows = self.row_offset + self.config_indices(values)
        cells = rows * self.child_size + child_value
        self.log_likelihood += np.log(self.counts[cells] + self.alphas[cells]) - np.log(
            self.row_mass[rows]
        )
        self.counts[cells] += 1.0
        self.row_mass[rows] += 1.0
        self.trials += 1

    def set_alphas(self, alphas: np.ndarray) -> None:
        alphas = np.asarray(alphas, dtype=np.float64)
        if alphas.shape != self.alphas.shape:
            raise ValueError(f"α 배열 크기가 다릅니다: {alphas.shape} != {self.alphas.shape}")
        if np.any(alphas <= 0.0):
            raise ValueError("α는 모두 양수여야 합니다.")
        self.alphas = alphas
        self._refresh()
        self.informed = True

    def reset_counts(self) -> None:
        self.counts[:] = 0.0
        self.trials = 0
        self._refresh()

    def _refresh(self) -> None:
        self.row_mass = (self.counts + self.alphas).reshape(-1, self.child_size).sum(axis=1)
        self.log_likelihood = np.array(
            [
                bde_log_score(*self.table(c)) if self.trials else 0.0
                for c in range(len(self.candidates))
            ]
        )

    def log_scores(self) -> np.ndarray:
        """정규화 전 로그 사후확률"""
        return self.log_prior + self.log_likelihood

    def log_posterior(self) -> np.ndarray:
        scores = self.log_scores()
        return scores - logsumexp(scores)

    def map_index(self) -> int:
        return int(np.argmax(self.log_scores()))

    def map_parents(self) -> ParentSet:
        return self.candidates[self.map_index()]

    def audit(self, trial_values: Sequence[np.ndarray], child_values: Sequence[int]) -> None:
        """시행 기록을 다시 세어 카운트 테이블과 증분 점수를 검증"""
        counts = np.zeros_like(self.counts)
        for values, child_value in zip(trial_values, child_values):
            rows = self.row_offset + self.config_indices(values)
            counts[rows * self.child_size + child_value] += 1.0
        if not np.array_equal(counts, self.counts):
            raise AssertionError(f"카운트 재계산 불일치: {self}")
        for c in range(len(self.candidates)):
            exact = bde_log_score(*self.table(c))
            if not math.isclose(exact, self.log_likelihood[c], rel_tol=1e-9, abs_tol=1e-7):
                raise AssertionError(f"BDe 증분 점수 불일치: {self} {self.candidates[c]}")

    def expanded(
        self, new_variable: VariableId, sizes: Mapping[VariableId, int]
    ) -> "ParentPosterior":
        """새 변수 발견 시 이전 사후확률로 새 사전확률을 만든 후보 가족 (카운트 0)"""
        variables = self.variables + (new_variable,)
        template = ParentPosterior(
            self.action,
            self.child,
            variables,
            sizes,
            self.rho,
            self.max_in_degree,
            log_prior=np.zeros(len(enumerate_candidates(variables, self.max_in_degree))),
        )
        old_posterior = self.log_posterior()
        log_keep, log_add = math.log(1.0 - self.rho), math.log(self.rho)
        raw = np.empty(len(template.candidates))
        for c, pa in enumerate(template.candidates):
            if new_variable in pa:
                base = tuple(var for var in pa if var != new_variable)
                raw[c] = log_add + old_posterior[self.index[base]]
            else:
                raw[c] = log_keep + old_posterior[self.index[pa]]
        # 최대 진입 차수 제한으로 빠진 후보가 있으므로 남은 가족 위에서 재정규화
        template.log_prior = raw - logsumexp(raw)
        return template


class StructureLearner:
    """인지한 모든 행동의 DBN 부모 집합 사후확률 관리"""

    def __init__(
        self,
        variables: Sequence[VariableId],
        sizes: Mapping[VariableId, int],
        rho: float,
        max_in_degree: int,
    ) -> None:
        self.variables: Tuple[VariableId, ...] = tuple(sorted(variables))
        self.sizes = dict(sizes)
        self.rho = rho
        self.max_in_degree = max_in_degree
        self.posteriors: Dict[ActionId, Dict[VariableId, ParentPosterior]] = {}

    def value_vector(self, state: Mapping[VariableId, int]) -> np.ndarray:
        return np.array([state[var] for var in self.variables], dtype=np.int64)

    def fresh_posterior(self, action: ActionId, child: VariableId) -> ParentPosterior:
        return ParentPosterior(
            action, child, self.variables, self.sizes, self.rho, self.max_in_degree
        )

    def init_action(self, action: ActionId) -> Dict[VariableId, ParentPosterior]:
        """새로 알게 된 행동의 DBN을 구조 사전확률로 생성"""
        if action in self.posteriors:
            raise ValueError(f"이미 DBN이 있는 행동입니다: {action}")
        self.posteriors[action] = {
            child: self.fresh_posterior(action, child) for child in self.variables
        }
        logger.info(f"[Structure] 행동 {action}의 DBN 생성 (변수 {len(self.variables)}개)")
        return self.posteriors[action]

    def update(
        self,
        action: ActionId,
        state: Mapping[VariableId, int],
        next_state: Mapping[VariableId, int],
    ) -> None:
        values = self.value_vector(state)
        for child, posterior in self.posteriors[action].items():
            posterior.update(values, next_state[child])

    def rebuild_on_new_variable(
        self, new_variable: VariableId
    ) -> Dict[ActionId, Dict[VariableId, ParentPosterior]]:
        """새 변수를 포함하도록 모든 사후확률을 재구성하고 이전 사후확률을 반환"""
        if new_variable in self.variables:
            raise ValueError(f"이미 인지한 변수입니다: {new_variable}")
        previous = self.posteriors
        self.variables = tuple(sorted(self.variables + (new_variable,)))
        self.posteriors = {}
        for action, children in previous.items():
            rebuilt = {
                child: posterior.expanded(new_variable, self.sizes)
                for child, posterior in children.items()
            }
            rebuilt[new_variable] = self.fresh_posterior(action, new_variable)
            self.posteriors[action] = {child: rebuilt[child] for child in self.variables}
        logger.info(
            f"[Structure] 변수 {new_variable} 추가로 사전확률 재구성 (행동 {len(previous)}개)"
        )
        return previous

    def reset(self) -> None:
        """모든 DBN을 구조 사전확률로 초기화"""
        self.posteriors = {
            action: {child: self.fresh_posterior(action, child) for child in self.variables}
            for action in self.posteriors
        }
