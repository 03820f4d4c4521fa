import itertools
import logging

from typing import Dict, Mapping, Sequence, Tuple

import numpy as np

from model_core.states import PartialState, VariableId
from model_core.trees import DecisionTree, tree_eval, tree_variables
from structure.scoring import config_strides
from structure.services.posterior import ParentPosterior, ParentSet


logger = logging.getLogger(__name__)


class TrialGrouping:
    """버려질 한 행동의 시행 기록을 부모 설정별로 묶어 P(j) 를 추정"""

    def __init__(
        self,
        states: Sequence[Mapping[VariableId, int]],
        variables: Sequence[VariableId],
        sizes: Mapping[VariableId, int],
    ) -> None:
        self.variables = tuple(sorted(variables))
        self.sizes = dict(sizes)
        self.position = {var: i for i, var in enumerate(self.variables)}
        self.states = [PartialState(state) for state in states]
        self.values = np.array(
            [[state[var] for var in self.variables] for state in self.states], dtype=np.int64
        ).reshape(len(self.states), len(self.variables))
        self._index: Dict[ParentSet, np.ndarray] = {}
        self._frequency: Dict[ParentSet, np.ndarray] = {}

    def __len__(self) -> int:
        return len(self.states)

    def shape(self, parents: ParentSet) -> Tuple[int, ...]:
        return tuple(self.sizes[var] for var in parents)

    def config_index(self, parents: ParentSet) -> np.ndarray:
        cached = self._index.get(parents)
        if cached is None:
            strides = np.array(config_strides(self.shape(parents)), dtype=np.int64)
            columns = [self.position[var] for var in parents]
            cached = self.values[:, columns] @ strides if columns else np.zeros(len(self), np.int64)
            self._index[parents] = cached
        return cached

    def config_counts(self, parents: ParentSet) -> np.ndarray:
        configs = int(np.prod(self.shape(parents), dtype=np.int64))
        return np.bincount(self.config_index(parents), minlength=configs).astype(np.float64)

    def frequency(self, parents: ParentSet) -> np.ndarray:
        """평활화한 부모 설정 빈도 (n_j + 1/q) / (n + 1)"""
        cached = self._frequency.get(parents)
        if cached is None:
            counts = self.config_counts(parents)
            cached = (counts + 1.0 / len(counts)) / (len(self) + 1.0)
            self._frequency[parents] = cached
        return cached


class OldModelConditional:
    """이전 MAP CPD 기대 트리에서 P(X'=i | j) 를 부모 설정 표로 계산"""

    def __init__(
        self,
        expected_tree: DecisionTree,
        child_size: int,
        grouping: TrialGrouping,
    ) -> None:
        self.tree = expected_tree
        self.child_size = child_size
        self.grouping = grouping
        self.tree_vars = tree_variables(expected_tree)
        self.trial_probs = np.array(
            [tree_eval(expected_tree, state).probs for state in grouping.states], dtype=np.float64
        ).reshape(len(grouping), child_size)
        self._partial: Dict[Tuple[VariableId, ...], np.ndarray] = {}
        self._tables: Dict[ParentSet, np.ndarray] = {}

    def partial_table(self, variables: Tuple[VariableId, ...]) -> np.ndarray:
        """부분 상태 (variables 만 할당) 에서의 트리 예측, 모양 (|v(variables)|..., k)"""
        cached = self._partial.get(variables)
        if cached is None:
            shape = self.grouping.shape(variables)
            cached = np.empty(shape + (self.child_size,))
            for values in itertools.product(*[range(size) for size in shape]):
                state = PartialState(dict(zip(variables, values)))
                cached[values] = tree_eval(self.tree, state).probs
            self._partial[variables] = cached
        return cached

    def conditional(self, parents: ParentSet) -> np.ndarray:
        """(Σ_{t∈j} θ(i|s_t) + θ(i|j)) / (n_j + 1), 모양 (q, k)"""
        cached = self._tables.get(parents)
        if cached is not None:
            return cached
        shape = self.grouping.shape(parents)
        configs = int(np.prod(shape, dtype=np.int64))
        index = self.grouping.config_index(parents)
        sums = np.stack(
            [
                np.bincount(index, weights=self.trial_probs[:, i], minlength=configs)
                for i in range(self.child_size)
            ],
            axis=1,
        )
        relevant = tuple(var for var in parents if var in self.tree_vars)
        if relevant:
            grid = np.indices(shape)
            lookup = tuple(grid[parents.index(var)] for var in relevant)
            partial = self.partial_table(relevant)[lookup].reshape(configs, self.child_size)
        else:
            partial = np.broadcast_to(self.partial_table(()), (configs, self.child_size))
        cached = (sums + partial) / (self.grouping.config_counts(parents)[:, None] + 1.0)
        self._tables[parents] = cached
        return cached


def repack_alphas(
    posterior: ParentPosterior,
    new_variable: VariableId,
    mass: float,
    old_model: OldModelConditional,
) -> np.ndarray:
    """새 변수가 아닌 자식의 후보 부모 집합별 α = (K/|v(Y)|)·P(j[Y∖z])·P(i|j[Y∖z])"""
    alphas = np.empty_like(posterior.alphas)
    k = posterior.child_size
    for c, parents in enumerate(posterior.candidates):
        old_parents = tuple(var for var in parents if var != new_variable)
        shape = old_model.grouping.shape(old_parents)
        table = (
            old_model.grouping.frequency(old_parents)[:, None]
            * old_model.conditional(old_parents)
        ).reshape(shape + (k,))
        if new_variable in parents:
            axis = parents.index(new_variable)
            full = shape[:axis] + (posterior.sizes[new_variable],) + shape[axis:]
            table = np.broadcast_to(np.expand_dims(table, axis), full + (k,))
        alphas[posterior.cell_slice(c)] = (mass / posterior.configs[c]) * table.reshape(-1)
    return alphas


def new_variable_alphas(
    posterior: ParentPosterior, new_variable: VariableId, mass: float
) -> np.ndarray:
    """새 변수 자신의 CPD α = K / |v(z ∪ Y)|"""
    alphas = np.empty_like(posterior.alphas)
    for c, parents in enumerate(posterior.candidates):
        joint = int(posterior.configs[c])
        if new_variable not in parents:
            joint *= posterior.child_size
        alphas[posterior.cell_slice(c)] = mass / joint
    return alphas


def repack_action(
    posteriors: Mapping[VariableId, ParentPosterior],
    expected_trees: Mapping[VariableId, DecisionTree],
    trial_states: Sequence[Mapping[VariableId, int]],
    old_variables: Sequence[VariableId],
    new_variable: VariableId,
    mass: float,
) -> None:
    """한 행동의 모든 자식 사후확률에 재포장한 α 를 설정"""
    first = next(iter(posteriors.values()))
    grouping = TrialGrouping(trial_states, old_variables, first.sizes)
    for child, posterior in posteriors.items():
        if child == new_variable:
            posterior.reset_counts()
            posterior.set_alphas(new_variable_alphas(posterior, new_variable, mass))
            continue
        old_model = OldModelConditional(expected_trees[child], posterior.child_size, grouping)
        posterior.reset_counts()
        posterior.set_alphas(repack_alphas(posterior, new_variable, mass, old_model))
    logger.debug(
        f"[Repack] 행동 {first.action}: 시행 {len(grouping)}개로 α 재포장"
    )
