import logging

from typing import Dict, FrozenSet, Iterator, List, Mapping, Sequence, Tuple, Union

import numpy as np

from model_core.states import VariableId
from model_core.trees import (
    Context,
    DecisionTree,
    DirichletLeaf,
    Distribution,
    Leaf,
    Test,
    extend,
    iter_leaves,
    map_leaves,
)
from structure.scoring import log_multivariate_beta


logger = logging.getLogger(__name__)

SPLIT_MARGIN = 1e-12

# 부모 변수별 허용 값 집합의 곱으로 표현한 영역
Region = Tuple[FrozenSet[int], ...]


def expected_params(leaf: DirichletLeaf) -> Distribution:
    """리프의 기대 파라미터 (N_i + α_i) / (N + α)"""
    weights = leaf.counts + leaf.alphas
    return Distribution(tuple(float(w) for w in weights / weights.sum()))


def tree_prior_from_alphas(tree: DecisionTree) -> float:
    """재포장된 α에서 얻는 트리 사전확률 Σ_ℓ log Β(α_ℓ) (정규화 상수 생략)"""
    return float(
        sum(log_multivariate_beta(leaf.payload.alphas) for _, leaf in iter_leaves(tree))
    )


def dt_log_posterior(tree: DecisionTree, informed: bool) -> float:
    """CPD 트리의 로그 사후확률 (비례 상수 생략)

    사전 정보가 없으면 트리 사전확률은 균등, 재포장 이후에는 Σ_ℓ log Β(α_ℓ).
    """
    total = 0.0
    for _, leaf in iter_leaves(tree):
        payload: DirichletLeaf = leaf.payload
        total += _leaf_score(payload.counts, payload.alphas, informed)
    return total


def _leaf_score(counts: np.ndarray, alphas: np.ndarray, informed: bool) -> float:
    score = float(log_multivariate_beta(counts + alphas))
    if not informed:
        score -= float(log_multivariate_beta(alphas))
    return score


class CpdTree:
    """MAP 부모 집합에 테스트를 제한한 한 (행동, 변수) 쌍의 CPD 결정 트리

    부모 설정별 (N, α) 표를 가지고, 영역별 최적 부분 트리를 캐시한다.
    새 예제가 들어오면 그 설정을 포함하는 영역의 캐시만 stale 처리되고,
    restructure()가 stale 영역의 테스트를 다시 고른다.
    """

    def __init__(
        self,
        action: str,
        child: VariableId,
        parents: Sequence[VariableId],
        sizes: Mapping[VariableId, int],
        child_size: int,
        alphas: np.ndarray,
        examples: Sequence[Tuple[Mapping[VariableId, int], int]] = (),
        informed: bool = False,
    ) -> None:
        self.action = action
        self.child = child
        self.parents: Tuple[VariableId, ...] = tuple(parents)
        self.shape = tuple(sizes[var] for var in self.parents)
        self.child_size = child_size
        table_shape = self.shape + (child_size,)
        self.counts = np.zeros(table_shape)
        self.alphas = np.array(alphas, dtype=np.float64).reshape(table_shape)
        self.informed = informed
        self.examples: List[Tuple[Tuple[int, ...], int]] = []
        for state, child_value in examples:
            config = self.parent_values(state)
            self.counts[config + (child_value,)] += 1.0
            self.examples.append((config, child_value))
        self._cache: Dict[Region, Tuple[float, DecisionTree]] = {}
        self.tree: DecisionTree = self.restructure()

    def __repr__(self) -> str:
        return f"CpdTree({self.action}, {self.child} | {', '.join(self.parents) or '∅'})"

    @property
    def root_region(self) -> Region:
        return tuple(frozenset(range(size)) for size in self.shape)

    @property
    def stale(self) -> bool:
        return self.root_region not in self._cache

    def parent_values(self, state: Mapping[VariableId, int]) -> Tuple[int, ...]:
        return tuple(state[var] for var in self.parents)

    def insert(self, state: Mapping[VariableId, int], child_value: int) -> None:
        """예제 하나를 표에 더하고 그 설정을 포함한 영역을 stale 처리"""
        config = self.parent_values(state)
        self.counts[config + (child_value,)] += 1.0
        self.examples.append((config, child_value))
        self._cache = {
            region: entry
            for region, entry in self._cache.items()
            if not all(value in allowed for value, allowed in zip(config, region))
        }

    def restructure(self) -> DecisionTree:
        """stale 영역에서 더 높은 사후확률의 테스트로 교체한 트리"""
        if not self.stale:
            return self.tree
        _, tree = self._best(self.root_region)
        self.tree = tree
        return tree

    def score(self) -> float:
        return self._best(self.root_region)[0]

    def expected_tree(self) -> DecisionTree:
        return map_leaves(self.restructure(), expected_params)

    def region_table(self, region: Region) -> Tuple[np.ndarray, np.ndarray]:
        index = np.ix_(*[sorted(allowed) for allowed in region], range(self.child_size))
        axes = tuple(range(len(self.parents)))
        return self.counts[index].sum(axis=axes), self.alphas[index].sum(axis=axes)

    def score_structure(self, tree: DecisionTree) -> float:
        """부모 변수 위의 임의 트리 구조를 현재 표로 채점"""
        return dt_log_posterior(self.fill(tree, {}), self.informed)

    def fill(self, tree: DecisionTree, context: Context) -> DecisionTree:
        if isinstance(tree, Leaf):
            return self._leaf(_region_of(context, self.parents, self.shape))
        return Test(
            tree.variable,
            tree.value,
            self.fill(tree.passed, extend(context, tree.variable, tree.value, True)),
            self.fill(tree.failed, extend(context, tree.variable, tree.value, False)),
        )

    def _leaf(self, region: Region) -> Leaf:
        counts, alphas = self.region_table(region)
        return Leaf(DirichletLeaf(alphas, counts))

    def _splits(self, region: Region) -> Iterator[Tuple[int, int]]:
        for position, allowed in enumerate(region):
            if len(allowed) < 2:
                continue
            for value in sorted(allowed):
                yield position, value

    def _best(self, region: Region) -> Tuple[float, DecisionTree]:
        cached = self._cache.get(region)
        if cached is not None:
            return cached
        counts, alphas = self.region_table(region)
        best_score = _leaf_score(counts, alphas, self.informed)
        best: DecisionTree = Leaf(DirichletLeaf(alphas, counts))
        threshold = best_score + SPLIT_MARGIN
        for position, value in self._splits(region):
            passed_region = region[:position] + (frozenset({value}),) + region[position + 1 :]
            failed_region = (
                region[:position] + (region[position] - {value},) + region[position + 1 :]
            )
            passed_score, passed = self._best(passed_region)
            failed_score, failed = self._best(failed_region)
            if passed_score + failed_score > threshold:
                threshold = passed_score + failed_score
                best_score = threshold
                best = Test(self.parents[position], value, passed, failed)
        self._cache[region] = (best_score, best)
        return best_score, best

    def audit(self) -> None:
        """리프에 도달하는 예제를 다시 세어 리프 카운트와 비교"""
        tree = self.restructure()
        table = np.zeros_like(self.counts)
        for config, child_value in self.examples:
            table[config + (child_value,)] += 1.0
        if not np.array_equal(table, self.counts):
            raise AssertionError(f"카운트 표와 예제 기록이 다릅니다: {self}")
        recount: Dict[int, np.ndarray] = {}
        for config, child_value in self.examples:
            node = tree
            while isinstance(node, Test):
                position = self.parents.index(node.variable)
                node = node.passed if config[position] == node.value else node.failed
            recount.setdefault(id(node), np.zeros(self.child_size))[child_value] += 1.0
        for _, leaf in iter_leaves(tree):
            routed = recount.get(id(leaf), np.zeros(self.child_size))
            if not np.array_equal(routed, leaf.payload.counts):
                logger.error(f"[Tree Audit] 리프 카운트 불일치: {self}")
                raise AssertionError(f"리프 카운트가 재계산과 다릅니다: {self}")


def _region_of(
    context: Mapping[VariableId, Union[int, FrozenSet[int]]],
    parents: Sequence[VariableId],
    shape: Sequence[int],
) -> Region:
    region = []
    for var, size in zip(parents, shape):
        known = context.get(var)
        if isinstance(known, int):
            region.append(frozenset({known}))
        elif known is None:
            region.append(frozenset(range(size)))
        else:
            region.append(frozenset(range(size)) - known)
    return tuple(region)
