import logging

from dataclasses import dataclass
from functools import reduce
from typing import (
    Any,
    Callable,
    Dict,
    FrozenSet,
    Iterator,
    List,
    Mapping,
    Optional,
    Sequence,
    Set,
    Tuple,
    Union,
)

import numpy as np

from model_core.states import VariableId


logger = logging.getLogger(__name__)

PAYLOAD_TOLERANCE = 1e-9


class PayloadMismatchError(ValueError):
    """병합 대상 트리의 리프 종류가 서로 다름"""


@dataclass(frozen=True)
class Distribution:
    """한 변수 도메인 위의 범주 분포"""

    probs: Tuple[float, ...]

    def __post_init__(self) -> None:
        if any(p < 0.0 for p in self.probs):
            raise ValueError(f"음수 확률이 포함되어 있습니다: {self.probs}")
        total = sum(self.probs)
        if abs(total - 1.0) > PAYLOAD_TOLERANCE:
            raise ValueError(f"분포 합이 1이 아닙니다: {total}")

    def __len__(self) -> int:
        return len(self.probs)

    def __getitem__(self, index: int) -> float:
        return self.probs[index]

    @classmethod
    def normalized(cls, weights: Sequence[float]) -> "Distribution":
        total = float(sum(weights))
        return cls(tuple(float(w) / total for w in weights))

    @classmethod
    def point(cls, index: int, size: int) -> "Distribution":
        return cls(tuple(1.0 if i == index else 0.0 for i in range(size)))


class DirichletLeaf:
    """ITI 리프의 관측 횟수 N과 의사 카운트 α (단일 소유자만 변경)"""

    __slots__ = ("counts", "alphas")

    def __init__(self, alphas: Sequence[float], counts: Optional[Sequence[float]] = None):
        self.alphas = np.asarray(alphas, dtype=np.float64)
        if np.any(self.alphas <= 0.0):
            raise ValueError(f"α는 양수여야 합니다: {self.alphas}")
        if counts is None:
            self.counts = np.zeros_like(self.alphas)
        else:
            self.counts = np.asarray(counts, dtype=np.float64)

    def __repr__(self) -> str:
        return f"Dirichlet(N={self.counts.tolist()}, α={self.alphas.tolist()})"


@dataclass(frozen=True, eq=False)
class Leaf:
    payload: Any


@dataclass(frozen=True, eq=False)
class Test:
    """이진 테스트 (variable = value ?)"""

    variable: VariableId
    value: int
    passed: "DecisionTree"
    failed: "DecisionTree"


DecisionTree = Union[Leaf, Test]

# 경로 문맥: 확정 값(int) 또는 배제된 값 집합
Context = Dict[VariableId, Union[int, FrozenSet[int]]]


def payload_kind(payload: Any) -> str:
    if isinstance(payload, (bool, np.bool_)):
        return "label"
    if isinstance(payload, (int, float, np.floating, np.integer)):
        return "scalar"
    if isinstance(payload, Distribution):
        return "distribution"
    if isinstance(payload, DirichletLeaf):
        return "dirichlet"
    return "label"


def payloads_equal(a: Any, b: Any, tolerance: float = PAYLOAD_TOLERANCE) -> bool:
    kind = payload_kind(a)
    if kind != payload_kind(b):
        return False
    if kind == "scalar":
        return abs(float(a) - float(b)) <= tolerance
    if kind == "distribution":
        return len(a) == len(b) and all(
            abs(p - q) <= tolerance for p, q in zip(a.probs, b.probs)
        )
    if kind == "dirichlet":
        return bool(
            np.array_equal(a.counts, b.counts) and np.array_equal(a.alphas, b.alphas)
        )
    return bool(a == b)


def decide(context: Mapping[VariableId, Any], variable: VariableId, value: int) -> Optional[bool]:
    """경로 문맥으로 테스트 결과가 정해지면 True/False, 아니면 None"""
    known = context.get(variable)
    if known is None:
        return None
    if isinstance(known, int):
        return known == value
    return False if value in known else None


def extend(context: Context, variable: VariableId, value: int, outcome: bool) -> Context:
    extended = dict(context)
    if outcome:
        extended[variable] = value
    else:
        known = extended.get(variable)
        excluded = known if isinstance(known, frozenset) else frozenset()
        extended[variable] = excluded | {value}
    return extended


def _skip(tree: DecisionTree, context: Context) -> DecisionTree:
    while isinstance(tree, Test):
        outcome = decide(context, tree.variable, tree.value)
        if outcome is None:
            return tree
        tree = tree.passed if outcome else tree.failed
    return tree


def tree_eval(tree: DecisionTree, state: Mapping[VariableId, int]) -> Any:
    """상태로 트리를 따라가 리프 payload 반환 (할당 없는 변수의 테스트는 실패)"""
    node = tree
    while isinstance(node, Test):
        node = node.passed if state.get(node.variable) == node.value else node.failed
    return node.payload


def tree_combine(trees: Sequence[DecisionTree], combiner: Callable[..., Any]) -> DecisionTree:
    """여러 트리를 동시에 펼쳐 각 영역의 리프 payload를 combiner로 결합"""
    if not trees:
        raise ValueError("결합할 트리가 없습니다.")
    return _combine(list(trees), combiner, {})


def _combine(
    trees: List[DecisionTree], combiner: Callable[..., Any], context: Context
) -> DecisionTree:
    trees = [_skip(tree, context) for tree in trees]
    pivot = next((tree for tree in trees if isinstance(tree, Test)), None)
    if pivot is None:
        return Leaf(combiner(*[tree.payload for tree in trees]))  # type: ignore[union-attr]
    assert isinstance(pivot, Test)
    return Test(
        pivot.variable,
        pivot.value,
        _combine(trees, combiner, extend(context, pivot.variable, pivot.value, True)),
        _combine(trees, combiner, extend(context, pivot.variable, pivot.value, False)),
    )


def tree_merge(trees: Sequence[DecisionTree], combiner: Callable[[Any, Any], Any]) -> DecisionTree:
    """combiner 폴드로 트리들을 병합한 뒤 축약"""
    if not trees:
        raise ValueError("병합할 트리가 없습니다.")
    kinds = {payload_kind(payload) for tree in trees for payload in tree_payloads(tree)}
    if len(kinds) > 1:
        raise PayloadMismatchError(f"리프 종류가 섞여 있습니다: {sorted(kinds)}")
    merged = tree_combine(trees, lambda *payloads: reduce(combiner, payloads))
    return tree_reduce(merged)


def tree_reduce(tree: DecisionTree) -> DecisionTree:
    """경로와 모순되는 테스트와 양쪽 가지가 같은 테스트 제거"""
    return _reduce(tree, {})


def _reduce(tree: DecisionTree, context: Context) -> DecisionTree:
    tree = _skip(tree, context)
    if isinstance(tree, Leaf):
        return tree
    passed = _reduce(tree.passed, extend(context, tree.variable, tree.value, True))
    failed = _reduce(tree.failed, extend(context, tree.variable, tree.value, False))
    if trees_equal(passed, failed):
        return passed
    if passed is tree.passed and failed is tree.failed:
        return tree
    return Test(tree.variable, tree.value, passed, failed)


def trees_equal(a: DecisionTree, b: DecisionTree, tolerance: float = PAYLOAD_TOLERANCE) -> bool:
    """구조와 리프 payload가 모두 같은지 비교"""
    if a is b:
        return True
    if isinstance(a, Leaf) and isinstance(b, Leaf):
        return payloads_equal(a.payload, b.payload, tolerance)
    if isinstance(a, Test) and isinstance(b, Test):
        return (
            a.variable == b.variable
            and a.value == b.value
            and trees_equal(a.passed, b.passed, tolerance)
            and trees_equal(a.failed, b.failed, tolerance)
        )
    return False


def map_leaves(tree: DecisionTree, fn: Callable[[Any], Any]) -> DecisionTree:
    if isinstance(tree, Leaf):
        return Leaf(fn(tree.payload))
    return Test(tree.variable, tree.value, map_leaves(tree.passed, fn), map_leaves(tree.failed, fn))


def iter_leaves(tree: DecisionTree) -> Iterator[Tuple[Context, Leaf]]:
    """(경로 문맥, 리프) 쌍 순회"""
    stack: List[Tuple[DecisionTree, Context]] = [(tree, {})]
    while stack:
        node, context = stack.pop()
        if isinstance(node, Leaf):
            yield context, node
            continue
        stack.append((node.failed, extend(context, node.variable, node.value, False)))
        stack.append((node.passed, extend(context, node.variable, node.value, True)))


def tree_payloads(tree: DecisionTree) -> List[Any]:
    payloads: List[Any] = []
    stack = [tree]
    while stack:
        node = stack.pop()
        if isinstance(node, Leaf):
            payloads.append(node.payload)
        else:
            stack.extend((node.failed, node.passed))
    return payloads


def tree_variables(tree: DecisionTree) -> Set[VariableId]:
    found: Set[VariableId] = set()
    stack = [tree]
    while stack:
        node = stack.pop()
        if isinstance(node, Test):
            found.add(node.variable)
            stack.extend((node.passed, node.failed))
    return found


def tree_size(tree: DecisionTree) -> int:
    """리프 개수"""
    if isinstance(tree, Leaf):
        return 1
    return tree_size(tree.passed) + tree_size(tree.failed)


def is_path_consistent(tree: DecisionTree) -> bool:
    """경로상에서 이미 결정된 테스트가 다시 나오지 않는지 검사"""
    stack: List[Tuple[DecisionTree, Context]] = [(tree, {})]
    while stack:
        node, context = stack.pop()
        if isinstance(node, Leaf):
            continue
        if decide(context, node.variable, node.value) is not None:
            return False
        stack.append((node.passed, extend(context, node.variable, node.value, True)))
        stack.append((node.failed, extend(context, node.variable, node.value, False)))
    return True


def assert_path_consistent(tree: DecisionTree, owner: str) -> None:
    if not is_path_consistent(tree):
        logger.error(f"[Tree Audit] 경로 일관성 위반: {owner}")
        raise AssertionError(f"경로 일관성 위반 트리: {owner}")


def conjunction_tree(
    conditions: Sequence[Tuple[VariableId, int]], inside: Any, outside: Any
) -> DecisionTree:
    """모든 조건을 만족하면 inside, 아니면 outside 리프인 트리"""
    tree: DecisionTree = Leaf(inside)
    for variable, value in sorted(conditions, reverse=True):
        tree = Test(variable, value, tree, Leaf(outside))
    return tree
