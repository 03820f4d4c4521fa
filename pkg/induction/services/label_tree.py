import logging
import math

from collections import Counter
from typing import Dict, Hashable, Iterable, List, Mapping, Optional, Tuple

from model_core.states import PartialState, VariableId, project
from model_core.trees import Context, DecisionTree, Leaf, Test, decide, extend


logger = logging.getLogger(__name__)

GAIN_MARGIN = 1e-12

TestKey = Tuple[VariableId, int]


def entropy(counts: Mapping[Hashable, int]) -> float:
    total = sum(counts.values())
    if total == 0:
        return 0.0
    return -sum(
        (n / total) * math.log2(n / total) for n in counts.values() if n > 0
    )


class _Node:
    """예제 키와 후보 테스트별 레이블 카운트를 캐시하는 노드"""

    __slots__ = ("examples", "label_counts", "test_counts", "test", "passed", "failed", "stale")

    def __init__(self) -> None:
        self.examples: Dict[PartialState, Hashable] = {}
        self.label_counts: Counter = Counter()
        self.test_counts: Dict[TestKey, Counter] = {}
        self.test: Optional[TestKey] = None
        self.passed: Optional["_Node"] = None
        self.failed: Optional["_Node"] = None
        self.stale = True

    @property
    def is_leaf(self) -> bool:
        return self.test is None

    def add(self, key: PartialState, label: Hashable) -> None:
        self.examples[key] = label
        self.label_counts[label] += 1
        for test in key.items():
            self.test_counts.setdefault(test, Counter())[label] += 1
        self.stale = True

    def remove(self, key: PartialState) -> Hashable:
        label = self.examples.pop(key)
        self.label_counts[label] -= 1
        if not self.label_counts[label]:
            del self.label_counts[label]
        for test in key.items():
            counts = self.test_counts[test]
            counts[label] -= 1
            if not counts[label]:
                del counts[label]
        self.stale = True
        return label

    def child_for(self, key: PartialState) -> "_Node":
        assert self.test is not None and self.passed is not None and self.failed is not None
        variable, value = self.test
        return self.passed if key.get(variable) == value else self.failed


class LabelTree:
    """정보 이득으로 테스트를 고르는 점진적 분류 트리 (보상, 종료 레이블)

    테스트 후보는 variables의 (변수, 값) 쌍이며, 값이 없는 변수의 테스트는 실패로 보낸다.
    같은 투영 키의 예제는 최신 레이블로 교체된다.
    """

    def __init__(
        self, name: str, variables: Iterable[VariableId], sizes: Mapping[VariableId, int]
    ) -> None:
        self.name = name
        self.sizes = dict(sizes)
        self.variables = frozenset(variables)
        self.root = _Node()
        self.order: Dict[PartialState, int] = {}
        self._clock = 0

    def __repr__(self) -> str:
        return f"LabelTree({self.name}, {sorted(self.variables)}, {len(self.order)} examples)"

    def __len__(self) -> int:
        return len(self.order)

    @property
    def candidate_tests(self) -> List[TestKey]:
        return [(var, value) for var in sorted(self.variables) for value in range(self.sizes[var])]

    def insert(self, state: Mapping[VariableId, int], label: Hashable) -> None:
        """예제를 잎까지 내려 보내며 경로의 카운트를 갱신하고 stale 처리"""
        key = project(state, self.variables)
        if key in self.order:
            self._detach(key)
        self._clock += 1
        self.order[key] = self._clock
        node = self.root
        node.add(key, label)
        while not node.is_leaf:
            node = node.child_for(key)
            node.add(key, label)

    def _detach(self, key: PartialState) -> None:
        node = self.root
        node.remove(key)
        while not node.is_leaf:
            node = node.child_for(key)
            node.remove(key)
        del self.order[key]

    def set_variables(self, variables: Iterable[VariableId]) -> None:
        """테스트 후보 변수를 바꾸고 모든 노드를 stale 처리"""
        self.variables = frozenset(variables)
        examples = sorted(self.root.examples.items(), key=lambda item: self.order[item[0]])
        self.root = _Node()
        self.order = {}
        for key, label in examples:
            self.insert(key, label)

    def restructure(self) -> DecisionTree:
        """stale 노드에서 정보 이득이 가장 큰 테스트로 교체하고 트리를 반환"""
        self._restructure(self.root, {})
        return self.tree()

    def _restructure(self, node: _Node, context: Context) -> None:
        if not node.stale:
            return
        best = self._choose(node, context)
        if best != node.test:
            if node.test is not None:
                logger.debug(f"[ITI] {self.name}: 테스트 {node.test} -> {best} 교체")
            self._split(node, best)
        node.stale = False
        if node.test is not None:
            assert node.passed is not None and node.failed is not None
            variable, value = node.test
            self._restructure(node.passed, extend(context, variable, value, True))
            self._restructure(node.failed, extend(context, variable, value, False))

    def _split(self, node: _Node, test: Optional[TestKey]) -> None:
        node.test = test
        if test is None:
            node.passed = node.failed = None
            return
        node.passed, node.failed = _Node(), _Node()
        for key in sorted(node.examples, key=self.order.__getitem__):
            node.child_for(key).add(key, node.examples[key])

    def _choose(self, node: _Node, context: Context) -> Optional[TestKey]:
        if len(node.label_counts) < 2:
            return None
        total = sum(node.label_counts.values())
        base = entropy(node.label_counts)
        best: Optional[TestKey] = None
        best_gain = GAIN_MARGIN
        separating: Optional[TestKey] = None
        for test in self.candidate_tests:
            if decide(context, *test) is not None:
                continue
            passed = node.test_counts.get(test, Counter())
            passed_total = sum(passed.values())
            if passed_total == 0 or passed_total == total:
                continue
            if separating is None:
                separating = test
            failed = node.label_counts - passed
            gain = base - (
                passed_total * entropy(passed) + (total - passed_total) * entropy(failed)
            ) / total
            if gain > best_gain:
                best, best_gain = test, gain
        # 단일 테스트 이득이 없어도 (XOR 형태) 레이블을 가르는 첫 테스트로 분할
        return best if best is not None else separating

    def _leaf_label(self, node: _Node) -> Hashable:
        if not node.label_counts:
            return None
        top = max(node.label_counts.values())
        newest = max(
            (self.order[key], label)
            for key, label in node.examples.items()
            if node.label_counts[label] == top
        )
        return newest[1]

    def tree(self) -> DecisionTree:
        return self._to_tree(self.root)

    def _to_tree(self, node: _Node) -> DecisionTree:
        if node.is_leaf:
            return Leaf(self._leaf_label(node))
        assert node.test is not None and node.passed is not None and node.failed is not None
        variable, value = node.test
        return Test(variable, value, self._to_tree(node.passed), self._to_tree(node.failed))

    def labels(self) -> Dict[PartialState, Hashable]:
        return dict(self.root.examples)

    def audit(self) -> None:
        """모든 노드의 캐시 카운트를 라우팅된 예제로 다시 세어 비교"""
        stack = [self.root]
        while stack:
            node = stack.pop()
            labels: Counter = Counter(node.examples.values())
            tests: Dict[TestKey, Counter] = {}
            for key, label in node.examples.items():
                for test in key.items():
                    tests.setdefault(test, Counter())[label] += 1
            cached = {test: +counts for test, counts in node.test_counts.items() if +counts}
            if labels != +node.label_counts or tests != cached:
                logger.error(f"[Tree Audit] 캐시 카운트 불일치: {self}")
                raise AssertionError(f"노드 캐시 카운트가 재계산과 다릅니다: {self}")
            if not node.is_leaf:
                assert node.passed is not None and node.failed is not None
                routed = set(node.passed.examples) | set(node.failed.examples)
                if routed != set(node.examples):
                    raise AssertionError(f"자식 노드 예제가 부모와 다릅니다: {self}")
                stack.extend((node.passed, node.failed))
