import logging

from dataclasses import dataclass, field
from typing import (
    AbstractSet,
    Dict,
    Iterable,
    Iterator,
    List,
    Mapping,
    Optional,
    Set,
    Tuple,
)


logger = logging.getLogger(__name__)

VariableId = str
ActionId = str


@dataclass(frozen=True)
class VariableDecl:
    """상태 변수 선언 (도메인 값 레이블은 순서 유지)"""

    id: VariableId
    name: str
    domain: Tuple[str, ...]

    def __post_init__(self) -> None:
        if len(self.domain) < 2:
            raise ValueError(f"변수 {self.id}의 도메인 크기는 2 이상이어야 합니다.")
        if len(set(self.domain)) != len(self.domain):
            raise ValueError(f"변수 {self.id}의 도메인 값이 중복됩니다: {self.domain}")

    @property
    def size(self) -> int:
        return len(self.domain)

    def index_of(self, label: str) -> int:
        try:
            return self.domain.index(label)
        except ValueError:
            raise ValueError(f"변수 {self.id}에 값 {label}이(가) 없습니다.")


@dataclass(frozen=True)
class ActionDecl:
    id: ActionId
    name: str


class PartialState(Mapping[VariableId, int]):
    """변수 부분집합 위의 값 할당 (불변, 해시 가능)"""

    __slots__ = ("_values", "_hash")

    def __init__(
        self,
        values: Mapping[VariableId, int] | Iterable[Tuple[VariableId, int]] = (),
    ) -> None:
        self._values: Dict[VariableId, int] = dict(values)
        self._hash: Optional[int] = None

    def __getitem__(self, variable: VariableId) -> int:
        return self._values[variable]

    def __iter__(self) -> Iterator[VariableId]:
        return iter(sorted(self._values))

    def __len__(self) -> int:
        return len(self._values)

    def __contains__(self, variable: object) -> bool:
        return variable in self._values

    def __hash__(self) -> int:
        if self._hash is None:
            self._hash = hash(frozenset(self._values.items()))
        return self._hash

    def __eq__(self, other: object) -> bool:
        if isinstance(other, PartialState):
            return self._values == other._values
        if isinstance(other, Mapping):
            return self._values == dict(other)
        return NotImplemented

    def __repr__(self) -> str:
        body = ", ".join(f"{var}={self._values[var]}" for var in self)
        return f"<{body}>"

    def project(self, variables: AbstractSet[VariableId]) -> "PartialState":
        return PartialState(
            (var, value) for var, value in self._values.items() if var in variables
        )

    def assign(self, variable: VariableId, value: int) -> "PartialState":
        values = dict(self._values)
        values[variable] = value
        return PartialState(values)

    def satisfies(self, conditions: Mapping[VariableId, int]) -> bool:
        return all(self._values.get(var) == value for var, value in conditions.items())

    def validate(self, declarations: Mapping[VariableId, VariableDecl]) -> None:
        for var, value in self._values.items():
            decl = declarations.get(var)
            if decl is None:
                raise ValueError(f"선언되지 않은 변수입니다: {var}")
            if not 0 <= value < decl.size:
                raise ValueError(f"변수 {var}의 값 인덱스 {value}가 범위를 벗어났습니다.")

    def key(self) -> Tuple[Tuple[VariableId, int], ...]:
        return tuple((var, self._values[var]) for var in self)


def project(state: Mapping[VariableId, int], variables: AbstractSet[VariableId]) -> PartialState:
    if isinstance(state, PartialState):
        return state.project(variables)
    return PartialState((var, value) for var, value in state.items() if var in variables)


@dataclass
class Awareness:
    """학습자가 인지한 변수, 행동, 보상 범위"""

    variables: Set[VariableId] = field(default_factory=set)
    actions: Set[ActionId] = field(default_factory=set)
    reward_scope: Set[VariableId] = field(default_factory=set)

    def __post_init__(self) -> None:
        self.variables = set(self.variables)
        self.actions = set(self.actions)
        self.reward_scope = set(self.reward_scope)
        if not self.reward_scope <= self.variables:
            raise ValueError(
                f"보상 범위 {sorted(self.reward_scope - self.variables)}가 인지 변수에 없습니다."
            )

    def sorted_variables(self) -> List[VariableId]:
        return sorted(self.variables)

    def sorted_actions(self) -> List[ActionId]:
        return sorted(self.actions)

    def add_variable(self, variable: VariableId) -> bool:
        if variable in self.variables:
            return False
        self.variables.add(variable)
        logger.info(f"[Awareness] 변수 추가: {variable} (총 {len(self.variables)}개)")
        return True

    def add_action(self, action: ActionId) -> bool:
        if action in self.actions:
            return False
        self.actions.add(action)
        logger.info(f"[Awareness] 행동 추가: {action} (총 {len(self.actions)}개)")
        return True

    def add_reward_scope(self, variable: VariableId) -> bool:
        added = self.add_variable(variable)
        if variable in self.reward_scope:
            return added
        self.reward_scope.add(variable)
        return True

    def resolve(
        self,
        variables: AbstractSet[VariableId],
        actions: AbstractSet[ActionId],
    ) -> None:
        unknown = (self.variables - variables) | (self.actions - actions)
        if unknown:
            raise ValueError(f"실제 문제에 없는 식별자입니다: {sorted(unknown)}")

    def copy(self) -> "Awareness":
        return Awareness(set(self.variables), set(self.actions), set(self.reward_scope))
