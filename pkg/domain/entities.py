import itertools
import logging

from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Mapping, Set, Tuple

import numpy as np

from model_core.states import ActionDecl, ActionId, PartialState, VariableDecl, VariableId
from model_core.trees import DecisionTree, conjunction_tree, tree_eval, tree_variables


logger = logging.getLogger(__name__)

Predicate = Tuple[Tuple[VariableId, int], ...]


@dataclass
class TrueFmdp:
    """실제 factored MDP (환경과 전문가만 전체를 앎)"""

    variables: Dict[VariableId, VariableDecl]
    actions: Dict[ActionId, ActionDecl]
    cpds: Dict[ActionId, Dict[VariableId, DecisionTree]]
    reward: DecisionTree
    terminal: Predicate
    start: Predicate
    discount: float
    header: List[str] = field(default_factory=list)

    @property
    def variable_ids(self) -> List[VariableId]:
        """선언 순서"""
        return list(self.variables)

    @property
    def action_ids(self) -> List[ActionId]:
        return list(self.actions)

    @property
    def canonical_variables(self) -> List[VariableId]:
        return sorted(self.variables)

    @property
    def canonical_actions(self) -> List[ActionId]:
        return sorted(self.actions)

    def domain_size(self, variable: VariableId) -> int:
        return self.variables[variable].size

    def sizes(self) -> Dict[VariableId, int]:
        return {var: decl.size for var, decl in self.variables.items()}

    def state_count(self) -> int:
        return int(np.prod([decl.size for decl in self.variables.values()], dtype=np.int64))

    def reward_scope(self) -> Set[VariableId]:
        return tree_variables(self.reward)

    def reward_of(self, state: Mapping[VariableId, int]) -> float:
        return float(tree_eval(self.reward, state))

    def is_terminal(self, state: Mapping[VariableId, int]) -> bool:
        return all(state.get(var) == value for var, value in self.terminal)

    def is_start(self, state: Mapping[VariableId, int]) -> bool:
        if self.is_terminal(state):
            return False
        return all(state.get(var) == value for var, value in self.start)

    def terminal_tree(self) -> DecisionTree:
        return conjunction_tree(self.terminal, True, False)

    def iter_states(self) -> Iterator[PartialState]:
        """모든 완전 상태를 선언 순서의 사전식으로 나열"""
        ids = self.variable_ids
        ranges = [range(self.variables[var].size) for var in ids]
        for values in itertools.product(*ranges):
            yield PartialState(zip(ids, values))

    def start_states(self) -> List[PartialState]:
        return [state for state in self.iter_states() if self.is_start(state)]

    def describe_state(self, state: Mapping[VariableId, int]) -> str:
        parts = [
            f"{var}={self.variables[var].domain[state[var]]}"
            for var in self.variable_ids
            if var in state
        ]
        return "<" + ", ".join(parts) + ">"
