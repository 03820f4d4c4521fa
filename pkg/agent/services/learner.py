import logging

from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

from django.conf import settings

from agent.advice import AdviceStore, DefeasibleEntry, MonotonicFact
from domain.config import ExperimentConfig
from domain.entities import TrueFmdp
from expert.messages import BetterAction
from expert.services.oracle import ExpertOracle, ProtocolViolation
from induction.facts import OK, RewardFacts
from induction.services.cpd_tree import CpdTree
from induction.services.label_tree import LabelTree
from induction.services.repack import repack_action
from model_core.states import ActionId, Awareness, PartialState, VariableId, project
from model_core.trees import DecisionTree, Leaf, map_leaves, tree_variables
from planner.policy import policy_error_approx
from planner.services.regress import scalar_leaves
from planner.services.svi import ValueModel, greedy_action, greedy_policy, inc_svi
from simulator.episodes import EpisodeTracker
from simulator.services.environment import Environment
from structure.services.posterior import StructureLearner


logger = logging.getLogger(__name__)

Transition = Tuple[PartialState, PartialState]


class AwarenessError(ValueError):
    """이미 인지한 변수나 행동을 다시 발견함"""


@dataclass(frozen=True)
class Trial:
    """현재 인지로 투영한 전이 하나"""

    step: int
    state: PartialState
    action: ActionId
    next_state: PartialState
    reward: float
    terminal: bool


@dataclass(frozen=True)
class StepRecord:
    step: int
    episode: int
    reward: float
    terminal: bool
    cutoff: bool
    num_vars_aware: int
    num_actions_aware: int
    advice_count: int
    query_count: int
    err_approx: Optional[float]


class Learner:
    """인지하지 못한 변수와 행동이 있는 FMDP 학습자

    도메인 객체에서는 변수 값 개수와 할인율만 읽는다. 변수의 값 목록은 그 변수를
    처음 알게 될 때 함께 전달된다고 본다.
    """

    conservative = True

    def __init__(
        self,
        domain: TrueFmdp,
        config: ExperimentConfig,
        expert: Optional[ExpertOracle],
        rng: np.random.Generator,
        awareness: Optional[Awareness] = None,
    ) -> None:
        self.sizes = domain.sizes()
        self.discount = domain.discount
        self.config = config
        self.expert = expert
        self.rng = rng
        self.awareness = awareness if awareness is not None else config.initial_awareness(domain)
        self.epsilon = config.epsilon
        self.cutoff = config.episode_cutoff

        self.structure = StructureLearner(
            self.awareness.variables, self.sizes, config.rho, config.max_in_degree
        )
        self.cpd_trees: Dict[ActionId, Dict[VariableId, CpdTree]] = {}
        self.trials: Dict[ActionId, List[Transition]] = {}
        self.facts = RewardFacts(self.awareness.reward_scope)
        self.reward_tree = LabelTree("reward", self.awareness.reward_scope, self.sizes)
        self.terminals = LabelTree("terminal", self.awareness.variables, self.sizes)
        self.value = ValueModel()
        self.advice = AdviceStore()
        self.history: Dict[int, PartialState] = {}

        self.tracker = EpisodeTracker(self.discount)
        self.step = 0
        self.true_state: Optional[PartialState] = None
        self.discoveries: List[VariableId] = []
        for action in self.awareness.sorted_actions():
            self._init_action(action)

    def __repr__(self) -> str:
        return (
            f"{type(self).__name__}(X={self.awareness.sorted_variables()}, "
            f"A={self.awareness.sorted_actions()})"
        )

    # 모델 구성

    def _init_action(self, action: ActionId) -> None:
        self.structure.init_action(action)
        self.trials[action] = []
        self.cpd_trees[action] = {
            child: self._build_cpd_tree(action, child) for child in self.structure.variables
        }

    def _build_cpd_tree(self, action: ActionId, child: VariableId) -> CpdTree:
        posterior = self.structure.posteriors[action][child]
        index = posterior.map_index()
        _, alphas = posterior.table(index)
        examples = [(state, following[child]) for state, following in self.trials[action]]
        return CpdTree(
            action,
            child,
            posterior.candidates[index],
            self.sizes,
            posterior.child_size,
            alphas,
            examples,
            informed=posterior.informed,
        )

    def _rebuild_cpd_trees(self) -> None:
        for action in self.cpd_trees:
            self.cpd_trees[action] = {
                child: self._build_cpd_tree(action, child) for child in self.structure.variables
            }

    def _rebuild_reward_tree(self) -> None:
        """범위 변수를 모두 가진 보상 사실로 보상 트리를 다시 만든다"""
        scope = self.awareness.reward_scope
        tree = LabelTree("reward", scope, self.sizes)
        for fact in self.facts:
            if scope <= set(fact.observation):
                tree.insert(fact.observation, fact.reward)
        self.reward_tree = tree

    def action_models(self) -> Dict[ActionId, Dict[VariableId, DecisionTree]]:
        return {
            action: {child: tree.expected_tree() for child, tree in trees.items()}
            for action, trees in self.cpd_trees.items()
        }

    def learned_reward(self) -> DecisionTree:
        return scalar_leaves(self.reward_tree.restructure())

    def learned_terminal(self) -> DecisionTree:
        return map_leaves(self.terminals.restructure(), bool)

    def greedy_policy(self, state: PartialState) -> ActionId:
        key = project(state, self.awareness.variables)
        return greedy_action(self.value.q_trees, key, self.awareness.sorted_actions())

    def policy_tree(self) -> Optional[DecisionTree]:
        """조언 해석을 뺀 탐욕 정책 트리"""
        # Q 트리가 없는 행동은 0 (greedy_action 과 같은 규칙)
        q_trees: Dict[ActionId, DecisionTree] = {
            action: self.value.q_trees.get(action, Leaf(0.0))
            for action in self.awareness.actions
        }
        return greedy_policy(q_trees)

    # 알고리즘 단계

    def select_action(self, state: PartialState) -> ActionId:
        """ε 확률로 균등 탐험, 그 외에는 조언 해석을 우선하고 없으면 Q 최대 행동"""
        actions = self.awareness.sorted_actions()
        if not actions:
            raise AwarenessError("인지한 행동이 없습니다.")
        if self.rng.random() < self.epsilon:
            return actions[int(self.rng.integers(len(actions)))]
        entry = self.advice.lookup(state)
        if entry is not None:
            return entry.action
        return greedy_action(self.value.q_trees, state, actions)

    def integrate_trial(self, trial: Trial) -> None:
        action = trial.action
        self.structure.update(action, trial.state, trial.next_state)
        self.trials[action].append((trial.state, trial.next_state))
        for child, posterior in self.structure.posteriors[action].items():
            tree = self.cpd_trees[action][child]
            if posterior.map_parents() != tree.parents:
                logger.debug(
                    f"[Agent] {action}/{child} 부모 집합 변경: {tree.parents} -> "
                    f"{posterior.map_parents()}"
                )
                self.cpd_trees[action][child] = self._build_cpd_tree(action, child)
            else:
                tree.insert(trial.state, trial.next_state[child])
                tree.restructure()
        self.terminals.insert(trial.next_state, trial.terminal)
        self.observe_reward(trial.step, trial.next_state, trial.reward)

    def observe_reward(self, step: int, observation: PartialState, reward: float) -> None:
        """보상 사실 추가, 불일치하면 보상 범위 질의 후 현재 상태를 다시 관측"""
        update = self.facts.update(observation, reward, step)
        stored = update.status == OK
        while update.inconsistent:
            if self.expert is None:
                self.facts.replace(observation, reward, step)
                stored = True
                break
            try:
                answer = self.expert.answer_reward_scope(self.awareness.reward_scope)
            except ProtocolViolation as e:
                logger.warning(f"[Agent] 보상 범위 질의 실패, 최신 사실로 교체: {e}")
                self.facts.replace(observation, reward, step)
                stored = True
                break
            variable = answer.variable
            if variable not in self.awareness.variables:
                self.adapt_on_new_variable(variable)
            self.awareness.add_reward_scope(variable)
            logger.info(f"[Agent] 보상 범위 확장: {sorted(self.awareness.reward_scope)}")
            self.facts.rescope(self.awareness.reward_scope)
            self._rebuild_reward_tree()
            if self.true_state is not None:
                observation = project(self.true_state, self.awareness.variables)
            update = self.facts.update(observation, reward, step)
            stored = update.status == OK
        if stored and self.awareness.reward_scope <= set(observation):
            self.reward_tree.insert(observation, reward)

    def handle_advice(self, advice: BetterAction) -> None:
        self.advice.record(MonotonicFact(advice.step, advice.better, advice.worse))
        if advice.better not in self.awareness.actions:
            self.awareness.add_action(advice.better)
            self._init_action(advice.better)
        observation = self.history[advice.step]
        key = project(observation, self.awareness.variables)
        entry = DefeasibleEntry(key, advice.better, advice.step, observation)
        conflict = self.advice.add(entry)
        if conflict is None or self.expert is None:
            return
        answer = self.expert.answer_distinct_variable(conflict.step, advice.step)
        self.advice.drop(conflict)
        if answer.variable not in self.awareness.variables:
            self.adapt_on_new_variable(answer.variable)
        else:
            logger.info(f"[Agent] 구별 변수 {answer.variable}는 이미 인지한 변수입니다.")
            self.advice.rekey(self.awareness.variables)

    def adapt_on_new_variable(self, variable: VariableId) -> None:
        """새 변수 발견 시 구조 사전확률 재구성과 α 재포장 (가치 트리는 유지)"""
        if variable in self.awareness.variables:
            raise AwarenessError(f"이미 인지한 변수입니다: {variable}")
        old_variables = self.structure.variables
        expected = self.action_models()
        self.awareness.add_variable(variable)
        self.discoveries.append(variable)
        self.structure.rebuild_on_new_variable(variable)
        if self.conservative:
            for action, posteriors in self.structure.posteriors.items():
                states = [state for state, _ in self.trials[action]]
                repack_action(
                    posteriors,
                    expected[action],
                    states,
                    old_variables,
                    variable,
                    self.config.alpha_mass,
                )
        else:
            self.structure.reset()
            self.value = ValueModel()
        for action in self.trials:
            self.trials[action] = []
        self._rebuild_cpd_trees()
        self.terminals.set_variables(self.awareness.variables)
        self._rebuild_reward_tree()
        self.advice.rekey(self.awareness.variables)
        logger.info(
            f"[Agent] 변수 {variable} 발견 후 모델 조정 완료 "
            f"(인지 변수 {len(self.awareness.variables)}개)"
        )

    def backup(self) -> None:
        self.value = inc_svi(
            self.value,
            self.learned_reward(),
            self.action_models(),
            self.discount,
            self.learned_terminal(),
        )

    def run_step(self, env: Environment) -> StepRecord:
        if not self.tracker.active:
            self._begin_episode(env)
        assert self.true_state is not None
        self.step += 1
        step = self.step
        state = project(self.true_state, self.awareness.variables)
        self.history[step] = state
        action = self.select_action(state)
        advice = self._monitor(step, self.true_state, action)

        next_true, reward, terminal = env.step(action)
        self.tracker.record(reward)
        self.true_state = next_true
        next_state = project(next_true, self.awareness.variables)
        self.integrate_trial(Trial(step, state, action, next_state, reward, terminal))
        if advice is not None:
            self.handle_advice(advice)

        cutoff = not terminal and self.tracker.steps >= self.cutoff
        episode = self.tracker.index
        if terminal or cutoff:
            self.tracker.finish(cutoff=cutoff)
            if cutoff:
                logger.warning(f"[Agent] 에피소드 {episode}가 {self.cutoff}단계에서 잘렸습니다.")
        self.backup()
        if settings.FMDP_AUDIT:
            self.audit()
        return self._record(step, episode, reward, terminal, cutoff)

    def _begin_episode(self, env: Environment) -> None:
        self.true_state = env.reset()
        reward = env.domain.reward_of(self.true_state)
        self.tracker.begin(reward)
        self.observe_reward(self.step, project(self.true_state, self.awareness.variables), reward)

    def _monitor(self, step: int, state: PartialState, action: ActionId) -> Optional[BetterAction]:
        if self.expert is None:
            return None
        return self.expert.monitor(
            step, self.tracker.index, self.tracker.steps, state, action, self.tracker
        )

    def _record(
        self, step: int, episode: int, reward: float, terminal: bool, cutoff: bool
    ) -> StepRecord:
        err: Optional[float] = None
        if self.expert is not None and self.tracker.returns:
            window = self.tracker.returns[-self.config.err_window :]
            err = policy_error_approx(window, self.expert.start_value)
        return StepRecord(
            step=step,
            episode=episode,
            reward=reward,
            terminal=terminal,
            cutoff=cutoff,
            num_vars_aware=len(self.awareness.variables),
            num_actions_aware=len(self.awareness.actions),
            advice_count=self.expert.advice_count if self.expert else 0,
            query_count=self.expert.query_count if self.expert else 0,
            err_approx=err,
        )

    def audit(self) -> None:
        """모든 모델 구성 요소가 인지한 변수와 행동만 참조하는지 확인"""
        known = self.awareness.variables
        trees: List[DecisionTree] = [self.value.value, *self.value.q_trees.values()]
        trees.append(self.reward_tree.tree())
        trees.append(self.terminals.tree())
        for action, children in self.cpd_trees.items():
            if action not in self.awareness.actions:
                raise AssertionError(f"인지하지 않은 행동의 모델: {action}")
            for child, cpd in children.items():
                if child not in known or not set(cpd.parents) <= known:
                    raise AssertionError(f"인지하지 않은 변수를 참조하는 CPD: {cpd}")
                trees.append(cpd.tree)
        for tree in trees:
            unknown = tree_variables(tree) - known
            if unknown:
                raise AssertionError(f"인지하지 않은 변수를 참조하는 트리: {sorted(unknown)}")
        if not set(self.value.q_trees) <= self.awareness.actions:
            raise AssertionError("인지하지 않은 행동의 Q 트리가 있습니다.")
