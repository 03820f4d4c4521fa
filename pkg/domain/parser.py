"""Factored MDP 도메인 파일 파서/직렬화기

문법은 docs/domain_format.md 참고.
"""

import logging
import math

from functools import partial
from pathlib import Path
from typing import Any, Callable, Dict, List, Sequence, Tuple

import pyparsing as pp

from domain.entities import Predicate, TrueFmdp
from domain.exceptions import DomainSemanticError, DomainSyntaxError
from model_core.states import ActionDecl, ActionId, VariableDecl, VariableId
from model_core.trees import (
    DecisionTree,
    Distribution,
    Leaf,
    Test,
    is_path_consistent,
    tree_reduce,
)


logger = logging.getLogger(__name__)

DATA_DIR = Path(__file__).resolve().parent / "data"
NORMALIZATION_TOLERANCE = 1e-6

LPAR, RPAR = map(pp.Suppress, "()")
ATOM = pp.Regex(r"[^\s();]+")
SEXP = pp.Forward()
SEXP <<= pp.Group(LPAR + pp.ZeroOrMore(ATOM | SEXP) + RPAR)

KEYWORDS = (
    "variables",
    "action",
    "endaction",
    "same",
    "dist",
    "reward",
    "terminal",
    "start",
    "discount",
)
VARIABLES = pp.Group(LPAR + pp.Suppress(pp.Keyword("variables")) + pp.ZeroOrMore(SEXP) + RPAR)
CPD_LINE = pp.Group(~pp.Keyword("endaction") + ATOM + (pp.Keyword("same") | SEXP))
ACTION = pp.Group(
    pp.Suppress(pp.Keyword("action"))
    + ATOM
    + pp.Group(pp.ZeroOrMore(CPD_LINE))
    + pp.Suppress(pp.Keyword("endaction"))
)
DOMAIN = (
    VARIABLES("variables")
    + pp.Group(pp.OneOrMore(ACTION))("actions")
    + pp.Suppress(pp.Keyword("reward"))
    + (SEXP | ATOM)("reward")
    + pp.Suppress(pp.Keyword("terminal"))
    + pp.Group(pp.OneOrMore(SEXP))("terminal")
    + pp.Suppress(pp.Keyword("start"))
    + pp.Group(pp.ZeroOrMore(SEXP))("start")
    + pp.Suppress(pp.Keyword("discount"))
    + ATOM("discount")
    + pp.StringEnd()
)
DOMAIN.ignore(";" + pp.rest_of_line)


def parse_domain(text: str) -> TrueFmdp:
    """도메인 텍스트를 검증된 TrueFmdp로 변환"""
    try:
        parsed = DOMAIN.parse_string(text, parse_all=True)
    except pp.ParseBaseException as e:
        raise DomainSyntaxError(f"도메인 구문 오류: {e.msg}", e.lineno, e.col)

    variables = _read_variables(parsed["variables"].as_list())
    actions: Dict[ActionId, ActionDecl] = {}
    cpds: Dict[ActionId, Dict[VariableId, DecisionTree]] = {}
    for block in parsed["actions"]:
        name = str(block[0])
        if name in actions:
            raise DomainSemanticError("중복된 행동", name)
        actions[name] = ActionDecl(name, name)
        cpds[name] = _read_action(name, block[1].as_list(), variables)

    reward_tree = _build_tree(
        _reward_node(parsed["reward"]),
        variables,
        _reward_leaf,
        "reward",
    )
    terminal = _read_predicate(parsed["terminal"].as_list(), variables, "terminal")
    start_raw = parsed.get("start")
    start_pairs = start_raw.as_list() if start_raw is not None else []
    start = _read_predicate(start_pairs, variables, "start")
    discount = _number(parsed["discount"], "discount")
    if not 0.0 <= discount <= 1.0:
        raise DomainSemanticError("할인율은 [0, 1] 범위여야 합니다", str(discount))

    header = [
        line.lstrip(";").strip() for line in text.splitlines() if line.startswith(";")
    ]
    domain = TrueFmdp(
        variables=variables,
        actions=actions,
        cpds=cpds,
        reward=reward_tree,
        terminal=terminal,
        start=start,
        discount=discount,
        header=header,
    )
    logger.info(
        f"[Domain] 변수 {len(variables)}개, 행동 {len(actions)}개, 할인율 {discount} 로드"
    )
    return domain


def parse_domain_file(path: str | Path) -> TrueFmdp:
    return parse_domain(Path(path).read_text(encoding="utf-8"))


def resolve_domain_path(name: str, base_dir: Path | None = None) -> Path:
    """경로 또는 내장 도메인 이름(coffee, factory)을 파일 경로로 변환"""
    candidate = Path(name)
    if not candidate.is_absolute() and base_dir is not None:
        relative = base_dir / candidate
        if relative.exists():
            return relative
    if candidate.exists():
        return candidate
    bundled = DATA_DIR / f"{candidate.stem}.sfmdp"
    if bundled.exists():
        return bundled
    raise DomainSemanticError("도메인 파일을 찾을 수 없습니다", name)


def _read_variables(items: List[Any]) -> Dict[VariableId, VariableDecl]:
    variables: Dict[VariableId, VariableDecl] = {}
    for item in items:
        if not item or any(isinstance(token, list) for token in item):
            raise DomainSemanticError("잘못된 변수 선언", str(item))
        name, *labels = item
        if name in KEYWORDS:
            raise DomainSemanticError("예약어는 변수 이름으로 쓸 수 없습니다", name)
        if name in variables:
            raise DomainSemanticError("중복된 변수", name)
        try:
            variables[name] = VariableDecl(name, name, tuple(labels))
        except ValueError as e:
            raise DomainSemanticError(str(e), name)
    if not variables:
        raise DomainSemanticError("선언된 변수가 없습니다")
    return variables


def _read_action(
    action: ActionId,
    lines: List[Any],
    variables: Dict[VariableId, VariableDecl],
) -> Dict[VariableId, DecisionTree]:
    trees: Dict[VariableId, DecisionTree] = {}
    for variable, body in lines:
        where = f"{action}/{variable}"
        if variable not in variables:
            raise DomainSemanticError("선언되지 않은 변수", where)
        if variable in trees:
            raise DomainSemanticError("중복된 CPD", where)
        if body == "same":
            trees[variable] = _identity_cpd(variables[variable])
            continue
        size = variables[variable].size
        trees[variable] = _build_tree(
            body, variables, partial(_distribution_leaf, size=size), where
        )
    missing = [var for var in variables if var not in trees]
    if missing:
        raise DomainSemanticError("CPD가 없는 변수", f"{action}/{missing[0]}")
    return trees


def _identity_cpd(decl: VariableDecl) -> DecisionTree:
    tree: DecisionTree = Leaf(Distribution.point(decl.size - 1, decl.size))
    for index in reversed(range(decl.size - 1)):
        tree = Test(decl.id, index, Leaf(Distribution.point(index, decl.size)), tree)
    return tree


def _build_tree(
    node: List[Any],
    variables: Dict[VariableId, VariableDecl],
    make_leaf: Callable[[List[Any], str], Any],
    where: str,
) -> DecisionTree:
    tree = _convert(node, variables, make_leaf, where)
    if not is_path_consistent(tree):
        tree = tree_reduce(tree)
    return tree


def _convert(
    node: List[Any],
    variables: Dict[VariableId, VariableDecl],
    make_leaf: Callable[[List[Any], str], Any],
    where: str,
) -> DecisionTree:
    if isinstance(node, str):
        node = [node]
    if not node:
        raise DomainSemanticError("빈 트리 노드", where)
    head = node[0]
    if isinstance(head, list):
        raise DomainSemanticError("잘못된 트리 노드", where)
    if head not in variables:
        if len(node) > 1 and all(isinstance(branch, list) for branch in node[1:]):
            raise DomainSemanticError("선언되지 않은 변수", f"{where} {head}")
        return Leaf(make_leaf(node, where))
    decl = variables[head]
    branches: Dict[int, DecisionTree] = {}
    for branch in node[1:]:
        if not isinstance(branch, list) or len(branch) != 2 or isinstance(branch[0], list):
            raise DomainSemanticError("잘못된 분기", f"{where} {head} {branch}")
        label, subtree = branch
        if label not in decl.domain:
            raise DomainSemanticError("도메인에 없는 값", f"{where} {head}={label}")
        index = decl.index_of(label)
        if index in branches:
            raise DomainSemanticError("중복된 분기 값", f"{where} {head}={label}")
        branches[index] = _convert(subtree, variables, make_leaf, f"{where} {head}={label}")
    if len(branches) != decl.size:
        missing = [decl.domain[i] for i in range(decl.size) if i not in branches]
        raise DomainSemanticError("분기가 도메인 전체를 덮지 않습니다", f"{where} {head}={missing[0]}")
    tree = branches[decl.size - 1]
    for index in reversed(range(decl.size - 1)):
        tree = Test(head, index, branches[index], tree)
    return tree


def _reward_node(raw: Any) -> List[Any]:
    """이름 붙은 대안 결과의 바깥 한 겹을 벗긴다 (`reward 0.5` 같은 단일 원자도 허용)"""
    node = raw.as_list() if isinstance(raw, pp.ParseResults) else [raw]
    if len(node) == 1 and isinstance(node[0], list):
        node = node[0]
    return node


def _number(token: Any, where: str) -> float:
    try:
        value = float(token)
    except (TypeError, ValueError):
        raise DomainSemanticError("숫자가 아닙니다", f"{where} {token}")
    if not math.isfinite(value):
        raise DomainSemanticError("유한한 숫자가 아닙니다", f"{where} {token}")
    return value


def _reward_leaf(leaf: List[Any], where: str) -> float:
    if len(leaf) != 1:
        raise DomainSemanticError("보상 리프는 숫자 하나여야 합니다", f"{where} {leaf}")
    return _number(leaf[0], where)


def _distribution_leaf(leaf: List[Any], where: str, size: int) -> Distribution:
    if leaf[0] != "dist":
        raise DomainSemanticError("알 수 없는 기호", f"{where} {leaf[0]}")
    text = "(dist " + " ".join(str(p) for p in leaf[1:]) + ")"
    probs = [_number(p, where) for p in leaf[1:]]
    if len(probs) != size:
        raise DomainSemanticError(f"분포 길이가 도메인 크기 {size}와 다릅니다", f"{where} {text}")
    if any(p < 0.0 for p in probs):
        raise DomainSemanticError("음수 확률", f"{where} {text}")
    if abs(sum(probs) - 1.0) > NORMALIZATION_TOLERANCE:
        raise DomainSemanticError("정규화되지 않은 분포", f"{where} {text}")
    return Distribution.normalized(probs)


def _read_predicate(
    pairs: List[Any], variables: Dict[VariableId, VariableDecl], where: str
) -> Predicate:
    result: List[Tuple[VariableId, int]] = []
    for pair in pairs:
        if len(pair) != 2 or any(isinstance(token, list) for token in pair):
            raise DomainSemanticError("잘못된 조건", f"{where} {pair}")
        variable, label = pair
        if variable not in variables:
            raise DomainSemanticError("선언되지 않은 변수", f"{where} {variable}")
        if label not in variables[variable].domain:
            raise DomainSemanticError("도메인에 없는 값", f"{where} {variable}={label}")
        result.append((variable, variables[variable].index_of(label)))
    return tuple(result)


def serialize_domain(domain: TrueFmdp) -> str:
    """TrueFmdp를 다시 파싱 가능한 텍스트로 직렬화"""
    lines = [f"; {line}" for line in domain.header]
    decls = " ".join(
        "(" + " ".join((var, *decl.domain)) + ")" for var, decl in domain.variables.items()
    )
    lines.append(f"(variables {decls})")
    for action in domain.action_ids:
        lines.append(f"action {action}")
        for var in domain.variable_ids:
            lines.append(f"  {var} {_serialize_tree(domain.cpds[action][var], domain)}")
        lines.append("endaction")
    lines.append(f"reward {_serialize_tree(domain.reward, domain)}")
    lines.append(f"terminal {_serialize_predicate(domain.terminal, domain)}")
    lines.append(f"start {_serialize_predicate(domain.start, domain)}".rstrip())
    lines.append(f"discount {domain.discount!r}")
    return "\n".join(lines) + "\n"


def _serialize_tree(tree: DecisionTree, domain: TrueFmdp) -> str:
    if isinstance(tree, Leaf):
        if isinstance(tree.payload, Distribution):
            return "(dist " + " ".join(repr(p) for p in tree.payload.probs) + ")"
        return f"({float(tree.payload)!r})"
    decl = domain.variables[tree.variable]
    passed = _serialize_tree(tree.passed, domain)
    failed = _serialize_tree(tree.failed, domain)
    # 이진 테스트는 실패 가지를 나머지 값마다 복제한 다중 분기로 기록
    branches: Sequence[str] = [
        f"({label} {passed if index == tree.value else failed})"
        for index, label in enumerate(decl.domain)
    ]
    return f"({tree.variable} " + " ".join(branches) + ")"


def _serialize_predicate(predicate: Predicate, domain: TrueFmdp) -> str:
    return " ".join(
        f"({var} {domain.variables[var].domain[value]})" for var, value in predicate
    )
