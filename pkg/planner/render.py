from typing import Any, List, Mapping, Optional

from model_core.states import VariableDecl, VariableId
from model_core.trees import DecisionTree, DirichletLeaf, Distribution, Leaf


INDENT = "  "


def format_payload(payload: Any) -> str:
    if payload is None:
        return "-"
    if isinstance(payload, bool):
        return "true" if payload else "false"
    if isinstance(payload, float):
        return f"{payload:.6g}"
    if isinstance(payload, Distribution):
        return "(" + " ".join(f"{p:.6g}" for p in payload.probs) + ")"
    if isinstance(payload, DirichletLeaf):
        counts = " ".join(f"{n:g}" for n in payload.counts)
        alphas = " ".join(f"{a:.6g}" for a in payload.alphas)
        return f"N=({counts}) α=({alphas})"
    return str(payload)


def render_tree(
    tree: DecisionTree,
    declarations: Optional[Mapping[VariableId, VariableDecl]] = None,
    title: str = "",
) -> str:
    """들여쓰기 텍스트로 트리 출력 (형식은 docs/tree_dump.md)"""
    lines: List[str] = [title] if title else []
    _render(tree, declarations or {}, 0, "", lines)
    return "\n".join(lines) + "\n"


def _render(
    tree: DecisionTree,
    declarations: Mapping[VariableId, VariableDecl],
    depth: int,
    prefix: str,
    lines: List[str],
) -> None:
    pad = INDENT * depth
    if isinstance(tree, Leaf):
        lines.append(f"{pad}{prefix}{format_payload(tree.payload)}")
        return
    decl = declarations.get(tree.variable)
    label = decl.domain[tree.value] if decl is not None else str(tree.value)
    lines.append(f"{pad}{prefix}{tree.variable} = {label} ?")
    _render(tree.passed, declarations, depth + 1, "yes: ", lines)
    _render(tree.failed, declarations, depth + 1, "no: ", lines)
