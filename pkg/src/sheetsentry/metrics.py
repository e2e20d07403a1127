"""Quantitative workbook measures.

The headline number is the chance that a workbook contains at least one
formula error: with an error rate ``p`` per unique formula and ``n``
unique formulas, that chance is ``1 - (1 - p)**n``. The rate applies to
unique formulas rather than formula cells because a copied formula is
written (and reviewed) once. Also computed here: conditional branch
counts, an abstract recalculation cost model, and quality ratios for
embedded script modules.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .errors import DomainError
from .evaluate import parse_all_formulas
from .formula import Binary, Call, FormulaAst, Range, Unary, walk
from .graph import build_graph
from .normalize import copy_classes
from .workbook import CellAddress, ScriptModule, Workbook
from .workbook import formula_cells as count_formula_cells

DEFAULT_ERROR_RATE = 0.01


@dataclass(frozen=True, slots=True)
class ErrorModel:
    """Per-unique-formula error rate plus the workbook's unique count."""

    p: float = DEFAULT_ERROR_RATE
    n: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.p <= 1.0:
            raise DomainError(f"error rate must lie in [0, 1], got {self.p}")
        if self.n < 0:
            raise DomainError(f"unique-formula count must be >= 0, got {self.n}")

    @property
    def probability(self) -> float:
        return error_probability(self.p, self.n)


def error_probability(p: float, n: int) -> float:
    """Probability that at least one of ``n`` unique formulas is wrong."""
    if not isinstance(n, int) or isinstance(n, bool) or n < 0:
        raise DomainError(f"n must be a nonnegative integer, got {n!r}")
    if not 0.0 <= p <= 1.0:
        raise DomainError(f"p must lie in [0, 1], got {p!r}")
    return 1.0 - (1.0 - p) ** n


@dataclass(frozen=True, slots=True)
class WorkbookMetrics:
    formula_cells: int
    unique_formulae: int
    error_probability: float
    max_branching: int
    external_link_count: int
    script_lines_total: int
    cost_estimate: int

    @property
    def error_probability_pct(self) -> int:
        return round(100.0 * self.error_probability)


@dataclass(frozen=True, slots=True)
class ScriptMetrics:
    """Line counts and documentation/indentation ratios for one module."""

    name: str
    lines: int
    comment_ratio: float
    indent_ratio: float


def branch_count(ast: FormulaAst) -> int:
    """Leaf count of a formula's IF-decision tree; 0 when it has no IF.

    Every IF call adds one leaf outcome over the single unconditional
    path, so a formula with k IF calls reports k + 1 branches.
    """
    ifs = sum(1 for node in walk(ast) if isinstance(node, Call) and node.name == "IF")
    return ifs + 1 if ifs else 0


# Cost model: recalculating a cell costs 1 plus its formula's node costs.
# Aggregates charge the size of each range argument, lookups charge the
# table's row count (a linear scan), other calls charge 1 plus their
# argument count, and every operator application charges 1.
_AGGREGATES = ("SUM", "COUNT", "AVERAGE", "MIN", "MAX")


def _range_cells(rng) -> int:
    return (rng.end.col - rng.start.col + 1) * (rng.end.row - rng.start.row + 1)


def _range_rows(rng) -> int:
    return rng.end.row - rng.start.row + 1


def _node_cost(node: FormulaAst) -> int:
    if isinstance(node, Unary):
        return 1 + _node_cost(node.operand)
    if isinstance(node, Binary):
        return 1 + _node_cost(node.left) + _node_cost(node.right)
    if isinstance(node, Call):
        if node.name in _AGGREGATES:
            total = 0
            for arg in node.args:
                if isinstance(arg, Range):
                    total += _range_cells(arg.ref)
                else:
                    total += 1 + _node_cost(arg)
            return total
        if node.name == "VLOOKUP":
            total = 0
            for i, arg in enumerate(node.args):
                if i == 1 and isinstance(arg, Range):
                    total += _range_rows(arg.ref)
                elif isinstance(arg, Range):
                    total += _range_cells(arg.ref)
                else:
                    total += _node_cost(arg)
            return max(total, 1)
        return 1 + len(node.args) + sum(_node_cost(a) for a in node.args)
    return 0


def formula_cost(ast: FormulaAst) -> int:
    """Modeled recalculation cost of one formula cell (always >= 1)."""
    return 1 + _node_cost(ast)


def cell_costs(
    wb: Workbook, asts: dict[CellAddress, FormulaAst] | None = None
) -> dict[CellAddress, int]:
    """Per-cell recalculation cost for every formula cell."""
    if asts is None:
        asts = parse_all_formulas(wb)
    return {addr: formula_cost(ast) for addr, ast in asts.items()}


def recalc_cost(
    wb: Workbook,
    k: int = 10,
    asts: dict[CellAddress, FormulaAst] | None = None,
) -> tuple[int, list[tuple[CellAddress, int]]]:
    """Total modeled recalculation cost and the top-k most expensive cells.

    The top list is sorted by descending cost; ties break by address order.
    """
    costs = cell_costs(wb, asts)
    total = sum(costs.values())
    ranked = sorted(
        costs.items(), key=lambda kv: (-kv[1],) + wb.address_sort_key(kv[0])
    )
    return total, ranked[:k]


_COMMENT_RE = re.compile(r"\s*(?:'|rem\b)", re.IGNORECASE)
_OPENER_RE = re.compile(
    r"\s*(?:sub|function|property|if\b.*\bthen\s*$|for|do|while|select|with)\b",
    re.IGNORECASE,
)
_CLOSER_RE = re.compile(
    r"\s*(?:end\s+(?:sub|function|property|if|select|with)|next\b|loop\b|wend\b)",
    re.IGNORECASE,
)
_NEUTRAL_RE = re.compile(r"\s*(?:else\b|elseif\b|case\b)", re.IGNORECASE)


def _module_metrics(module: ScriptModule) -> ScriptMetrics:
    lines = module.source.splitlines()
    nonblank = 0
    comments = 0
    body_lines = 0
    indented = 0
    depth = 0
    for line in lines:
        stripped = line.strip()
        if not stripped:
            continue
        nonblank += 1
        if _COMMENT_RE.match(line):
            comments += 1
        closes = _CLOSER_RE.match(line) is not None
        neutral = _NEUTRAL_RE.match(line) is not None
        if closes:
            depth = max(depth - 1, 0)
        effective_depth = depth - 1 if neutral else depth
        if not closes and effective_depth > 0:
            body_lines += 1
            if line[:1] in (" ", "\t"):
                indented += 1
        if not closes and not _COMMENT_RE.match(line) and _OPENER_RE.match(line):
            depth += 1
    comment_ratio = comments / nonblank if nonblank else 1.0
    indent_ratio = indented / body_lines if body_lines else 1.0
    return ScriptMetrics(
        name=module.name,
        lines=len(lines),
        comment_ratio=comment_ratio,
        indent_ratio=indent_ratio,
    )


def script_metrics(scripts: list[ScriptModule]) -> list[ScriptMetrics]:
    """Per-module line counts and quality ratios.

    A comment line starts with optional whitespace then ``'`` or ``REM``.
    Indentation is measured on lines inside block constructs (Sub,
    Function, Property, multiline If, For, Do, While, Select, With and
    their matching closers; see ``docs/rules.md`` for the keyword list).
    Empty modules report both ratios as 1.0.
    """
    return [_module_metrics(module) for module in scripts]


def compute_metrics(
    wb: Workbook,
    p: float = DEFAULT_ERROR_RATE,
    asts: dict[CellAddress, FormulaAst] | None = None,
    classes=None,
    graph=None,
) -> WorkbookMetrics:
    """All workbook metrics in one pass.

    ``asts``, ``classes`` and ``graph`` may be supplied to reuse work the
    audit pipeline has already done; they must come from the same workbook.
    """
    if asts is None:
        asts = parse_all_formulas(wb)
    if classes is None:
        classes = copy_classes(wb, asts)
    if graph is None:
        graph = build_graph(wb, asts)
    n = len(classes)
    max_branching = 0
    for ast in asts.values():
        branches = branch_count(ast)
        if branches > max_branching:
            max_branching = branches
    total_cost, _ = recalc_cost(wb, k=0, asts=asts)
    scripts = script_metrics(wb.scripts)
    return WorkbookMetrics(
        formula_cells=count_formula_cells(wb),
        unique_formulae=n,
        error_probability=error_probability(p, n),
        max_branching=max_branching,
        external_link_count=len(graph.external_links),
        script_lines_total=sum(s.lines for s in scripts),
        cost_estimate=total_cost,
    )
