"""Recomputation engine and stale-value detection.

Recomputes every formula cell from the workbook's literal inputs in
topological order and compares the results against the values cached in
the file. A cached value that disagrees with its recomputed value means
the file was saved in an inconsistent state (edited inputs with manual
recalculation off, overwritten results, and similar hazards).

Semantics follow mainstream spreadsheet behavior: blanks act as zero in
arithmetic, comparisons order mixed types as number < text < boolean,
text comparison is case-insensitive, errors propagate through operators,
and cells on a reference cycle evaluate to ``#CIRC!``. References into
other workbooks cannot be resolved from a single file and evaluate to
``#REF!``; cells whose recomputed value is that ``#REF!`` are excluded
from staleness entries and reported separately.
"""

from __future__ import annotations

import heapq
import math
from bisect import bisect_left, bisect_right
from dataclasses import dataclass

from .errors import ParseError, UnknownNodeError
from .formula import (
    Binary,
    BoolLit,
    Call,
    FormulaAst,
    NumberLit,
    Range,
    RangeRef,
    Ref,
    Reference,
    TextLit,
    Unary,
    parse_formula,
)
from .graph import DepGraph, build_graph
from .workbook import (
    BLANK,
    CellAddress,
    CellValue,
    ValueKind,
    Workbook,
    format_number,
)

NUMERIC_TOLERANCE = 1e-9

_DIV0 = CellValue.error("#DIV/0!")
_REF_ERR = CellValue.error("#REF!")
_VALUE_ERR = CellValue.error("#VALUE!")
_NA = CellValue.error("#N/A")
_NAME_ERR = CellValue.error("#NAME?")
_CIRC = CellValue.error("#CIRC!")

_TRUE = CellValue.boolean(True)
_FALSE = CellValue.boolean(False)


def parse_all_formulas(wb: Workbook) -> dict[CellAddress, FormulaAst]:
    """Parse every formula cell once; raises ParseError naming the cell."""
    asts: dict[CellAddress, FormulaAst] = {}
    for addr, cell in wb.iter_cells():
        if cell.formula is None:
            continue
        try:
            asts[addr] = parse_formula(cell.formula)
        except ParseError as exc:
            raise ParseError(f"{addr.qualified()}: {exc}", exc.offset, exc.expected) from exc
    return asts


@dataclass(frozen=True, slots=True)
class StalenessEntry:
    address: CellAddress
    cached: CellValue
    recomputed: CellValue
    relative_delta: float | None


@dataclass(slots=True)
class StalenessReport:
    """Cells whose cached value disagrees with recomputation.

    ``external_exclusions`` lists formula cells that could not be checked
    because their value depends on another workbook.
    """

    entries: list[StalenessEntry]
    external_exclusions: list[CellAddress]


class Engine:
    """Evaluates one workbook; reusable for multiple queries."""

    def __init__(
        self,
        wb: Workbook,
        graph: DepGraph | None = None,
        asts: dict[CellAddress, FormulaAst] | None = None,
    ) -> None:
        self.wb = wb
        self.asts = asts if asts is not None else parse_all_formulas(wb)
        self.graph = graph if graph is not None else build_graph(wb, self.asts)
        self.values: dict[CellAddress, CellValue] = {}
        self.tainted: set[CellAddress] = set()
        self._sheet_items: dict[str, list[tuple[tuple[int, int], CellValue | None]]] = {}
        self._sheets = {sheet.name: sheet for sheet in wb.sheets}
        self._current_tainted = False
        self._ran = False

    # -- orchestration

    def run(self, tie_break: str = "min") -> None:
        """Evaluate every formula cell.

        ``tie_break`` selects which ready node a topological step prefers
        ("min" or "max" address order); any choice yields identical values,
        which the test suite exercises.
        """
        if self._ran:
            return
        g = self.graph
        preds, deps = g._preds, g._deps
        if tie_break == "min":
            key = g.sort_key
        else:
            def key(node):
                return tuple(-x for x in g.sort_key(node))

        indegree = {node: len(ps) for node, ps in preds.items()}
        heap = [(key(n), n) for n, d in indegree.items() if d == 0]
        heapq.heapify(heap)
        processed = 0
        while heap:
            _, node = heapq.heappop(heap)
            processed += 1
            self._eval_node(node)
            for dst in deps[node]:
                indegree[dst] -= 1
                if indegree[dst] == 0:
                    heapq.heappush(heap, (key(dst), dst))

        if processed < len(indegree):
            # the leftover nodes sit on or downstream of reference cycles
            leftover = {n for n, d in indegree.items() if d > 0}
            in_cycle = _cycle_members(deps, leftover)
            for node in in_cycle:
                if node in self.asts:
                    self.values[node] = _CIRC
            heap = []
            for node in leftover - in_cycle:
                remaining = sum(
                    1 for p in preds[node] if p in leftover and p not in in_cycle
                )
                indegree[node] = remaining
                if remaining == 0:
                    heap.append((key(node), node))
            heapq.heapify(heap)
            while heap:
                _, node = heapq.heappop(heap)
                self._eval_node(node)
                for dst in deps[node]:
                    if dst in in_cycle or dst not in leftover:
                        continue
                    indegree[dst] -= 1
                    if indegree[dst] == 0:
                        heapq.heappush(heap, (key(dst), dst))
        self._ran = True

    def _eval_node(self, node) -> None:
        ast = self.asts.get(node) if type(node) is CellAddress else None
        if ast is not None:
            self._current_tainted = False
            self.values[node] = self._eval(ast, node.sheet)
            if self._current_tainted:
                self.tainted.add(node)

    def value_of(self, addr: CellAddress) -> CellValue:
        """Recomputed value for any address (Blank for unstored cells)."""
        self.run()
        if addr in self.values:
            return self.values[addr]
        cell = self.wb.cell(addr)
        if cell is not None:
            return cell.cached
        return BLANK

    # -- cell/range resolution

    def _cell_value(self, sheet: str, col: int, row: int) -> CellValue:
        addr = CellAddress(sheet, col, row)
        got = self.values.get(addr)
        if got is not None:
            if addr in self.tainted:
                self._current_tainted = True
            return got
        cell = self._sheets[sheet].cells.get((col, row))
        if cell is None:
            return BLANK
        if cell.formula is not None:
            # only reachable if evaluation order was violated
            raise RuntimeError(f"precedent {addr} not yet evaluated")
        return cell.cached

    def _sheet_sorted(self, sheet_name: str):
        key = sheet_name.casefold()
        items = self._sheet_items.get(key)
        if items is None:
            sheet = self.wb.sheet(sheet_name)
            items = sorted(
                ((row, col) for (col, row) in sheet.cells) if sheet else []
            )
            self._sheet_items[key] = items
        return items

    def _iter_range_cells(self, rng: RangeRef, origin_sheet: str):
        """Stored cells inside a range, in (row, col) order, as values."""
        sheet = rng.start.sheet or origin_sheet
        if not self.wb.has_sheet(sheet):
            return None
        stored = self._sheet_sorted(sheet)
        c1, r1, c2, r2 = rng.start.col, rng.start.row, rng.end.col, rng.end.row
        lo = bisect_left(stored, (r1, 0))
        hi = bisect_right(stored, (r2, 1 << 30))
        out = []
        resolved = self.wb.sheet(sheet).name
        for row, col in stored[lo:hi]:
            if c1 <= col <= c2:
                out.append(self._cell_value(resolved, col, row))
        return out

    # -- AST evaluation

    def _eval(self, node: FormulaAst, sheet: str) -> CellValue:
        if isinstance(node, NumberLit):
            return CellValue.number(node.value)
        if isinstance(node, TextLit):
            return CellValue.text(node.value)
        if isinstance(node, BoolLit):
            return _TRUE if node.value else _FALSE
        if isinstance(node, Ref):
            return self._eval_ref(node.ref, sheet)
        if isinstance(node, Range):
            # a bare range is not a scalar
            return _VALUE_ERR
        if isinstance(node, Unary):
            return self._eval_unary(node, sheet)
        if isinstance(node, Binary):
            return self._eval_binary(node, sheet)
        if isinstance(node, Call):
            return self._eval_call(node, sheet)
        raise TypeError(f"not a formula node: {node!r}")

    def _eval_ref(self, ref: Reference, sheet: str) -> CellValue:
        if ref.external is not None:
            self._current_tainted = True
            return _REF_ERR
        target_sheet = ref.sheet or sheet
        found = self._sheets.get(target_sheet)
        if found is None:
            found = self.wb.sheet(target_sheet)  # case-insensitive fallback
            if found is None:
                return _REF_ERR
        return self._cell_value(found.name, ref.col, ref.row)

    def _eval_unary(self, node: Unary, sheet: str) -> CellValue:
        val = self._eval(node.operand, sheet)
        if val.is_error():
            return val
        if node.op == "+":
            return val
        num = _to_number(val)
        if num is None:
            return _VALUE_ERR
        return CellValue.number(-num)

    def _eval_binary(self, node: Binary, sheet: str) -> CellValue:
        left = self._eval(node.left, sheet)
        if left.is_error():
            return left
        right = self._eval(node.right, sheet)
        if right.is_error():
            return right
        op = node.op
        if op == "&":
            return CellValue.text(_to_text(left) + _to_text(right))
        if op in ("=", "<>", "<", "<=", ">", ">="):
            return self._compare(op, left, right)
        a = _to_number(left)
        b = _to_number(right)
        if a is None or b is None:
            return _VALUE_ERR
        if op == "+":
            return CellValue.number(a + b)
        if op == "-":
            return CellValue.number(a - b)
        if op == "*":
            return CellValue.number(a * b)
        if op == "/":
            if b == 0:
                return _DIV0
            return CellValue.number(a / b)
        if op == "^":
            if a == 0 and b < 0:
                return _DIV0
            try:
                result = math.pow(a, b)
            except (ValueError, OverflowError):
                return _VALUE_ERR
            if not math.isfinite(result):
                return _VALUE_ERR
            return CellValue.number(result)
        raise ValueError(f"unknown operator {op!r}")

    @staticmethod
    def _compare(op: str, left: CellValue, right: CellValue) -> CellValue:
        rank = {ValueKind.NUMBER: 0, ValueKind.TEXT: 1, ValueKind.BOOLEAN: 2}
        if left.kind is ValueKind.BLANK and right.kind is ValueKind.BLANK:
            order = 0
        else:
            if left.kind is ValueKind.BLANK:
                left = _blank_as(right.kind)
            elif right.kind is ValueKind.BLANK:
                right = _blank_as(left.kind)
            if left.kind is right.kind:
                if left.kind is ValueKind.TEXT:
                    a, b = left.value.casefold(), right.value.casefold()
                else:
                    a, b = left.value, right.value
                order = (a > b) - (a < b)
            else:
                order = (rank[left.kind] > rank[right.kind]) - (
                    rank[left.kind] < rank[right.kind]
                )
        result = {
            "=": order == 0,
            "<>": order != 0,
            "<": order < 0,
            "<=": order <= 0,
            ">": order > 0,
            ">=": order >= 0,
        }[op]
        return _TRUE if result else _FALSE

    # -- function calls

    def _eval_call(self, node: Call, sheet: str) -> CellValue:
        name = node.name
        if name == "IF":
            return self._fn_if(node.args, sheet)
        if name in ("SUM", "AVERAGE", "MIN", "MAX", "COUNT"):
            return self._fn_aggregate(name, node.args, sheet)
        if name in ("AND", "OR"):
            return self._fn_and_or(name, node.args, sheet)
        if name == "NOT":
            return self._fn_not(node.args, sheet)
        if name == "ABS":
            return self._fn_numeric1(abs, node.args, sheet)
        if name == "ROUND":
            return self._fn_round(node.args, sheet)
        if name == "VLOOKUP":
            return self._fn_vlookup(node.args, sheet)
        return _NAME_ERR

    def _fn_if(self, args, sheet: str) -> CellValue:
        if len(args) not in (2, 3):
            return _VALUE_ERR
        cond = self._eval(args[0], sheet)
        if cond.is_error():
            return cond
        flag = _to_bool(cond)
        if flag is None:
            return _VALUE_ERR
        if flag:
            return self._eval(args[1], sheet)
        if len(args) == 3:
            return self._eval(args[2], sheet)
        return _FALSE

    def _fn_aggregate(self, name: str, args, sheet: str) -> CellValue:
        numbers: list[float] = []
        count_only = name == "COUNT"
        for arg in args:
            if isinstance(arg, Range):
                cells = self._iter_range_cells(arg.ref, sheet)
                if cells is None:
                    return _REF_ERR
                for val in cells:
                    if val.is_error():
                        if count_only:
                            continue
                        return val
                    if val.is_number():
                        numbers.append(val.value)
            else:
                val = self._eval(arg, sheet)
                if val.is_error():
                    if count_only:
                        continue
                    return val
                if val.is_blank():
                    continue
                num = _to_number(val)
                if num is None:
                    if count_only:
                        continue
                    return _VALUE_ERR
                numbers.append(num)
        if name == "SUM":
            return CellValue.number(math.fsum(numbers))
        if name == "COUNT":
            return CellValue.number(float(len(numbers)))
        if name == "AVERAGE":
            if not numbers:
                return _DIV0
            return CellValue.number(math.fsum(numbers) / len(numbers))
        if not numbers:
            return CellValue.number(0.0)
        return CellValue.number(min(numbers) if name == "MIN" else max(numbers))

    def _fn_and_or(self, name: str, args, sheet: str) -> CellValue:
        flags: list[bool] = []
        for arg in args:
            if isinstance(arg, Range):
                cells = self._iter_range_cells(arg.ref, sheet)
                if cells is None:
                    return _REF_ERR
                for val in cells:
                    if val.is_error():
                        return val
                    if val.kind in (ValueKind.BOOLEAN, ValueKind.NUMBER):
                        flags.append(bool(val.value))
            else:
                val = self._eval(arg, sheet)
                if val.is_error():
                    return val
                if val.is_blank():
                    continue
                flag = _to_bool(val)
                if flag is None:
                    return _VALUE_ERR
                flags.append(flag)
        if not flags:
            return _VALUE_ERR
        result = all(flags) if name == "AND" else any(flags)
        return _TRUE if result else _FALSE

    def _fn_not(self, args, sheet: str) -> CellValue:
        if len(args) != 1:
            return _VALUE_ERR
        val = self._eval(args[0], sheet)
        if val.is_error():
            return val
        flag = _to_bool(val)
        if flag is None:
            return _VALUE_ERR
        return _FALSE if flag else _TRUE

    def _fn_numeric1(self, fn, args, sheet: str) -> CellValue:
        if len(args) != 1:
            return _VALUE_ERR
        val = self._eval(args[0], sheet)
        if val.is_error():
            return val
        num = _to_number(val)
        if num is None:
            return _VALUE_ERR
        return CellValue.number(fn(num))

    def _fn_round(self, args, sheet: str) -> CellValue:
        if len(args) != 2:
            return _VALUE_ERR
        val = self._eval(args[0], sheet)
        if val.is_error():
            return val
        digits_val = self._eval(args[1], sheet)
        if digits_val.is_error():
            return digits_val
        num = _to_number(val)
        digits = _to_number(digits_val)
        if num is None or digits is None:
            return _VALUE_ERR
        return CellValue.number(_round_half_away(num, int(digits)))

    def _fn_vlookup(self, args, sheet: str) -> CellValue:
        if len(args) not in (3, 4):
            return _VALUE_ERR
        key = self._eval(args[0], sheet)
        if key.is_error():
            return key
        if not isinstance(args[1], Range):
            return _VALUE_ERR
        rng = args[1].ref
        col_val = self._eval(args[2], sheet)
        if col_val.is_error():
            return col_val
        col_num = _to_number(col_val)
        if col_num is None or int(col_num) < 1:
            return _VALUE_ERR
        offset = int(col_num) - 1
        if rng.start.col + offset > rng.end.col:
            return _REF_ERR
        if len(args) == 4:
            flag_val = self._eval(args[3], sheet)
            if flag_val.is_error():
                return flag_val
            flag = _to_bool(flag_val)
            if flag is None or flag:
                # only exact-match mode is supported
                return _VALUE_ERR
        target_sheet = rng.start.sheet or sheet
        found = self.wb.sheet(target_sheet)
        if found is None:
            return _REF_ERR
        stored = self._sheet_sorted(found.name)
        lo = bisect_left(stored, (rng.start.row, 0))
        hi = bisect_right(stored, (rng.end.row, 1 << 30))
        first_col = rng.start.col
        for row, col in stored[lo:hi]:
            if col != first_col:
                continue
            candidate = self._cell_value(found.name, col, row)
            if candidate.is_error():
                return candidate
            if candidate.is_blank():
                continue
            if self._compare("=", key, candidate).value:
                return self._cell_value(found.name, first_col + offset, row)
        return _NA


def _cycle_members(deps: dict, restrict: set) -> set:
    """Nodes on cycles within the subgraph induced by ``restrict``
    (iterative Tarjan; membership is order-independent)."""
    index: dict = {}
    lowlink: dict = {}
    on_stack: set = set()
    stack: list = []
    members: set = set()
    counter = 0
    for root in restrict:
        if root in index:
            continue
        work = [(root, iter(deps[root]))]
        index[root] = lowlink[root] = counter
        counter += 1
        stack.append(root)
        on_stack.add(root)
        while work:
            node, it = work[-1]
            advanced = False
            for nxt in it:
                if nxt not in restrict:
                    continue
                if nxt not in index:
                    index[nxt] = lowlink[nxt] = counter
                    counter += 1
                    stack.append(nxt)
                    on_stack.add(nxt)
                    work.append((nxt, iter(deps[nxt])))
                    advanced = True
                    break
                if nxt in on_stack and index[nxt] < lowlink[node]:
                    lowlink[node] = index[nxt]
            if advanced:
                continue
            work.pop()
            if work:
                parent = work[-1][0]
                if lowlink[node] < lowlink[parent]:
                    lowlink[parent] = lowlink[node]
            if lowlink[node] == index[node]:
                comp = []
                while True:
                    member = stack.pop()
                    on_stack.discard(member)
                    comp.append(member)
                    if member == node:
                        break
                if len(comp) > 1 or comp[0] in deps[comp[0]]:
                    members.update(comp)
    return members


def _blank_as(kind: ValueKind) -> CellValue:
    if kind is ValueKind.NUMBER:
        return CellValue.number(0.0)
    if kind is ValueKind.TEXT:
        return CellValue.text("")
    return _FALSE


def _to_number(val: CellValue) -> float | None:
    if val.kind is ValueKind.NUMBER:
        return val.value
    if val.kind is ValueKind.BLANK:
        return 0.0
    if val.kind is ValueKind.BOOLEAN:
        return 1.0 if val.value else 0.0
    if val.kind is ValueKind.TEXT:
        try:
            return float(val.value.strip())
        except ValueError:
            return None
    return None


def _to_bool(val: CellValue) -> bool | None:
    if val.kind is ValueKind.BOOLEAN:
        return val.value
    if val.kind is ValueKind.NUMBER:
        return val.value != 0
    if val.kind is ValueKind.BLANK:
        return False
    if val.kind is ValueKind.TEXT:
        lowered = val.value.casefold()
        if lowered == "true":
            return True
        if lowered == "false":
            return False
    return None


def _to_text(val: CellValue) -> str:
    if val.kind is ValueKind.TEXT:
        return val.value
    if val.kind is ValueKind.NUMBER:
        return format_number(val.value)
    if val.kind is ValueKind.BOOLEAN:
        return "TRUE" if val.value else "FALSE"
    return ""


def _round_half_away(x: float, digits: int) -> float:
    factor = 10.0 ** digits
    scaled = x * factor
    return math.copysign(math.floor(abs(scaled) + 0.5), x) / factor


def evaluate_cell(wb: Workbook, g: DepGraph, addr: CellAddress) -> CellValue:
    """Recomputed value of one cell.

    Raises :class:`UnknownNodeError` when the address is neither a stored
    cell nor a node of the graph.
    """
    if wb.cell(addr) is None and not g.has_node(addr):
        raise UnknownNodeError(f"not a cell or graph node: {addr}")
    engine = Engine(wb, graph=g)
    return engine.value_of(addr)


def recompute_workbook(
    wb: Workbook,
    asts: dict[CellAddress, FormulaAst] | None = None,
    graph: DepGraph | None = None,
    tie_break: str = "min",
) -> dict[CellAddress, CellValue]:
    """Recompute every formula cell from the workbook's inputs.

    Returns a map from formula-cell address to recomputed value; cells on
    reference cycles map to ``#CIRC!``. Any valid evaluation order gives
    identical results (``tie_break`` picks one; see :meth:`Engine.run`).
    """
    engine = Engine(wb, graph=graph, asts=asts)
    engine.run(tie_break=tie_break)
    return dict(engine.values)


def staleness_report(
    wb: Workbook,
    engine: Engine | None = None,
) -> StalenessReport:
    """Compare cached values against recomputed values.

    A numeric pair is stale when ``|cached - recomputed|`` exceeds
    ``1e-9 * max(1, |recomputed|)``; other pairs are stale on any variant
    or content inequality. Formula cells whose recomputed value is
    ``#REF!`` because of an external link are excluded and listed in
    ``external_exclusions``.
    """
    if engine is None:
        engine = Engine(wb)
    engine.run()
    entries: list[StalenessEntry] = []
    exclusions: list[CellAddress] = []
    for addr, cell in wb.iter_cells():
        if cell.formula is None:
            continue
        recomputed = engine.values[addr]
        if addr in engine.tainted and recomputed == _REF_ERR:
            exclusions.append(addr)
            continue
        cached = cell.cached
        if cached.is_number() and recomputed.is_number():
            delta = abs(cached.value - recomputed.value)
            limit = NUMERIC_TOLERANCE * max(1.0, abs(recomputed.value))
            if delta > limit:
                entries.append(
                    StalenessEntry(addr, cached, recomputed, delta / max(1.0, abs(recomputed.value)))
                )
        elif cached != recomputed:
            entries.append(StalenessEntry(addr, cached, recomputed, None))
    return StalenessReport(entries=entries, external_exclusions=exclusions)
