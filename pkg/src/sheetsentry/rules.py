"""Configurable audit rules and the engine that runs them.

Each rule inspects one facet of workbook quality and emits findings in a
fixed category: missing specification, external links that break
auditability, stale cached values, literal values punched into copied
formula runs, repeated magic constants, deeply nested conditionals,
overlong formulas, undocumented or unindented script modules, manual
recalculation mode, and expensive lookup formulas. Thresholds live in
:class:`RuleConfig`; the catalog with per-rule rationale is in
``docs/rules.md``.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, fields, replace
from typing import Any

from .errors import FormatError, IoError
from .evaluate import StalenessReport, staleness_report
from .formula import Call, FormulaAst, NumberLit, Unary, parse_formula, tokenize, walk
from .graph import DepGraph
from .metrics import ScriptMetrics, branch_count, formula_cost, script_metrics
from .normalize import CopyClass
from .workbook import CalcMode, CellAddress, Manifest, Workbook, WorkbookSettings


class Severity(enum.IntEnum):
    INFO = 0
    WARNING = 1
    ERROR = 2

    @property
    def label(self) -> str:
        return self.name.lower()

    @staticmethod
    def from_label(label: str) -> "Severity":
        return Severity[label.upper()]


class Category(enum.Enum):
    CORRECTNESS = "correctness"
    SPECIFICATION = "specification"
    AUDITABILITY = "auditability"
    USABILITY = "usability"
    MAINTAINABILITY = "maintainability"
    PERFORMANCE = "performance"


@dataclass(frozen=True, slots=True)
class Finding:
    """One rule hit: what, where, how bad, and the supporting evidence."""

    rule_id: str
    severity: Severity
    category: Category
    locations: tuple[CellAddress, ...]
    message: str
    evidence: tuple[tuple[str, Any], ...] = ()

    def evidence_dict(self) -> dict[str, Any]:
        return dict(self.evidence)


@dataclass(frozen=True, slots=True)
class RuleInfo:
    rule_id: str
    category: Category
    severity: Severity
    summary: str
    rationale: str
    config_keys: tuple[str, ...] = ()


RULES: dict[str, RuleInfo] = {
    info.rule_id: info
    for info in [
        RuleInfo(
            "SPEC_MISSING",
            Category.SPECIFICATION,
            Severity.WARNING,
            "workbook manifest does not say what the workbook computes",
            "A reviewer cannot judge whether results are right without a "
            "statement of what they are supposed to be.",
        ),
        RuleInfo(
            "STALE_VALUE",
            Category.CORRECTNESS,
            Severity.ERROR,
            "cached cell value differs from the value recomputed from inputs",
            "A saved result that no longer follows from the inputs means the "
            "file was saved in an inconsistent state.",
        ),
        RuleInfo(
            "EXTERNAL_LINK",
            Category.AUDITABILITY,
            Severity.WARNING,
            "formulas pull data from another workbook",
            "Values imported from outside the file cannot be verified from "
            "the file alone.",
            (),
        ),
        RuleInfo(
            "UNDOCUMENTED_IMPORT",
            Category.SPECIFICATION,
            Severity.INFO,
            "an external workbook is referenced but not recorded in manifest assumptions",
            "Without a recorded assumption there is no trace of where the "
            "imported numbers came from.",
        ),
        RuleInfo(
            "COPY_CLASS_HOLE",
            Category.USABILITY,
            Severity.ERROR,
            "a literal value interrupts a contiguous run of copied formulas",
            "The classic overwrite accident: a number pasted over one copy "
            "of a formula.",
            ("min_copy_class_for_hole",),
        ),
        RuleInfo(
            "HARDCODED_CONSTANT",
            Category.MAINTAINABILITY,
            Severity.WARNING,
            "the same numeric literal recurs across many distinct formulas",
            "Changing the number later means hunting through every formula "
            "that might derive from it.",
            ("const_min_repeats", "const_whitelist"),
        ),
        RuleInfo(
            "DEEP_NESTING",
            Category.MAINTAINABILITY,
            Severity.WARNING,
            "a formula has too many conditional branches",
            "Heavily nested IFs are hard to understand and harder to change "
            "safely.",
            ("max_branches",),
        ),
        RuleInfo(
            "LONG_FORMULA",
            Category.MAINTAINABILITY,
            Severity.INFO,
            "a formula is longer than the configured token budget",
            "Long formulas hide mistakes; splitting them into steps makes "
            "them checkable.",
            ("max_formula_tokens",),
        ),
        RuleInfo(
            "SCRIPT_QUALITY",
            Category.MAINTAINABILITY,
            Severity.WARNING,
            "a large script module is undocumented or unindented",
            "Uncommented, unindented procedural code is unlikely to survive "
            "maintenance without new errors.",
            ("script_min_lines", "script_min_comment_ratio", "script_min_indent_ratio"),
        ),
        RuleInfo(
            "MANUAL_CALC",
            Category.PERFORMANCE,
            Severity.WARNING,
            "the workbook is set to manual recalculation",
            "Manual mode makes it easy to read results that no longer "
            "reflect the inputs; the setting leaks into every open workbook.",
        ),
        RuleInfo(
            "LOOKUP_HOTSPOT",
            Category.PERFORMANCE,
            Severity.WARNING,
            "a lookup-heavy formula dominates modeled recalculation cost",
            "Linear-scan lookups over large tables slow recalculation, which "
            "discourages testing and invites manual-calc mode.",
            ("lookup_cost_threshold",),
        ),
    ]
}

DEFAULT_WHITELIST = (0.0, 1.0, -1.0, 100.0)


@dataclass(frozen=True, slots=True)
class RuleConfig:
    """Which rules run and with what thresholds."""

    enabled: frozenset[str] = frozenset(RULES)
    const_min_repeats: int = 3
    const_whitelist: frozenset[float] = frozenset(DEFAULT_WHITELIST)
    max_branches: int = 4
    max_formula_tokens: int = 40
    min_copy_class_for_hole: int = 5
    lookup_cost_threshold: int = 1000
    script_min_lines: int = 100
    script_min_comment_ratio: float = 0.05
    script_min_indent_ratio: float = 0.5

    def __post_init__(self) -> None:
        for key in (
            "const_min_repeats",
            "max_branches",
            "max_formula_tokens",
            "min_copy_class_for_hole",
            "lookup_cost_threshold",
            "script_min_lines",
        ):
            value = getattr(self, key)
            if not isinstance(value, int) or isinstance(value, bool) or value <= 0:
                raise FormatError(f"$.{key}", f"must be a positive integer, got {value!r}")
        for key in ("script_min_comment_ratio", "script_min_indent_ratio"):
            value = getattr(self, key)
            if not isinstance(value, (int, float)) or not 0.0 < value <= 1.0:
                raise FormatError(f"$.{key}", f"must lie in (0, 1], got {value!r}")
        unknown = set(self.enabled) - set(RULES)
        if unknown:
            raise FormatError("$.enabled", f"unknown rule id {sorted(unknown)[0]!r}")

    @staticmethod
    def from_dict(doc: Any) -> "RuleConfig":
        if not isinstance(doc, dict):
            raise FormatError("$", "rule config must be a JSON object")
        known = {f.name for f in fields(RuleConfig)}
        unknown = set(doc) - known
        if unknown:
            raise FormatError("$", f"unknown key {sorted(unknown)[0]!r}")
        kwargs: dict[str, Any] = {}
        for key, value in doc.items():
            if key == "enabled":
                if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
                    raise FormatError("$.enabled", "must be an array of rule ids")
                kwargs[key] = frozenset(value)
            elif key == "const_whitelist":
                if not isinstance(value, list) or not all(
                    isinstance(v, (int, float)) and not isinstance(v, bool) for v in value
                ):
                    raise FormatError("$.const_whitelist", "must be an array of numbers")
                kwargs[key] = frozenset(float(v) for v in value)
            else:
                kwargs[key] = value
        return RuleConfig(**kwargs)

    @staticmethod
    def from_file(path: str) -> "RuleConfig":
        try:
            with open(path, "rb") as fh:
                raw = fh.read()
        except OSError as exc:
            raise IoError(f"cannot read config {path}: {exc}") from exc
        try:
            doc = json.loads(raw)
        except ValueError as exc:
            raise FormatError("$", f"invalid JSON: {exc}") from exc
        return RuleConfig.from_dict(doc)

    def without(self, rule_id: str) -> "RuleConfig":
        return replace(self, enabled=self.enabled - {rule_id})

    def to_dict(self) -> dict[str, Any]:
        return {
            "enabled": sorted(self.enabled),
            "const_min_repeats": self.const_min_repeats,
            "const_whitelist": sorted(self.const_whitelist),
            "max_branches": self.max_branches,
            "max_formula_tokens": self.max_formula_tokens,
            "min_copy_class_for_hole": self.min_copy_class_for_hole,
            "lookup_cost_threshold": self.lookup_cost_threshold,
            "script_min_lines": self.script_min_lines,
            "script_min_comment_ratio": self.script_min_comment_ratio,
            "script_min_indent_ratio": self.script_min_indent_ratio,
        }


def _finding(
    rule_id: str,
    locations: tuple[CellAddress, ...],
    message: str,
    evidence: tuple[tuple[str, Any], ...] = (),
) -> Finding:
    info = RULES[rule_id]
    return Finding(
        rule_id=rule_id,
        severity=info.severity,
        category=info.category,
        locations=locations,
        message=message,
        evidence=evidence,
    )


def check_spec_presence(manifest: Manifest) -> list[Finding]:
    """Missing or empty manifest specification."""
    if manifest.specification and manifest.specification.strip():
        return []
    return [
        _finding(
            "SPEC_MISSING",
            (),
            "the manifest does not state what this workbook is meant to compute",
        )
    ]


def check_stale_values(staleness: StalenessReport) -> list[Finding]:
    """One error finding per cell whose cached value disagrees with recomputation."""
    findings = []
    for entry in staleness.entries:
        findings.append(
            _finding(
                "STALE_VALUE",
                (entry.address,),
                f"cached value {entry.cached.display()} does not match "
                f"recomputed value {entry.recomputed.display()}",
                (
                    ("cached", entry.cached.to_json()),
                    ("recomputed", entry.recomputed.to_json()),
                    ("relative_delta", entry.relative_delta),
                ),
            )
        )
    return findings


def check_external_links(g: DepGraph, manifest: Manifest, wb: Workbook) -> list[Finding]:
    """One auditability finding per external workbook, plus a specification
    note when the manifest's assumptions never mention that workbook."""
    by_book: dict[str, list[CellAddress]] = {}
    for link in g.external_links:
        by_book.setdefault(link.workbook, []).append(link.source)
    findings = []
    assumptions = manifest.assumptions_dict()
    for book in sorted(by_book, key=str.casefold):
        sources = sorted(set(by_book[book]), key=wb.address_sort_key)
        findings.append(
            _finding(
                "EXTERNAL_LINK",
                tuple(sources),
                f"{len(by_book[book])} reference(s) import data from workbook [{book}]; "
                "imported values cannot be verified from this file",
                (("workbook", book), ("reference_count", len(by_book[book]))),
            )
        )
        needle = book.casefold()
        documented = any(
            needle in key.casefold() or needle in value.casefold()
            for key, value in assumptions.items()
        )
        if not documented:
            findings.append(
                _finding(
                    "UNDOCUMENTED_IMPORT",
                    tuple(sources),
                    f"manifest assumptions do not record where data imported "
                    f"from [{book}] comes from",
                    (("workbook", book),),
                )
            )
    return findings


def check_calc_mode(settings: WorkbookSettings) -> list[Finding]:
    """Manual recalculation mode is a standing staleness risk."""
    if settings.calc_mode is not CalcMode.MANUAL:
        return []
    return [
        _finding(
            "MANUAL_CALC",
            (),
            "workbook is set to manual recalculation; results may silently "
            "lag the inputs",
        )
    ]


def check_hardcoded_constant(
    classes: list[CopyClass],
    cfg: RuleConfig,
    asts_by_class: dict[str, Any],
) -> list[Finding]:
    """Numeric literals repeated across many distinct copy classes."""
    appearances: dict[float, list[CellAddress]] = {}
    for cls in classes:
        ast = asts_by_class[cls.normalized.text]
        for value in sorted(set(_literal_values(ast))):
            appearances.setdefault(value, []).append(cls.representative)
    findings = []
    for value in sorted(appearances):
        if value in cfg.const_whitelist:
            continue
        reps = appearances[value]
        if len(reps) < cfg.const_min_repeats:
            continue
        findings.append(
            _finding(
                "HARDCODED_CONSTANT",
                tuple(reps),
                f"literal {value:g} appears in {len(reps)} distinct formulas; "
                "changing it later means editing each one",
                (("constant", value), ("count", len(reps))),
            )
        )
    return findings


def _literal_values(ast) -> list[float]:
    out = []
    skip: set[int] = set()
    for node in walk(ast):
        if id(node) in skip:
            continue
        if isinstance(node, Unary) and node.op == "-" and isinstance(node.operand, NumberLit):
            out.append(-node.operand.value)
            skip.add(id(node.operand))
        elif isinstance(node, NumberLit):
            out.append(node.value)
    return out


def check_deep_nesting(
    classes: list[CopyClass], cfg: RuleConfig, asts_by_class: dict[str, Any]
) -> list[Finding]:
    """Formulas whose conditional branch count exceeds the budget; reported
    once per copy class at its representative."""
    findings = []
    for cls in classes:
        branches = branch_count(asts_by_class[cls.normalized.text])
        if branches > cfg.max_branches:
            findings.append(
                _finding(
                    "DEEP_NESTING",
                    (cls.representative,),
                    f"formula has {branches} conditional branches "
                    f"(limit {cfg.max_branches})",
                    (("branches", branches), ("class_size", len(cls.members))),
                )
            )
    return findings


def check_long_formula(
    wb: Workbook, classes: list[CopyClass], cfg: RuleConfig
) -> list[Finding]:
    """Formulas longer than the token budget; reported once per copy class."""
    findings = []
    for cls in classes:
        rep = cls.representative
        source = wb.cell(rep).formula
        tokens = len(tokenize(source[1:]))
        if tokens > cfg.max_formula_tokens:
            findings.append(
                _finding(
                    "LONG_FORMULA",
                    (rep,),
                    f"formula has {tokens} tokens (limit {cfg.max_formula_tokens})",
                    (("tokens", tokens), ("class_size", len(cls.members))),
                )
            )
    return findings


def check_copy_class_holes(
    wb: Workbook, classes: list[CopyClass], cfg: RuleConfig
) -> list[Finding]:
    """Literal values sitting inside a contiguous one-row or one-column run
    of copied formulas: the signature of an overwritten formula."""
    findings = []
    for cls in classes:
        if len(cls.members) < cfg.min_copy_class_for_hole:
            continue
        sheets = {m.sheet for m in cls.members}
        if len(sheets) != 1:
            continue
        cols = {m.col for m in cls.members}
        rows = {m.row for m in cls.members}
        if len(cols) == 1:
            fixed_col = next(iter(cols))
            low, high = min(rows), max(rows)
            holes = [
                CellAddress(next(iter(sheets)), fixed_col, row)
                for row in range(low, high + 1)
                if row not in rows
            ]
        elif len(rows) == 1:
            fixed_row = next(iter(rows))
            low, high = min(cols), max(cols)
            holes = [
                CellAddress(next(iter(sheets)), col, fixed_row)
                for col in range(low, high + 1)
                if col not in cols
            ]
        else:
            continue
        for hole in holes:
            cell = wb.cell(hole)
            if cell is None or cell.formula is not None:
                continue
            findings.append(
                _finding(
                    "COPY_CLASS_HOLE",
                    (hole,),
                    f"literal value {cell.cached.display()} interrupts a run of "
                    f"{len(cls.members)} copies of the same formula",
                    (
                        ("normalized_formula", cls.normalized.text),
                        ("class_size", len(cls.members)),
                    ),
                )
            )
    return findings


def check_lookup_hotspots(
    classes: list[CopyClass], cfg: RuleConfig, asts_by_class: dict[str, Any]
) -> list[Finding]:
    """Formulas that are both lookup-bearing and expensive under the cost
    model; reported once per copy class."""
    findings = []
    for cls in classes:
        ast = asts_by_class[cls.normalized.text]
        lookups = sum(
            1 for node in walk(ast) if isinstance(node, Call) and node.name == "VLOOKUP"
        )
        if not lookups:
            continue
        cost = formula_cost(ast)
        if cost <= cfg.lookup_cost_threshold:
            continue
        findings.append(
            _finding(
                "LOOKUP_HOTSPOT",
                (cls.representative,),
                f"lookup formula costs {cost} units to recalculate "
                f"(threshold {cfg.lookup_cost_threshold}); consider a direct "
                "reference or a smaller table",
                (
                    ("cost", cost),
                    ("lookup_count", lookups),
                    ("class_size", len(cls.members)),
                ),
            )
        )
    return findings


def check_script_quality(
    scripts_metrics: list[ScriptMetrics], cfg: RuleConfig
) -> list[Finding]:
    """Large script modules that are undocumented or unindented."""
    findings = []
    for sm in scripts_metrics:
        if sm.lines < cfg.script_min_lines:
            continue
        if (
            sm.comment_ratio >= cfg.script_min_comment_ratio
            and sm.indent_ratio >= cfg.script_min_indent_ratio
        ):
            continue
        findings.append(
            _finding(
                "SCRIPT_QUALITY",
                (),
                f"script module {sm.name!r} has {sm.lines} lines with "
                f"{sm.comment_ratio:.0%} comments and {sm.indent_ratio:.0%} "
                "indentation",
                (
                    ("module", sm.name),
                    ("lines", sm.lines),
                    ("comment_ratio", sm.comment_ratio),
                    ("indent_ratio", sm.indent_ratio),
                ),
            )
        )
    return findings


def run_rules(
    wb: Workbook,
    g: DepGraph,
    classes: list[CopyClass],
    metrics,
    cfg: RuleConfig,
    staleness: StalenessReport | None = None,
    scripts_metrics: list[ScriptMetrics] | None = None,
    asts: dict[CellAddress, FormulaAst] | None = None,
) -> list[Finding]:
    """Run every enabled rule and return findings sorted by severity
    (descending), then rule id, then first location.

    ``staleness``, ``scripts_metrics`` and ``asts`` may be passed in to
    reuse the audit pipeline's work; when omitted they are computed here.
    """
    if staleness is None:
        staleness = staleness_report(wb)
    if scripts_metrics is None:
        scripts_metrics = script_metrics(wb.scripts)
    asts_by_class = {}
    for cls in classes:
        rep = cls.representative
        if asts is not None and rep in asts:
            asts_by_class[cls.normalized.text] = asts[rep]
        else:
            asts_by_class[cls.normalized.text] = parse_formula(wb.cell(rep).formula)

    findings: list[Finding] = []
    findings.extend(check_spec_presence(wb.manifest))
    findings.extend(check_stale_values(staleness))
    findings.extend(check_external_links(g, wb.manifest, wb))
    findings.extend(check_calc_mode(wb.settings))
    findings.extend(check_hardcoded_constant(classes, cfg, asts_by_class))
    findings.extend(check_deep_nesting(classes, cfg, asts_by_class))
    findings.extend(check_long_formula(wb, classes, cfg))
    findings.extend(check_copy_class_holes(wb, classes, cfg))
    findings.extend(check_lookup_hotspots(classes, cfg, asts_by_class))
    findings.extend(check_script_quality(scripts_metrics, cfg))

    findings = [f for f in findings if f.rule_id in cfg.enabled]

    def sort_key(f: Finding):
        loc = (1,) + wb.address_sort_key(f.locations[0]) if f.locations else (0,)
        return (-int(f.severity), f.rule_id, loc)

    findings.sort(key=sort_key)
    return findings
