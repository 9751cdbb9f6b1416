"""Structural metrics, association statistics, and success reporting.

The complexity score here is a documented in-repo composite, not a
reimplementation of any external analyzer: per function body it adds
one, the count of branching tokens, and the maximum brace-nesting
depth. External calls are counted by member-access token pattern, which
is a proxy that also matches typed interface calls. Both definitions
are deterministic and stable across runs, which is what the
association analysis actually needs.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Optional, Sequence

from .errors import ZeroMarginal
from .records import CaseResult, VulnClass
from .soltx import strip_comments
from .soltx.lexer import Token, TokenKind, lex


class DegenerateInputWarning(UserWarning):
    """Raised via warnings when inputs cannot support the requested binning."""


# -- structural metrics ------------------------------------------------------

@dataclass(frozen=True)
class StructuralMetrics:
    nsloc: int
    complexity_score: int
    external_calls: int
    inheritance_depth: int
    has_inline_assembly: bool
    has_payable_func: bool


_CALL_MEMBERS = frozenset({"call", "delegatecall", "staticcall", "send", "transfer"})
_BRANCH_KEYWORDS = frozenset({"if", "for", "while", "do", "catch"})
_BODY_KEYWORDS = frozenset({"function", "constructor", "modifier", "receive", "fallback"})


def compute_metrics(source: str) -> StructuralMetrics:
    """Extract the structural feature columns for one source file."""
    stream = lex(source)
    tokens = list(stream.tokens)
    code = [i for i, t in enumerate(tokens) if t.is_code()]

    nsloc = sum(1 for line in strip_comments(source).split("\n") if line.strip())

    complexity = 0
    has_payable = False
    for fn_pos in _body_intro_positions(tokens, code):
        header_end, open_pos, close_pos = _body_span(tokens, code, fn_pos)
        if header_end is not None and _header_has_payable(tokens, code, fn_pos, header_end):
            has_payable = True
        if open_pos is None or close_pos is None:
            continue
        complexity += 1 + _branch_count(tokens, code, open_pos, close_pos)
        complexity += _max_brace_depth(tokens, code, open_pos, close_pos)

    external = 0
    for pos in range(1, len(code)):
        tok = tokens[code[pos]]
        prev = tokens[code[pos - 1]]
        if (
            tok.kind == TokenKind.IDENTIFIER
            and tok.text in _CALL_MEMBERS
            and prev.kind == TokenKind.PUNCT
            and prev.text == "."
        ):
            external += 1

    has_asm = any(
        tokens[i].kind == TokenKind.KEYWORD and tokens[i].text == "assembly"
        for i in code
    )

    return StructuralMetrics(
        nsloc=nsloc,
        complexity_score=complexity,
        external_calls=external,
        inheritance_depth=_inheritance_depth(tokens, code),
        has_inline_assembly=has_asm,
        has_payable_func=has_payable,
    )


def _body_intro_positions(tokens: list[Token], code: list[int]) -> list[int]:
    return [
        pos for pos, idx in enumerate(code)
        if tokens[idx].kind == TokenKind.KEYWORD and tokens[idx].text in _BODY_KEYWORDS
    ]


def _body_span(tokens, code, fn_pos):
    """(header end, body open, body close) as code positions."""
    depth = 0
    for pos in range(fn_pos + 1, len(code)):
        tok = tokens[code[pos]]
        if tok.kind != TokenKind.PUNCT:
            continue
        if tok.text == "(":
            depth += 1
        elif tok.text == ")":
            depth -= 1
        elif tok.text == ";" and depth == 0:
            return pos, None, None
        elif tok.text == "{" and depth == 0:
            close = _match_brace(tokens, code, pos)
            return pos, pos, close
    return None, None, None


def _header_has_payable(tokens, code, start, end) -> bool:
    return any(
        tokens[code[pos]].kind == TokenKind.KEYWORD
        and tokens[code[pos]].text == "payable"
        for pos in range(start, end)
    )


def _match_brace(tokens, code, open_pos):
    depth = 0
    for pos in range(open_pos, len(code)):
        tok = tokens[code[pos]]
        if tok.kind != TokenKind.PUNCT:
            continue
        if tok.text == "{":
            depth += 1
        elif tok.text == "}":
            depth -= 1
            if depth == 0:
                return pos
    return None


def _branch_count(tokens, code, open_pos, close_pos) -> int:
    count = 0
    pos = open_pos + 1
    while pos < close_pos:
        tok = tokens[code[pos]]
        if tok.kind == TokenKind.KEYWORD and tok.text in _BRANCH_KEYWORDS:
            count += 1
        elif tok.kind == TokenKind.PUNCT and tok.text == "?":
            count += 1
        elif tok.kind == TokenKind.PUNCT and tok.text in "&|":
            nxt = tokens[code[pos + 1]] if pos + 1 < close_pos else None
            if nxt is not None and nxt.kind == TokenKind.PUNCT and nxt.text == tok.text:
                count += 1
                pos += 1  # consume the pair
        pos += 1
    return count


def _max_brace_depth(tokens, code, open_pos, close_pos) -> int:
    depth = 0
    deepest = 0
    for pos in range(open_pos, close_pos + 1):
        tok = tokens[code[pos]]
        if tok.kind != TokenKind.PUNCT:
            continue
        if tok.text == "{":
            depth += 1
            deepest = max(deepest, depth)
        elif tok.text == "}":
            depth -= 1
    return deepest


def _inheritance_depth(tokens, code) -> int:
    parents: dict[str, list[str]] = {}
    pos = 0
    while pos < len(code):
        tok = tokens[code[pos]]
        if tok.kind == TokenKind.KEYWORD and tok.text in ("contract", "interface", "library"):
            name_tok = tokens[code[pos + 1]] if pos + 1 < len(code) else None
            if name_tok is not None and name_tok.kind == TokenKind.IDENTIFIER:
                name = name_tok.text
                bases: list[str] = []
                scan = pos + 2
                if scan < len(code) and tokens[code[scan]].text == "is":
                    scan += 1
                    depth = 0
                    while scan < len(code):
                        t = tokens[code[scan]]
                        if t.kind == TokenKind.PUNCT:
                            if t.text == "(":
                                depth += 1
                            elif t.text == ")":
                                depth -= 1
                            elif t.text == "{" and depth == 0:
                                break
                        elif t.kind == TokenKind.IDENTIFIER and depth == 0:
                            bases.append(t.text)
                        scan += 1
                parents[name] = bases
        pos += 1

    if not parents:
        return 1

    def chain(name: str, seen: frozenset[str]) -> int:
        if name not in parents or name in seen:
            return 0  # unresolvable or cyclic base contributes nothing
        local = [chain(b, seen | {name}) for b in parents[name]]
        return 1 + (max(local) if local else 0)

    return max(chain(name, frozenset()) for name in parents)


# -- discretization ----------------------------------------------------------

def quantile_bins(values: Sequence[float], q: int = 3) -> list[str]:
    """Rank-based quantile labels ("q1".."q<q>"); tied values share the lower bin."""
    if not values:
        raise ValueError("values must be non-empty")
    if q < 2:
        raise ValueError("q must be >= 2")

    distinct = sorted(set(values))
    if len(distinct) == 1:
        warnings.warn(
            "all values equal; binning collapses to one bin",
            DegenerateInputWarning,
            stacklevel=2,
        )
        return ["q1"] * len(values)
    if q > len(distinct):
        warnings.warn(
            f"only {len(distinct)} distinct values for q={q}; bins will collapse",
            DegenerateInputWarning,
            stacklevel=2,
        )

    n = len(values)
    order = sorted(range(n), key=lambda i: values[i])
    first_rank: dict[float, int] = {}
    for rank, idx in enumerate(order):
        first_rank.setdefault(values[idx], rank)
    return [f"q{(first_rank[v] * q) // n + 1}" for v in values]


# -- association statistics --------------------------------------------------

@dataclass(frozen=True)
class ContingencyTable:
    rows: tuple[tuple[int, ...], ...]
    row_labels: tuple[str, ...] = ()
    col_labels: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.rows or not self.rows[0]:
            raise ValueError("table must have at least one row and column")
        width = len(self.rows[0])
        for row in self.rows:
            if len(row) != width:
                raise ValueError("ragged contingency table")
            for cell in row:
                if cell < 0:
                    raise ValueError("negative cell count")

    @property
    def n(self) -> int:
        return sum(sum(row) for row in self.rows)

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.rows), len(self.rows[0])


@dataclass(frozen=True)
class AssociationResult:
    chi2: float
    n: int
    k: int
    v: float


def chi_squared(table: ContingencyTable) -> float:
    """Pearson chi-squared statistic of the table."""
    r, c = table.shape
    row_totals = [sum(row) for row in table.rows]
    col_totals = [sum(table.rows[i][j] for i in range(r)) for j in range(c)]
    n = table.n
    if n == 0:
        raise ValueError("empty table")
    for i, total in enumerate(row_totals):
        if total == 0:
            raise ZeroMarginal("row", i)
    for j, total in enumerate(col_totals):
        if total == 0:
            raise ZeroMarginal("col", j)
    stat = 0.0
    for i in range(r):
        for j in range(c):
            expected = row_totals[i] * col_totals[j] / n
            diff = table.rows[i][j] - expected
            stat += diff * diff / expected
    return stat


def cramers_v(table: ContingencyTable) -> AssociationResult:
    """Association strength sqrt(chi2 / (n * (min(r, c) - 1)))."""
    r, c = table.shape
    if r < 2 or c < 2:
        raise ValueError("association needs at least a 2x2 table")
    chi2 = chi_squared(table)
    n = table.n
    k = min(r, c)
    v = math.sqrt(chi2 / (n * (k - 1)))
    return AssociationResult(chi2=chi2, n=n, k=k, v=v)


def table_from_pairs(
    xs: Sequence[str], ys: Sequence[str]
) -> ContingencyTable:
    """Cross-tabulate two equal-length categorical sequences."""
    if len(xs) != len(ys):
        raise ValueError("sequences must have equal length")
    row_labels = tuple(sorted(set(xs)))
    col_labels = tuple(sorted(set(ys)))
    counts = {(r, c): 0 for r in row_labels for c in col_labels}
    for x, y in zip(xs, ys):
        counts[(x, y)] += 1
    rows = tuple(
        tuple(counts[(r, c)] for c in col_labels) for r in row_labels
    )
    return ContingencyTable(rows=rows, row_labels=row_labels, col_labels=col_labels)


# -- success aggregation -----------------------------------------------------

@dataclass(frozen=True)
class ClassRate:
    vuln_class: VulnClass
    successes: int
    total: int

    @property
    def percentage(self) -> Optional[float]:
        if self.total == 0:
            return None
        return 100.0 * self.successes / self.total

    def render(self) -> str:
        if self.total == 0:
            return "0/0 (—)"
        return f"{self.successes}/{self.total} ({self.percentage:.1f}%)"


@dataclass(frozen=True)
class SuccessTable:
    rows: tuple[ClassRate, ...]

    @property
    def average_percentage(self) -> Optional[float]:
        rates = [row.percentage for row in self.rows if row.total > 0]
        if not rates:
            return None
        return sum(rates) / len(rates)

    def render_average(self) -> str:
        avg = self.average_percentage
        return "n/a" if avg is None else f"{avg:.1f}%"


def aggregate_success(
    results: Sequence[CaseResult],
    classes: Sequence[VulnClass] = tuple(VulnClass),
) -> SuccessTable:
    """Per-class success counts plus the unweighted average rate.

    The average is the mean of the per-class percentages over classes
    with at least one case, not the pooled success ratio.
    """
    rows = []
    for vuln_class in classes:
        at_class = [r for r in results if r.vuln_class == vuln_class]
        successes = sum(1 for r in at_class if r.status.is_success())
        rows.append(ClassRate(vuln_class, successes, len(at_class)))
    return SuccessTable(rows=tuple(rows))


def render_success_markdown(table: SuccessTable, title: str = "Campaign results") -> str:
    lines = [
        f"## {title}",
        "",
        "| Vulnerability | Success Rate |",
        "|---|---|",
    ]
    for row in table.rows:
        lines.append(f"| {row.vuln_class.display_name()} | {row.render()} |")
    lines.append(f"| **Average Success Rate** | **{table.render_average()}** |")
    return "\n".join(lines) + "\n"


# -- feature association report ----------------------------------------------

NUMERIC_FEATURES = (
    ("nSLOC", lambda m: m.nsloc),
    ("ComplexityScore", lambda m: m.complexity_score),
    ("ExternalCallsCount", lambda m: m.external_calls),
    ("InheritanceDepth", lambda m: m.inheritance_depth),
)
BOOLEAN_FEATURES = (
    ("HasInlineAssembly", lambda m: m.has_inline_assembly),
    ("PayableFunc", lambda m: m.has_payable_func),
)


@dataclass(frozen=True)
class FeatureAssociation:
    feature: str
    result: Optional[AssociationResult]  # None renders as N/A
    binning: str

    def render_v(self) -> str:
        return "N/A" if self.result is None else f"{self.result.v:.3f}"


def association_report(
    metrics: Sequence[StructuralMetrics],
    outcomes: Sequence[bool],
    q: int = 3,
) -> list[FeatureAssociation]:
    """Cramér's V between each structural feature and the success outcome.

    Features without variation (and every feature, when the outcome
    itself has none) degrade to N/A instead of erroring.
    """
    if len(metrics) != len(outcomes):
        raise ValueError("metrics and outcomes must align")
    if len(metrics) < 2:
        raise ValueError("need at least two cases")
    outcome_labels = ["aeg" if o else "no-aeg" for o in outcomes]
    outcome_varies = len(set(outcome_labels)) == 2

    report: list[FeatureAssociation] = []
    for name, getter in NUMERIC_FEATURES:
        values = [float(getter(m)) for m in metrics]
        binning = f"quantile-q{q}"
        if not outcome_varies or len(set(values)) < 2:
            report.append(FeatureAssociation(name, None, binning))
            continue
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", DegenerateInputWarning)
            bins = quantile_bins(values, q)
        report.append(
            FeatureAssociation(name, _safe_v(bins, outcome_labels), binning)
        )
    for name, getter in BOOLEAN_FEATURES:
        values = ["yes" if getter(m) else "no" for m in metrics]
        if not outcome_varies or len(set(values)) < 2:
            report.append(FeatureAssociation(name, None, "none"))
            continue
        report.append(
            FeatureAssociation(name, _safe_v(values, outcome_labels), "none")
        )
    return report


def _safe_v(xs: list[str], ys: list[str]) -> Optional[AssociationResult]:
    try:
        return cramers_v(table_from_pairs(xs, ys))
    except (ZeroMarginal, ValueError):
        return None


def render_association_csv(report: Sequence[FeatureAssociation]) -> str:
    lines = ["feature,cramers_v,binning"]
    for row in report:
        lines.append(f"{row.feature},{row.render_v()},{row.binning}")
    return "\n".join(lines) + "\n"
