"""Accuracy of a curated table against ground truth, with exact binomial intervals.

Two accuracy regimes are reported for every attribute:

``include_not_found``
    denominator is every evaluated entity; not_found and engine failures
    count as incorrect.
``found_only``
    denominator is the entities the model returned as found.

Intervals are Clopper-Pearson, obtained by bisection directly on binomial
tail sums evaluated in log space.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any

from .compiler import CuratedTable, parse_value
from .errors import EmptyDenominator, EvaluationError, InvalidArgs, InvalidField, MissingColumn, MissingTruth, SchemaViolation
from .taskconfig import TaskSpec, make_entity_id, read_csv_rows

REGIMES = ("include_not_found", "found_only")
NOT_APPLICABLE = "NA"
CP_TOLERANCE = 1e-12


# -- matching ---------------------------------------------------------------------


def normalize_text(text: str) -> str:
    return " ".join(str(text).casefold().split())


@dataclass
class MatchRule:
    """How predicted values are compared with the truth.

    ``aliases`` maps normalized variants to normalized canonical forms and is
    applied to both sides before string comparison. ``year_tolerance`` is the
    allowed absolute difference for year attributes (exact by default).
    """

    aliases: dict[str, str] = field(default_factory=dict)
    year_tolerance: int = 0

    def canonical(self, text: str) -> str:
        norm = normalize_text(text)
        return self.aliases.get(norm, norm)


def load_aliases(csv_text: str) -> dict[str, str]:
    header, rows = read_csv_rows(csv_text)
    for col in ("variant", "canonical"):
        if col not in header:
            raise MissingColumn(col)
    vi, ci = header.index("variant"), header.index("canonical")
    aliases = {}
    for row in rows:
        variant, canonical = normalize_text(row[vi]), normalize_text(row[ci])
        aliases[variant] = canonical
        aliases.setdefault(canonical, canonical)
    return aliases


def match_value(kind: str, predicted: Any, truth: Any, rule: MatchRule | None = None) -> bool:
    rule = rule or MatchRule()
    if kind == "string":
        return rule.canonical(predicted) == rule.canonical(truth)
    if kind == "year":
        return abs(int(predicted) - int(truth)) <= rule.year_tolerance
    if kind == "integer":
        return int(predicted) == int(truth)
    if kind == "date":
        return str(predicted) == str(truth)
    return predicted == truth


# -- ground truth -------------------------------------------------------------------


@dataclass
class GroundTruth:
    """True values keyed by entity id; an attribute absent from a row is not applicable."""

    values: dict[str, dict[str, Any]]

    def get(self, entity_id: str, attribute: str):
        if entity_id not in self.values:
            raise MissingTruth(entity_id)
        row = self.values[entity_id]
        if attribute not in row:
            return None
        return row[attribute]

    def applicable(self, entity_id: str, attribute: str) -> bool:
        return attribute in self.values.get(entity_id, {})


def load_ground_truth(csv_text: str, spec: TaskSpec, attributes: list[str] | None = None) -> GroundTruth:
    """Parse a truth CSV keyed by the task's entity key columns.

    Every cell must hold a value. The literal ``NA`` marks an attribute that
    does not apply to the entity (e.g. a death date for someone alive); such
    cells are left out of that attribute's tally.
    """
    header, rows = read_csv_rows(csv_text)
    attributes = attributes or list(spec.attribute_names)
    for col in list(spec.entity_key_columns) + attributes:
        if col not in header:
            raise MissingColumn(col)
    values: dict[str, dict[str, Any]] = {}
    for raw in rows:
        row = dict(zip(header, raw + [""] * (len(header) - len(raw))))
        eid = make_entity_id(row, spec.entity_key_columns)
        parsed = {}
        for name in attributes:
            text = row[name].strip()
            if not text:
                raise MissingTruth(eid, name)
            if text == NOT_APPLICABLE:
                continue
            try:
                parsed[name] = parse_value(spec.attribute(name), text)
            except SchemaViolation as exc:
                raise InvalidField("ground truth", f"{eid}/{name}: {exc.detail}") from None
        values[eid] = parsed
    return GroundTruth(values)


# -- counting -----------------------------------------------------------------------


@dataclass(frozen=True)
class EvalCell:
    attribute: str
    n_total: int
    n_found: int
    k_correct: int

    def __post_init__(self) -> None:
        if not 0 <= self.k_correct <= self.n_found <= self.n_total:
            raise InvalidArgs(f"need 0 <= k <= n_found <= n_total, got {self}")


def tally(curated: CuratedTable, truth: GroundTruth, rule: MatchRule | None = None) -> list[EvalCell]:
    rule = rule or MatchRule()
    if not curated.rows:
        raise EvaluationError("curated table has no rows")
    cells = []
    for attr in curated.attributes:
        n_total = n_found = k = 0
        for row in curated.rows:
            if row.entity_id not in truth.values:
                raise MissingTruth(row.entity_id, attr.name)
            if not truth.applicable(row.entity_id, attr.name):
                continue
            n_total += 1
            cell = row.cells[attr.name]
            if cell.status != "found":
                continue
            n_found += 1
            if match_value(attr.value_kind, cell.value, truth.get(row.entity_id, attr.name), rule):
                k += 1
        cells.append(EvalCell(attr.name, n_total, n_found, k))
    return cells


def accuracy(cell: EvalCell, regime: str) -> Fraction:
    if regime == "include_not_found":
        denominator = cell.n_total
    elif regime == "found_only":
        denominator = cell.n_found
    else:
        raise InvalidArgs(f"unknown regime {regime!r}")
    if denominator == 0:
        raise EmptyDenominator(regime)
    return Fraction(cell.k_correct, denominator)


# -- Clopper-Pearson ----------------------------------------------------------------


def _log_binom_terms(n: int, p: float, lo_i: int, hi_i: int) -> list[float]:
    log_p = math.log(p)
    log_q = math.log1p(-p)
    lg_n1 = math.lgamma(n + 1)
    return [
        lg_n1 - math.lgamma(i + 1) - math.lgamma(n - i + 1) + i * log_p + (n - i) * log_q
        for i in range(lo_i, hi_i + 1)
    ]


def _log_sum_exp(terms: list[float]) -> float:
    m = max(terms)
    return m + math.log(math.fsum(math.exp(t - m) for t in terms))


def log_upper_tail(k: int, n: int, p: float) -> float:
    """log P[Bin(n, p) >= k] for 0 < p < 1."""
    return _log_sum_exp(_log_binom_terms(n, p, k, n))


def log_lower_tail(k: int, n: int, p: float) -> float:
    """log P[Bin(n, p) <= k] for 0 < p < 1."""
    return _log_sum_exp(_log_binom_terms(n, p, 0, k))


def _bisect(f_increasing, target: float, tol: float) -> float:
    lo, hi = 0.0, 1.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if f_increasing(mid) < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def clopper_pearson(k: int, n: int, alpha: float = 0.05, tol: float = CP_TOLERANCE) -> tuple[float, float]:
    """Exact two-sided (1 - alpha) interval for a binomial proportion k/n.

    The lower bound solves P[Bin(n,p) >= k] = alpha/2 and the upper bound
    solves P[Bin(n,p) <= k] = alpha/2; the bounds are 0 and 1 at k=0 and k=n.
    """
    if isinstance(k, bool) or isinstance(n, bool) or int(k) != k or int(n) != n:
        raise InvalidArgs("k and n must be integers")
    k, n = int(k), int(n)
    if n < 1 or not 0 <= k <= n:
        raise InvalidArgs(f"need n >= 1 and 0 <= k <= n, got k={k}, n={n}")
    if not 0.0 < alpha < 1.0:
        raise InvalidArgs(f"alpha must lie in (0, 1), got {alpha}")
    target = math.log(alpha / 2.0)
    if k == 0:
        lo = 0.0
    else:
        lo = _bisect(lambda p: log_upper_tail(k, n, p), target, tol)
    if k == n:
        hi = 1.0
    else:
        # lower tail decreases in p; bisect on its negation
        hi = _bisect(lambda p: -log_lower_tail(k, n, p), -target, tol)
    phat = k / n
    return min(lo, phat), max(hi, phat)


# -- report -------------------------------------------------------------------------


@dataclass(frozen=True)
class RegimeScore:
    attribute: str
    regime: str
    k: int
    n: int
    accuracy: Fraction | None
    ci_low: float | None
    ci_high: float | None

    @property
    def defined(self) -> bool:
        return self.accuracy is not None

    def to_dict(self) -> dict:
        return {
            "attribute": self.attribute,
            "regime": self.regime,
            "k": self.k,
            "n": self.n,
            "accuracy": None if self.accuracy is None else float(self.accuracy),
            "accuracy_exact": None if self.accuracy is None else f"{self.accuracy.numerator}/{self.accuracy.denominator}",
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "defined": self.defined,
        }


@dataclass
class EvalReport:
    alpha: float
    scores: list[RegimeScore]
    cells: list[EvalCell]
    baseline: bool = False
    notes: list[str] = field(default_factory=list)

    def score(self, attribute: str, regime: str) -> RegimeScore:
        for s in self.scores:
            if s.attribute == attribute and s.regime == regime:
                return s
        raise KeyError((attribute, regime))

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "confidence": 1 - self.alpha,
            "interval": "clopper-pearson",
            "baseline": self.baseline,
            "notes": self.notes,
            "cells": [vars(c) for c in self.cells],
            "scores": [s.to_dict() for s in self.scores],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_text(self) -> str:
        header = ("attribute", "regime", "k/n", "accuracy", f"{round((1 - self.alpha) * 100, 4):g}% CI")
        lines = []
        for s in self.scores:
            if s.defined:
                acc = f"{float(s.accuracy):.4f}"
                ci = f"[{s.ci_low:.4f}, {s.ci_high:.4f}]"
            else:
                acc, ci = "undefined", "-"
            lines.append((s.attribute, s.regime, f"{s.k}/{s.n}", acc, ci))
        widths = [max(len(str(r[i])) for r in [header] + lines) for i in range(len(header))]
        out = ["  ".join(str(v).ljust(w) for v, w in zip(row, widths)).rstrip() for row in [header] + lines]
        if self.baseline:
            out.insert(0, "baseline mode: web search disabled, internal knowledge only")
        out += self.notes
        return "\n".join(out)


def evaluate(
    curated: CuratedTable,
    truth: GroundTruth,
    rule: MatchRule | None = None,
    alpha: float = 0.05,
    *,
    baseline: bool = False,
) -> EvalReport:
    cells = tally(curated, truth, rule)
    scores = []
    notes = []
    for cell in cells:
        for regime in REGIMES:
            n = cell.n_total if regime == "include_not_found" else cell.n_found
            if n == 0:
                scores.append(RegimeScore(cell.attribute, regime, cell.k_correct, 0, None, None, None))
                if regime == "found_only":
                    notes.append(f"{cell.attribute}: no found entries; found-only accuracy undefined")
                continue
            acc = accuracy(cell, regime)
            lo, hi = clopper_pearson(cell.k_correct, n, alpha)
            scores.append(RegimeScore(cell.attribute, regime, cell.k_correct, n, acc, lo, hi))
    return EvalReport(alpha, scores, cells, baseline, notes)
