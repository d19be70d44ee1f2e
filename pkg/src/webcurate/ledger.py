"""Money accounting for curation runs.

All amounts are integer micro-dollars. Floats never enter a money path:
prices are parsed from text through :class:`decimal.Decimal`, products are
computed on integers and rounded half-up once per component.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from decimal import ROUND_DOWN, ROUND_HALF_UP, Decimal, InvalidOperation
from functools import total_ordering
from pathlib import Path
from typing import Iterable, Mapping

from .errors import DivisionByZeroRecords, InvalidField
from .gateway import Usage

MICRO = 1_000_000
SEARCH_DOMINANCE_THRESHOLD = Decimal("0.9")


@total_ordering
@dataclass(frozen=True)
class Money:
    micro_dollars: int = 0

    def __post_init__(self) -> None:
        if not isinstance(self.micro_dollars, int) or isinstance(self.micro_dollars, bool):
            raise TypeError("Money holds an integer number of micro-dollars")

    @classmethod
    def parse(cls, amount) -> "Money":
        """Build from a dollar amount given as str, int or Decimal ("0.25", 20, "$1.50")."""
        if isinstance(amount, Money):
            return amount
        if isinstance(amount, bool):
            raise InvalidField("money", f"{amount!r} is not an amount")
        if isinstance(amount, float):
            # YAML scalars like 0.25 arrive as floats; their repr is the literal the user typed.
            amount = repr(amount)
        text = str(amount).strip().lstrip("$")
        try:
            dollars = Decimal(text)
        except InvalidOperation:
            raise InvalidField("money", f"{amount!r} is not a decimal amount") from None
        micro = dollars * MICRO
        if micro != micro.to_integral_value():
            raise InvalidField("money", f"{amount!r} is finer than one micro-dollar")
        return cls(int(micro))

    def __add__(self, other: "Money") -> "Money":
        if not isinstance(other, Money):
            return NotImplemented
        return Money(self.micro_dollars + other.micro_dollars)

    def __radd__(self, other):
        if other == 0:
            return self
        return NotImplemented

    def __lt__(self, other: "Money") -> bool:
        if not isinstance(other, Money):
            return NotImplemented
        return self.micro_dollars < other.micro_dollars

    @property
    def dollars(self) -> Decimal:
        return Decimal(self.micro_dollars) / MICRO

    def decimal_text(self) -> str:
        """Shortest exact dollar text, e.g. ``"0.25"`` or ``"20"``."""
        text = format(self.dollars.normalize(), "f")
        return text

    def render(self, *, floor: bool = False, places: int = 2) -> str:
        rounding = ROUND_DOWN if floor else ROUND_HALF_UP
        quantum = Decimal(1).scaleb(-places)
        value = self.dollars.quantize(quantum, rounding=rounding)
        sign = "-" if value < 0 else ""
        return f"{sign}${abs(value)}"

    def render_micro(self) -> str:
        return self.render(places=6)

    def __str__(self) -> str:
        return self.render()


def _div_half_up(numerator: int, denominator: int) -> int:
    q, r = divmod(numerator, denominator)
    if 2 * r >= denominator:
        q += 1
    return q


@dataclass(frozen=True)
class PricingTable:
    input_per_million_tokens: Money = Money()
    output_per_million_tokens: Money = Money()
    per_search_call: Money = Money()

    def __post_init__(self) -> None:
        for name in ("input_per_million_tokens", "output_per_million_tokens", "per_search_call"):
            if getattr(self, name).micro_dollars < 0:
                raise InvalidField(f"pricing.{name}", "must be >= 0")

    @classmethod
    def from_mapping(cls, data: Mapping) -> "PricingTable":
        return cls(**{k: Money.parse(v) for k, v in data.items()})

    def to_mapping(self) -> dict[str, str]:
        return {
            "input_per_million_tokens": self.input_per_million_tokens.decimal_text(),
            "output_per_million_tokens": self.output_per_million_tokens.decimal_text(),
            "per_search_call": self.per_search_call.decimal_text(),
        }


@dataclass(frozen=True)
class CostRecord:
    entity_id: str
    input_cost: Money
    output_cost: Money
    search_cost: Money

    @property
    def total(self) -> Money:
        return self.input_cost + self.output_cost + self.search_cost

    def to_dict(self) -> dict:
        return {
            "entity_id": self.entity_id,
            "input_cost_micro": self.input_cost.micro_dollars,
            "output_cost_micro": self.output_cost.micro_dollars,
            "search_cost_micro": self.search_cost.micro_dollars,
            "total_micro": self.total.micro_dollars,
        }


def cost_of(usage, pricing: PricingTable, entity_id: str = "") -> CostRecord:
    """Price one usage bundle.

    Token costs are ``tokens * price_per_million / 1e6`` rounded half-up to the
    micro-dollar, separately for input and output; search cost is exact.
    """
    input_cost = _div_half_up(usage.input_tokens * pricing.input_per_million_tokens.micro_dollars, MICRO)
    output_cost = _div_half_up(usage.output_tokens * pricing.output_per_million_tokens.micro_dollars, MICRO)
    search_cost = usage.search_calls * pricing.per_search_call.micro_dollars
    return CostRecord(entity_id, Money(input_cost), Money(output_cost), Money(search_cost))


def human_baseline(wage_per_hour: Money, records_per_hour: int) -> Money:
    """Labor cost of one manually curated record, truncated to the micro-dollar."""
    if records_per_hour <= 0:
        raise DivisionByZeroRecords()
    return Money(wage_per_hour.micro_dollars // records_per_hour)


def _nearest_rank(sorted_values: list[int], pct: int) -> int:
    # nearest-rank: ceil(pct/100 * n), 1-based
    n = len(sorted_values)
    rank = -(-pct * n // 100)
    return sorted_values[max(rank, 1) - 1]


@dataclass(frozen=True)
class CostReport:
    n: int
    mean: Money
    median: Money
    p90: Money
    total: Money
    search_total: Money
    human_baseline_per_record: Money = Money()
    records: tuple[CostRecord, ...] = field(default=(), repr=False, compare=False)

    @property
    def search_share(self) -> Decimal:
        if self.total.micro_dollars <= 0:
            return Decimal(0)
        return Decimal(self.search_total.micro_dollars) / Decimal(self.total.micro_dollars)

    @property
    def search_dominant(self) -> bool:
        return self.search_share > SEARCH_DOMINANCE_THRESHOLD

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "mean_micro": self.mean.micro_dollars,
            "median_micro": self.median.micro_dollars,
            "p90_micro": self.p90.micro_dollars,
            "total_micro": self.total.micro_dollars,
            "search_total_micro": self.search_total.micro_dollars,
            "search_share": str(self.search_share.quantize(Decimal("0.000001"))),
            "search_dominant": self.search_dominant,
            "human_baseline_per_record_micro": self.human_baseline_per_record.micro_dollars,
            "human_baseline_rendered": {
                "floor_cents": self.human_baseline_per_record.render(floor=True),
                "half_up_cents": self.human_baseline_per_record.render(),
            },
            "records": [r.to_dict() for r in self.records],
        }

    def to_text(self) -> str:
        share = self.search_share * 100
        rows = [
            ("records", str(self.n)),
            ("total", self.total.render()),
            ("mean per record", self.mean.render()),
            ("median per record", self.median.render()),
            ("p90 per record", self.p90.render()),
            ("search share", f"{share.quantize(Decimal('0.1'))}%"
             + ("  (search is the dominant cost)" if self.search_dominant else "")),
            ("human baseline per record",
             f"{self.human_baseline_per_record.render(floor=True)} "
             f"(half-up {self.human_baseline_per_record.render()})"),
        ]
        width = max(len(k) for k, _ in rows)
        return "\n".join(f"{k.ljust(width)}  {v}" for k, v in rows)


def aggregate(records: Iterable[CostRecord], human_baseline_per_record: Money = Money()) -> CostReport:
    records = tuple(records)
    n = len(records)
    if n == 0:
        return CostReport(0, Money(), Money(), Money(), Money(), Money(), human_baseline_per_record)
    totals = sorted(r.total.micro_dollars for r in records)
    total = sum(totals)
    search_total = sum(r.search_cost.micro_dollars for r in records)
    return CostReport(
        n=n,
        mean=Money(_div_half_up(total, n)),
        median=Money(_nearest_rank(totals, 50)),
        p90=Money(_nearest_rank(totals, 90)),
        total=Money(total),
        search_total=Money(search_total),
        human_baseline_per_record=human_baseline_per_record,
        records=records,
    )


def read_telemetry(path: Path) -> list[dict]:
    """Load ``telemetry.jsonl``; a torn final line (crash mid-append) is ignored."""
    lines = []
    if not Path(path).exists():
        return lines
    with open(path, encoding="utf-8") as fh:
        for raw in fh:
            raw = raw.strip()
            if not raw:
                continue
            try:
                lines.append(json.loads(raw))
            except json.JSONDecodeError:
                continue
    return lines


def costs_from_telemetry(lines: Iterable[Mapping], pricing: PricingTable) -> list[CostRecord]:
    """Per-entity cost records, in first-seen order, summing every call an entity made."""
    per_entity: dict[str, Usage] = {}
    for line in lines:
        eid = line["entity_id"]
        u = Usage(line.get("input_tokens", 0), line.get("output_tokens", 0), line.get("search_calls", 0))
        per_entity[eid] = per_entity.get(eid, Usage()) + u
    return [cost_of(u, pricing, eid) for eid, u in per_entity.items()]
