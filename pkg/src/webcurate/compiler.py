"""Merge per-entity results into one curated table and apply human overrides.

Column layout of ``curated.csv``: the entity key columns, then for every
attribute three columns ``<attr>``, ``<attr>__status`` and
``<attr>__provenance``. Rows follow the original entity order.
"""

from __future__ import annotations

import copy
import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable

from .engine import (
    MANIFEST,
    TELEMETRY,
    AttributeResult,
    EntityResult,
    _atomic_write_text,
    _check_value,
    _now_iso,
    failed_path,
    load_run_inputs,
    result_path,
    write_json_atomic,
)
from .errors import (
    DuplicateOverride,
    IncompleteRun,
    InvalidField,
    SchemaViolation,
    UnknownAttribute,
    UnknownEntity,
)
from .ledger import aggregate, costs_from_telemetry, read_telemetry
from .taskconfig import AttributeSpec, TaskSpec, read_csv_rows

CURATED_CSV = "curated.csv"
CURATED_JSONL = "curated.jsonl"
OVERRIDES_CSV = "overrides.csv"
OVERRIDE_COLUMNS = ("entity_id", "attribute", "status", "value")

STATUSES = ("found", "not_found", "failed")
PROVENANCES = ("model", "human", "failed")


def format_value(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


_TRUE = {"true", "yes", "1"}
_FALSE = {"false", "no", "0"}


def parse_value(attr: AttributeSpec, text: str) -> Any:
    """Typed value from its text form; raises :class:`SchemaViolation` if it does not fit the kind."""
    text = text.strip()
    kind = attr.value_kind
    if kind in ("integer", "year"):
        try:
            value: Any = int(text)
        except ValueError:
            raise SchemaViolation(attr.name, f"{text!r} is not an integer") from None
    elif kind == "boolean":
        low = text.lower()
        if low in _TRUE:
            value = True
        elif low in _FALSE:
            value = False
        else:
            raise SchemaViolation(attr.name, f"{text!r} is not true/false")
    else:
        value = text
    return _check_value(attr, value)


@dataclass
class Cell:
    value: Any
    status: str
    provenance: str


@dataclass
class CuratedRow:
    entity_id: str
    keys: dict[str, str]
    cells: dict[str, Cell]


@dataclass
class CuratedTable:
    key_columns: tuple[str, ...]
    attributes: tuple[AttributeSpec, ...]
    rows: list[CuratedRow] = field(default_factory=list)

    @property
    def attribute_names(self) -> list[str]:
        return [a.name for a in self.attributes]

    @property
    def columns(self) -> list[str]:
        cols = list(self.key_columns)
        for name in self.attribute_names:
            cols += [name, f"{name}__status", f"{name}__provenance"]
        return cols

    def attribute(self, name: str) -> AttributeSpec:
        for a in self.attributes:
            if a.name == name:
                return a
        raise UnknownAttribute(name)

    def row(self, entity_id: str) -> CuratedRow:
        for r in self.rows:
            if r.entity_id == entity_id:
                return r
        raise UnknownEntity(entity_id)

    def to_csv_text(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.columns)
        for r in self.rows:
            line = [r.keys[c] for c in self.key_columns]
            for name in self.attribute_names:
                cell = r.cells[name]
                line += [format_value(cell.value), cell.status, cell.provenance]
            writer.writerow(line)
        return buf.getvalue()

    def to_jsonl_text(self) -> str:
        lines = []
        for r in self.rows:
            doc = {
                "entity_id": r.entity_id,
                "keys": r.keys,
                "attributes": {
                    name: {"value": c.value, "status": c.status, "provenance": c.provenance}
                    for name, c in r.cells.items()
                },
            }
            lines.append(json.dumps(doc, sort_keys=True, ensure_ascii=False))
        return "".join(line + "\n" for line in lines)

    def unresolved(self) -> list[tuple[str, str]]:
        """Cells still needing a human: model not_found or engine failure, in entity order."""
        out = []
        for r in self.rows:
            for name in self.attribute_names:
                c = r.cells[name]
                if c.provenance == "human":
                    continue
                if c.status == "not_found" or c.provenance == "failed":
                    out.append((r.entity_id, name))
        return out

    @classmethod
    def from_csv_text(cls, text: str, spec: TaskSpec) -> "CuratedTable":
        header, data = read_csv_rows(text)
        table = cls(tuple(spec.entity_key_columns), tuple(spec.attributes))
        if header != table.columns:
            raise InvalidField("curated table", f"columns {header} do not match task {table.columns}")
        for raw in data:
            values = dict(zip(header, raw))
            keys = {c: values[c] for c in spec.entity_key_columns}
            cells = {}
            for attr in spec.attributes:
                status = values[f"{attr.name}__status"]
                prov = values[f"{attr.name}__provenance"]
                if status not in STATUSES or prov not in PROVENANCES:
                    raise InvalidField("curated table", f"bad status/provenance for {attr.name}")
                value = parse_value(attr, values[attr.name]) if status == "found" else None
                cells[attr.name] = Cell(value, status, prov)
            eid = "|".join(keys[c] for c in spec.entity_key_columns)
            table.rows.append(CuratedRow(eid, keys, cells))
        return table


def build_table(spec: TaskSpec, entities, results: dict[str, EntityResult | None]) -> CuratedTable:
    """Assemble rows in entity order; ``None`` marks an engine-failed entity."""
    table = CuratedTable(tuple(spec.entity_key_columns), tuple(spec.attributes))
    for record in entities:
        keys = {c: record.values[c] for c in spec.entity_key_columns}
        res = results[record.entity_id]
        cells = {}
        for attr in spec.attributes:
            if res is None:
                cells[attr.name] = Cell(None, "failed", "failed")
            else:
                ar: AttributeResult = res.result_for(attr.name)
                cells[attr.name] = Cell(ar.value if ar.found else None, ar.status, res.provenance)
        table.rows.append(CuratedRow(record.entity_id, keys, cells))
    return table


# -- overrides --------------------------------------------------------------------


@dataclass(frozen=True)
class Override:
    entity_id: str
    attribute: str
    value: str | None  # None means a confirmed not_found

    @property
    def pair(self) -> tuple[str, str]:
        return (self.entity_id, self.attribute)


def read_overrides(path: Path) -> list[Override]:
    path = Path(path)
    if not path.exists():
        return []
    header, data = read_csv_rows(path.read_text(encoding="utf-8"))
    for col in OVERRIDE_COLUMNS:
        if col not in header:
            raise InvalidField("overrides.csv", f"missing column {col}")
    out = []
    for raw in data:
        row = dict(zip(header, raw + [""] * (len(header) - len(raw))))
        status = row["status"].strip()
        if status not in ("found", "not_found"):
            raise InvalidField("overrides.csv", f"status must be found or not_found, got {status!r}")
        out.append(Override(row["entity_id"], row["attribute"], row["value"] if status == "found" else None))
    return out


def overrides_to_csv_text(overrides: Iterable[Override]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(OVERRIDE_COLUMNS)
    for o in overrides:
        writer.writerow([o.entity_id, o.attribute, "not_found" if o.value is None else "found", o.value or ""])
    return buf.getvalue()


def write_overrides(path: Path, overrides: Iterable[Override]) -> None:
    _atomic_write_text(Path(path), overrides_to_csv_text(overrides))


def apply_overrides(table: CuratedTable, overrides: Iterable[Override]) -> CuratedTable:
    """Return a copy of ``table`` with every override applied and marked as human."""
    overrides = list(overrides)
    index = {r.entity_id: r for r in table.rows}
    names = set(table.attribute_names)
    seen: set[tuple[str, str]] = set()
    typed = []
    for o in overrides:
        if o.entity_id not in index:
            raise UnknownEntity(o.entity_id)
        if o.attribute not in names:
            raise UnknownAttribute(o.attribute)
        if o.pair in seen:
            raise DuplicateOverride(o.pair)
        seen.add(o.pair)
        value = None if o.value is None else parse_value(table.attribute(o.attribute), o.value)
        typed.append((o, value))

    out = copy.deepcopy(table)
    out_index = {r.entity_id: r for r in out.rows}
    for o, value in typed:
        status = "not_found" if o.value is None else "found"
        out_index[o.entity_id].cells[o.attribute] = Cell(value, status, "human")
    return out


# -- compile ----------------------------------------------------------------------


def collect_results(run_dir: Path, spec: TaskSpec, entities) -> dict[str, EntityResult | None]:
    results: dict[str, EntityResult | None] = {}
    missing = []
    for eid in entities.ids:
        path = result_path(run_dir, eid)
        if path.exists():
            with open(path, encoding="utf-8") as fh:
                res = EntityResult.from_dict(json.load(fh))
            if set(r.attribute for r in res.attribute_results) != set(spec.attribute_names):
                raise InvalidField(str(path), "result attributes do not match the task")
            results[eid] = res
        elif failed_path(run_dir, eid).exists():
            results[eid] = None
        else:
            missing.append(eid)
    if missing:
        raise IncompleteRun(missing)
    return results


def compile_run(run_dir: str | Path, *, use_overrides: bool = True, write: bool = True) -> CuratedTable:
    """Build the curated table for a settled run and write ``curated.csv`` / ``curated.jsonl``.

    If ``overrides.csv`` sits in the run directory it is applied on top of the
    model results (disable with ``use_overrides=False``).
    """
    run_dir = Path(run_dir)
    spec, entities, manifest = load_run_inputs(run_dir)
    table = build_table(spec, entities, collect_results(run_dir, spec, entities))
    overrides = read_overrides(run_dir / OVERRIDES_CSV) if use_overrides else []
    if overrides:
        table = apply_overrides(table, overrides)
    if write:
        _atomic_write_text(run_dir / CURATED_CSV, table.to_csv_text())
        _atomic_write_text(run_dir / CURATED_JSONL, table.to_jsonl_text())
        report = aggregate(costs_from_telemetry(read_telemetry(run_dir / TELEMETRY), spec.pricing))
        cells = [c for r in table.rows for c in r.cells.values()]
        manifest["compiled"] = {
            "compiled_at": _now_iso(),
            "rows": len(table.rows),
            "failed_entities": sum(1 for r in table.rows if all(c.provenance == "failed" for c in r.cells.values())),
            "found_cells": sum(c.status == "found" for c in cells),
            "not_found_cells": sum(c.status == "not_found" for c in cells),
            "human_cells": sum(c.provenance == "human" for c in cells),
            "overrides": len(overrides),
            "total_cost_micro": report.total.micro_dollars,
        }
        write_json_atomic(run_dir / MANIFEST, manifest)
    return table
