"""Task descriptor (YAML) and entity table (CSV) parsing, plus prompt rendering.

A task is fully described by two small files: the YAML descriptor that names
the attributes to curate, the prompts and the model settings, and the CSV that
lists one entity per row. Both are validated strictly; unknown YAML keys are
errors so that typos in generated configs fail loudly.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import re
from dataclasses import dataclass, field, replace
from typing import Any, Mapping

import yaml

from .errors import (
    DuplicateAttribute,
    DuplicateEntityId,
    EmptyEntitySet,
    InvalidField,
    InvalidPlaceholder,
    MalformedYaml,
    MissingColumn,
    MissingField,
    UnknownField,
    UnknownValueKind,
)
from .gateway import build_output_schema
from .ledger import PricingTable

VALUE_KINDS = ("string", "integer", "year", "date", "boolean", "enum")
ENTITY_ID_SEP = "|"

_ATTR_NAME = re.compile(r"[a-z][a-z0-9_]*\Z")
_PLACEHOLDER = re.compile(r"\{([^{}]*)\}")
_COLUMN_NAME = re.compile(r"[A-Za-z_][A-Za-z0-9_]*\Z")

_TOP_KEYS = ("task_name", "system_prompt", "entity_key_columns", "attributes", "model", "execution", "pricing")
_ATTR_KEYS = ("name", "question", "kind", "choices", "allow_not_found")
_MODEL_KEYS = ("id", "search_enabled", "max_output_tokens")
_EXEC_KEYS = ("max_parallel", "requests_per_minute", "max_attempts")
_PRICING_KEYS = ("input_per_million_tokens", "output_per_million_tokens", "per_search_call")


@dataclass(frozen=True)
class AttributeSpec:
    name: str
    question_template: str
    value_kind: str = "string"
    enum_choices: tuple[str, ...] = ()
    allow_not_found: bool = True

    def __post_init__(self) -> None:
        if not isinstance(self.name, str) or not _ATTR_NAME.match(self.name):
            raise InvalidField("attributes.name", f"{self.name!r} must match [a-z][a-z0-9_]*")
        if "__" in self.name:
            raise InvalidField("attributes.name", f"{self.name!r} may not contain '__'")
        if self.value_kind not in VALUE_KINDS:
            raise UnknownValueKind(str(self.value_kind))
        if not isinstance(self.question_template, str) or not self.question_template.strip():
            raise MissingField(f"attributes[{self.name}].question")
        if self.value_kind == "enum":
            if not self.enum_choices:
                raise MissingField(f"attributes[{self.name}].choices")
            if len(set(self.enum_choices)) != len(self.enum_choices):
                raise InvalidField(f"attributes[{self.name}].choices", "choices must be distinct")
        elif self.enum_choices:
            raise InvalidField(f"attributes[{self.name}].choices", "only enum attributes take choices")
        template_placeholders(self.question_template)

    def to_dict(self) -> dict:
        out: dict[str, Any] = {"name": self.name, "question": self.question_template, "kind": self.value_kind}
        if self.enum_choices:
            out["choices"] = list(self.enum_choices)
        out["allow_not_found"] = self.allow_not_found
        return out


@dataclass(frozen=True)
class TaskSpec:
    task_name: str
    system_prompt: str
    entity_key_columns: tuple[str, ...]
    attributes: tuple[AttributeSpec, ...]
    model_id: str
    pricing: PricingTable
    search_enabled: bool = True
    max_output_tokens: int = 4096
    max_parallel: int = 8
    requests_per_minute: int = 60
    max_attempts: int = 3

    def __post_init__(self) -> None:
        if not self.attributes:
            raise MissingField("attributes")
        if not self.entity_key_columns:
            raise MissingField("entity_key_columns")
        seen: set[str] = set()
        for attr in self.attributes:
            if attr.name in seen:
                raise DuplicateAttribute(attr.name)
            seen.add(attr.name)
        if len(set(self.entity_key_columns)) != len(self.entity_key_columns):
            raise InvalidField("entity_key_columns", "column names must be distinct")
        clash = seen.intersection(self.entity_key_columns)
        if clash:
            raise InvalidField("attributes", f"attribute names collide with key columns: {sorted(clash)}")
        for name in ("max_output_tokens", "max_parallel", "requests_per_minute", "max_attempts"):
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool) or value <= 0:
                raise InvalidField(name, f"{value!r} is not a positive integer")
        template_placeholders(self.system_prompt)

    @property
    def attribute_names(self) -> tuple[str, ...]:
        return tuple(a.name for a in self.attributes)

    def attribute(self, name: str) -> AttributeSpec:
        for a in self.attributes:
            if a.name == name:
                return a
        raise KeyError(name)

    def required_columns(self) -> tuple[str, ...]:
        """Key columns first, then every column a prompt template refers to."""
        cols = list(self.entity_key_columns)
        for template in [self.system_prompt] + [a.question_template for a in self.attributes]:
            for name in template_placeholders(template):
                if name not in cols:
                    cols.append(name)
        return tuple(cols)

    def to_dict(self) -> dict:
        return {
            "task_name": self.task_name,
            "system_prompt": self.system_prompt,
            "entity_key_columns": list(self.entity_key_columns),
            "attributes": [a.to_dict() for a in self.attributes],
            "model": {
                "id": self.model_id,
                "search_enabled": self.search_enabled,
                "max_output_tokens": self.max_output_tokens,
            },
            "execution": {
                "max_parallel": self.max_parallel,
                "requests_per_minute": self.requests_per_minute,
                "max_attempts": self.max_attempts,
            },
            "pricing": self.pricing.to_mapping(),
        }

    def to_yaml(self) -> str:
        return serialize_task_spec(self)

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"), ensure_ascii=False)

    def with_changes(self, **changes) -> "TaskSpec":
        return replace(self, **changes)


@dataclass(frozen=True)
class EntityRecord:
    entity_id: str
    values: Mapping[str, str] = field(hash=False)

    def __getitem__(self, column: str) -> str:
        return self.values[column]


@dataclass(frozen=True)
class EntitySet:
    columns: tuple[str, ...]
    rows: tuple[EntityRecord, ...]

    def __len__(self) -> int:
        return len(self.rows)

    def __iter__(self):
        return iter(self.rows)

    @property
    def ids(self) -> list[str]:
        return [r.entity_id for r in self.rows]

    def by_id(self) -> dict[str, EntityRecord]:
        return {r.entity_id: r for r in self.rows}

    def to_csv_text(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.columns)
        for row in self.rows:
            writer.writerow([row.values[c] for c in self.columns])
        return buf.getvalue()

    def permuted(self, order: list[int]) -> "EntitySet":
        return EntitySet(self.columns, tuple(self.rows[i] for i in order))


@dataclass(frozen=True)
class PromptBundle:
    system: str
    user: str
    output_schema: dict = field(hash=False)


# -- templates ------------------------------------------------------------------


def template_placeholders(template: str) -> list[str]:
    """Column names referenced by ``{column}`` placeholders, in order of first use."""
    names: list[str] = []
    for m in _PLACEHOLDER.finditer(template):
        name = m.group(1)
        if not _COLUMN_NAME.match(name):
            raise InvalidPlaceholder(template, name)
        if name not in names:
            names.append(name)
    return names


def render_template(template: str, values: Mapping[str, str]) -> str:
    """Single-pass substitution: substituted text is never scanned again."""

    def sub(m: re.Match) -> str:
        name = m.group(1)
        if name not in values:
            raise InvalidPlaceholder(template, name)
        return values[name]

    return _PLACEHOLDER.sub(sub, template)


# -- YAML -------------------------------------------------------------------------


def _check_keys(data: Mapping, allowed: tuple[str, ...], where: str) -> None:
    for key in data:
        if key not in allowed:
            raise UnknownField(str(key), where)


def _section(data: Mapping, key: str, required: bool) -> Mapping:
    value = data.get(key)
    if value is None:
        if required:
            raise MissingField(key)
        return {}
    if not isinstance(value, Mapping):
        raise InvalidField(key, "expected a mapping")
    return value


def _positive_int(value, name: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int) or value <= 0:
        raise InvalidField(name, f"{value!r} is not a positive integer")
    return value


def _boolean(value, name: str) -> bool:
    if not isinstance(value, bool):
        raise InvalidField(name, f"{value!r} is not a boolean")
    return value


def _text(data: Mapping, key: str, where: str = "") -> str:
    value = data.get(key)
    label = f"{where}{key}"
    if value is None or (isinstance(value, str) and not value.strip()):
        raise MissingField(label)
    if not isinstance(value, str):
        raise InvalidField(label, "expected text")
    return value


def _parse_attribute(item, index: int) -> AttributeSpec:
    if not isinstance(item, Mapping):
        raise InvalidField(f"attributes[{index}]", "expected a mapping")
    _check_keys(item, _ATTR_KEYS, f"attributes[{index}]")
    name = _text(item, "name", f"attributes[{index}].")
    kind = item.get("kind", "string")
    if kind not in VALUE_KINDS:
        raise UnknownValueKind(str(kind))
    choices = item.get("choices") or ()
    if not isinstance(choices, (list, tuple)) or not all(isinstance(c, str) for c in choices):
        raise InvalidField(f"attributes[{name}].choices", "expected a list of strings")
    return AttributeSpec(
        name=name,
        question_template=_text(item, "question", f"attributes[{name}]."),
        value_kind=kind,
        enum_choices=tuple(choices),
        allow_not_found=_boolean(item.get("allow_not_found", True), f"attributes[{name}].allow_not_found"),
    )


def task_spec_from_dict(data: Mapping) -> TaskSpec:
    if not isinstance(data, Mapping):
        raise MalformedYaml("task descriptor must be a YAML mapping")
    _check_keys(data, _TOP_KEYS, "task descriptor")

    task_name = _text(data, "task_name")
    if not _ATTR_NAME.match(task_name):
        raise InvalidField("task_name", f"{task_name!r} must match [a-z][a-z0-9_]*")
    system_prompt = _text(data, "system_prompt")

    keys = data.get("entity_key_columns")
    if isinstance(keys, str):
        keys = [keys]
    if not keys:
        raise MissingField("entity_key_columns")
    if not isinstance(keys, list) or not all(isinstance(k, str) and k for k in keys):
        raise InvalidField("entity_key_columns", "expected a list of column names")

    raw_attrs = data.get("attributes")
    if not raw_attrs:
        raise MissingField("attributes")
    if not isinstance(raw_attrs, list):
        raise InvalidField("attributes", "expected a list")
    attributes = []
    seen: set[str] = set()
    for i, item in enumerate(raw_attrs):
        attr = _parse_attribute(item, i)
        if attr.name in seen:
            raise DuplicateAttribute(attr.name)
        seen.add(attr.name)
        attributes.append(attr)

    model = _section(data, "model", required=True)
    _check_keys(model, _MODEL_KEYS, "model")
    execution = _section(data, "execution", required=False)
    _check_keys(execution, _EXEC_KEYS, "execution")
    pricing = _section(data, "pricing", required=True)
    _check_keys(pricing, _PRICING_KEYS, "pricing")
    for key in _PRICING_KEYS:
        if pricing.get(key) is None:
            raise MissingField(f"pricing.{key}")

    return TaskSpec(
        task_name=task_name,
        system_prompt=system_prompt,
        entity_key_columns=tuple(keys),
        attributes=tuple(attributes),
        model_id=_text(model, "id", "model."),
        search_enabled=_boolean(model.get("search_enabled", True), "model.search_enabled"),
        max_output_tokens=_positive_int(model.get("max_output_tokens", 4096), "model.max_output_tokens"),
        max_parallel=_positive_int(execution.get("max_parallel", 8), "execution.max_parallel"),
        requests_per_minute=_positive_int(execution.get("requests_per_minute", 60), "execution.requests_per_minute"),
        max_attempts=_positive_int(execution.get("max_attempts", 3), "execution.max_attempts"),
        pricing=PricingTable.from_mapping(pricing),
    )


def parse_task_spec(yaml_text: str) -> TaskSpec:
    try:
        data = yaml.safe_load(yaml_text)
    except yaml.YAMLError as exc:
        raise MalformedYaml(str(exc)) from None
    if data is None:
        raise MissingField("task_name", "empty document")
    return task_spec_from_dict(data)


def serialize_task_spec(spec: TaskSpec) -> str:
    return yaml.safe_dump(spec.to_dict(), sort_keys=False, allow_unicode=True, width=1000)


# -- CSV --------------------------------------------------------------------------


def read_csv_rows(csv_text: str) -> tuple[list[str], list[list[str]]]:
    """Header and data rows of an RFC 4180 text; blank lines are skipped."""
    if csv_text.startswith("\ufeff"):
        csv_text = csv_text[1:]
    reader = csv.reader(io.StringIO(csv_text, newline=""), strict=True)
    try:
        rows = [r for r in reader if r]
    except csv.Error as exc:
        raise InvalidField("csv", str(exc)) from None
    if not rows:
        raise MissingField("csv header")
    header = [h.strip() for h in rows[0]]
    if len(set(header)) != len(header) or any(not h for h in header):
        raise InvalidField("csv header", "column names must be non-empty and distinct")
    return header, rows[1:]


def make_entity_id(values: Mapping[str, str], key_columns) -> str:
    return ENTITY_ID_SEP.join(values[c] for c in key_columns)


def parse_entity_set(csv_text: str, spec: TaskSpec) -> EntitySet:
    header, data = read_csv_rows(csv_text)
    for col in spec.required_columns():
        if col not in header:
            raise MissingColumn(col)
    if not data:
        raise EmptyEntitySet()
    rows = []
    seen: set[str] = set()
    for lineno, raw in enumerate(data, start=2):
        if len(raw) > len(header):
            raise InvalidField("csv", f"row {lineno} has {len(raw)} fields, header has {len(header)}")
        values = dict(zip(header, raw + [""] * (len(header) - len(raw))))
        if all(not values[c].strip() for c in spec.entity_key_columns):
            raise InvalidField("csv", f"row {lineno} has empty key columns")
        entity_id = make_entity_id(values, spec.entity_key_columns)
        if entity_id in seen:
            raise DuplicateEntityId(entity_id)
        seen.add(entity_id)
        rows.append(EntityRecord(entity_id, values))
    return EntitySet(tuple(header), tuple(rows))


# -- prompts ----------------------------------------------------------------------

_KIND_HINTS = {
    "string": "text",
    "integer": "integer",
    "year": "four-digit year as an integer",
    "date": "calendar date as YYYY-MM-DD",
    "boolean": "true or false",
}

OUTPUT_INSTRUCTIONS = (
    "Reply with one JSON object keyed by attribute name. For each attribute give "
    '{"status": "found", "value": <value>} when you can determine it, or '
    '{"status": "not_found"} (with no value) when you cannot.'
)


def _kind_hint(attr: AttributeSpec) -> str:
    if attr.value_kind == "enum":
        return "one of: " + ", ".join(attr.enum_choices)
    return _KIND_HINTS[attr.value_kind]


def render_prompt(spec: TaskSpec, record: EntityRecord) -> PromptBundle:
    values = record.values
    lines = ["Entity:"]
    lines += [f"  {col}: {values[col]}" for col in values]
    lines += ["", "Determine the following attributes for this entity:"]
    for attr in spec.attributes:
        question = render_template(attr.question_template, values)
        suffix = "" if attr.allow_not_found else " (an answer is required)"
        lines.append(f"- {attr.name} [{_kind_hint(attr)}]{suffix}: {question}")
    lines += ["", OUTPUT_INSTRUCTIONS]
    return PromptBundle(
        system=render_template(spec.system_prompt, values),
        user="\n".join(lines),
        output_schema=build_output_schema(spec),
    )


def run_identity(spec: TaskSpec, entities: EntitySet) -> str:
    """SHA-256 over the canonical serializations of the task and the entity table."""
    h = hashlib.sha256()
    h.update(spec.canonical_json().encode("utf-8"))
    h.update(b"\x00")
    h.update(entities.to_csv_text().encode("utf-8"))
    return h.hexdigest()
