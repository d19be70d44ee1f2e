from __future__ import annotations

import re

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from webcurate.errors import (
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
from webcurate.ledger import PricingTable
from webcurate.taskconfig import (
    AttributeSpec,
    TaskSpec,
    make_entity_id,
    parse_entity_set,
    parse_task_spec,
    render_prompt,
    render_template,
    run_identity,
    serialize_task_spec,
    template_placeholders,
)

from conftest import load_task

BASE = """\
task_name: demo
system_prompt: You curate facts about {name}.
entity_key_columns: [name, year]
attributes:
  - name: birth_year
    question: When was {name} born?
    kind: year
  - name: field
    question: What field did {name} ({year}) work in?
    kind: enum
    choices: [physics, chemistry]
model:
  id: test-model
pricing:
  input_per_million_tokens: "1"
  output_per_million_tokens: "10"
  per_search_call: "0.01"
"""


def spec_from(text: str = BASE) -> TaskSpec:
    return parse_task_spec(text)


def test_defaults_filled():
    spec = spec_from()
    assert spec.search_enabled is True
    assert (spec.max_output_tokens, spec.max_parallel, spec.requests_per_minute, spec.max_attempts) == (4096, 8, 60, 3)
    assert spec.attribute("birth_year").allow_not_found is True
    assert spec.required_columns() == ("name", "year")


@pytest.mark.parametrize(
    "edit, error",
    [
        (lambda t: t.replace("model:\n  id: test-model\n", ""), MissingField),
        (lambda t: t + "extra: 1\n", UnknownField),
        (lambda t: t.replace("    kind: year\n", "    kind: year\n    unit: a\n"), UnknownField),
        (lambda t: t.replace("name: field", "name: birth_year"), DuplicateAttribute),
        (lambda t: t.replace("kind: year", "kind: timestamp"), UnknownValueKind),
        (lambda t: t.replace("When was {name} born?", "When was {full name} born?"), InvalidPlaceholder),
        (lambda t: t.replace("task_name: demo", "task_name: Demo Task"), InvalidField),
        (lambda t: t.replace("    choices: [physics, chemistry]\n", ""), MissingField),
        (lambda t: t.replace("name: birth_year", "name: year"), InvalidField),
        (lambda t: t.replace("  per_search_call: \"0.01\"\n", ""), MissingField),
        (lambda t: t + "execution:\n  max_parallel: 0\n", InvalidField),
        (lambda t: "task_name: [unclosed\n", MalformedYaml),
    ],
)
def test_invalid_descriptors_rejected(edit, error):
    with pytest.raises(error):
        spec_from(edit(BASE))


def test_bundled_tasks_load():
    for name in ("faculty_hiring", "nobel_death", "faculty_review"):
        spec, entities = load_task(name)
        assert spec.task_name == name
        assert len(entities) > 0


def test_entity_ids_join_key_columns():
    spec = spec_from()
    entities = parse_entity_set("name,year,extra\nAda,1990,x\n\"Lin, B\",2001,y\n", spec)
    assert entities.ids == ["Ada|1990", "Lin, B|2001"]
    assert make_entity_id({"a": "1", "b": "2"}, ["b", "a"]) == "2|1"


def test_entity_table_errors():
    spec = spec_from()
    with pytest.raises(MissingColumn):
        parse_entity_set("name\nAda\n", spec)
    with pytest.raises(DuplicateEntityId):
        parse_entity_set("name,year\nAda,1990\nAda,1990\n", spec)
    with pytest.raises(EmptyEntitySet):
        parse_entity_set("name,year\n", spec)


def test_bom_and_crlf_accepted():
    spec = spec_from()
    entities = parse_entity_set("\ufeffname,year\r\nAda,1990\r\n", spec)
    assert entities.ids == ["Ada|1990"]


def test_render_prompt_contents():
    spec = spec_from()
    record = parse_entity_set("name,year\nAda,1990\n", spec).rows[0]
    bundle = render_prompt(spec, record)
    assert bundle.system == "You curate facts about Ada."
    assert "What field did Ada (1990) work in?" in bundle.user
    assert "one of: physics, chemistry" in bundle.user
    assert set(bundle.output_schema["properties"]) == {"birth_year", "field"}


def test_braces_in_data_are_not_expanded():
    spec = spec_from()
    record = parse_entity_set("name,year\n{year},1990\n", spec).rows[0]
    bundle = render_prompt(spec, record)
    assert "When was {year} born?" in bundle.user


def test_run_identity_sensitive_to_inputs():
    spec = spec_from()
    a = parse_entity_set("name,year\nAda,1990\n", spec)
    b = parse_entity_set("name,year\nAda,1991\n", spec)
    assert run_identity(spec, a) == run_identity(spec_from(), a)
    assert run_identity(spec, a) != run_identity(spec, b)
    assert run_identity(spec, a) != run_identity(spec.with_changes(search_enabled=False), a)


# -- single-pass templating, checked against an independent reference --------------

ALPHABET = ["{", "}", "a", "b", "x", " "]


def reference_render(template: str, values: dict[str, str]) -> str:
    """Left-to-right scan written independently of the regex implementation."""
    out, i = [], 0
    while i < len(template):
        ch = template[i]
        if ch == "{":
            j = i + 1
            while j < len(template) and template[j] not in "{}":
                j += 1
            if j < len(template) and template[j] == "}":
                out.append(values[template[i + 1:j]])
                i = j + 1
                continue
        out.append(ch)
        i += 1
    return "".join(out)


@settings(max_examples=400, deadline=None)
@given(
    template=st.lists(st.sampled_from(ALPHABET), max_size=8).map("".join),
    a=st.text(alphabet="{}ab", max_size=4),
    b=st.text(alphabet="{}ab", max_size=4),
)
def test_single_pass_substitution_matches_reference(template, a, b):
    values = {"a": a, "b": b}
    try:
        names = template_placeholders(template)
    except InvalidPlaceholder:
        return
    if any(n not in values for n in names):
        with pytest.raises(InvalidPlaceholder):
            render_template(template, values)
        return
    assert render_template(template, values) == reference_render(template, values)


def test_placeholder_free_template_verbatim():
    text = "Where did they study? } stray {"
    assert render_template(text, {}) == text


# -- round trip --------------------------------------------------------------------

names = st.from_regex(re.compile(r"[a-z][a-z0-9]{0,6}"), fullmatch=True)
prose = st.text(alphabet=st.characters(blacklist_categories=("Cs", "Cc"), blacklist_characters="{}"), min_size=1,
                max_size=30).filter(lambda s: s.strip())


@st.composite
def task_specs(draw):
    attr_names = draw(st.lists(names, min_size=1, max_size=4, unique=True).filter(lambda xs: "key" not in xs))
    attrs = []
    for n in attr_names:
        kind = draw(st.sampled_from(["string", "integer", "year", "date", "boolean", "enum"]))
        choices = tuple(draw(st.lists(names, min_size=1, max_size=3, unique=True))) if kind == "enum" else ()
        attrs.append(AttributeSpec(n, draw(prose) + " {key}", kind, choices, draw(st.booleans())))
    pricing = PricingTable.from_mapping({
        "input_per_million_tokens": str(draw(st.integers(0, 5000)) / 100),
        "output_per_million_tokens": str(draw(st.integers(0, 5000))),
        "per_search_call": "0.0" + str(draw(st.integers(0, 9))),
    })
    return TaskSpec(
        task_name=draw(names), system_prompt=draw(prose), entity_key_columns=("key",), attributes=tuple(attrs),
        model_id=draw(names), pricing=pricing, search_enabled=draw(st.booleans()),
        max_output_tokens=draw(st.integers(1, 10**5)), max_parallel=draw(st.integers(1, 64)),
        requests_per_minute=draw(st.integers(1, 10**4)), max_attempts=draw(st.integers(1, 9)),
    )


@settings(max_examples=150, deadline=None)
@given(task_specs())
def test_serialize_parse_round_trip(spec):
    again = parse_task_spec(serialize_task_spec(spec))
    assert again == spec
    assert again.canonical_json() == spec.canonical_json()
