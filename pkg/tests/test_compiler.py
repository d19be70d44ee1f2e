from __future__ import annotations

import json

import pytest

from webcurate.compiler import (
    CuratedTable,
    Override,
    apply_overrides,
    compile_run,
    format_value,
    overrides_to_csv_text,
    parse_value,
    read_overrides,
    write_overrides,
)
from webcurate.engine import read_manifest, run_task
from webcurate.errors import (
    DuplicateOverride,
    IncompleteRun,
    SchemaViolation,
    UnknownAttribute,
    UnknownEntity,
)
from webcurate.gateway import ReplayProvider

from conftest import FIXTURES, load_task


@pytest.fixture
def review_run(tmp_path):
    spec, entities = load_task("faculty_review")
    run_task(spec, entities, ReplayProvider(FIXTURES / "faculty_review"), tmp_path)
    return tmp_path, spec, entities


def test_value_text_round_trip():
    spec, _ = load_task("nobel_death")
    alive, died = spec.attributes
    assert format_value(True) == "true" and format_value(None) == ""
    assert parse_value(alive, "Yes") is True and parse_value(alive, "0") is False
    assert parse_value(died, " 1999-12-31 ") == "1999-12-31"
    with pytest.raises(SchemaViolation):
        parse_value(alive, "maybe")
    with pytest.raises(SchemaViolation):
        parse_value(died, "31.12.1999")


def test_compile_writes_csv_and_jsonl(review_run):
    run_dir, spec, entities = review_run
    table = compile_run(run_dir)
    csv_text = (run_dir / "curated.csv").read_text(encoding="utf-8")
    header = csv_text.splitlines()[0].split(",")
    assert header[:4] == ["name", "degree_institution", "degree_institution__status", "degree_institution__provenance"]
    assert len(csv_text.splitlines()) == 1 + len(entities)
    lines = (run_dir / "curated.jsonl").read_text(encoding="utf-8").splitlines()
    assert [json.loads(line)["entity_id"] for line in lines] == entities.ids
    assert CuratedTable.from_csv_text(csv_text, spec) == table
    stats = read_manifest(run_dir)["compiled"]
    assert stats["rows"] == 5 and stats["not_found_cells"] == 3 and stats["human_cells"] == 0


def test_unresolved_cells(review_run):
    run_dir, _, _ = review_run
    assert len(compile_run(run_dir).unresolved()) == 3


def test_overrides_applied_and_validated(review_run):
    run_dir, spec, entities = review_run
    table = compile_run(run_dir)
    (eid, attr), *_ = table.unresolved()
    updated = apply_overrides(table, [Override(eid, attr, "1990")])
    assert updated.row(eid).cells[attr].provenance == "human"
    assert updated.row(eid).cells[attr].value == 1990
    assert table.row(eid).cells[attr].status == "not_found"  # input untouched
    with pytest.raises(UnknownEntity):
        apply_overrides(table, [Override("nobody", attr, "1990")])
    with pytest.raises(UnknownAttribute):
        apply_overrides(table, [Override(eid, "shoe_size", "1")])
    with pytest.raises(DuplicateOverride):
        apply_overrides(table, [Override(eid, attr, "1990"), Override(eid, attr, "1991")])
    with pytest.raises(SchemaViolation):
        apply_overrides(table, [Override(eid, attr, "nineteen ninety")])


def test_confirmed_not_found_is_human(review_run):
    run_dir, _, _ = review_run
    table = compile_run(run_dir)
    eid, attr = table.unresolved()[0]
    updated = apply_overrides(table, [Override(eid, attr, None)])
    cell = updated.row(eid).cells[attr]
    assert (cell.status, cell.provenance) == ("not_found", "human")
    assert len(updated.unresolved()) == 2


def test_overrides_file_round_trip(tmp_path):
    items = [Override("a|1", "x", "some, text"), Override("b", "y", None)]
    write_overrides(tmp_path / "overrides.csv", items)
    assert read_overrides(tmp_path / "overrides.csv") == items
    assert overrides_to_csv_text(items).splitlines()[0] == "entity_id,attribute,status,value"


def test_compile_picks_up_overrides_file(review_run):
    run_dir, _, _ = review_run
    before = compile_run(run_dir)
    eid, attr = before.unresolved()[0]
    write_overrides(run_dir / "overrides.csv", [Override(eid, attr, "1990")])
    after = compile_run(run_dir)
    assert after.row(eid).cells[attr].provenance == "human"
    assert compile_run(run_dir, use_overrides=False, write=False) == before


def test_compile_refuses_incomplete_run(tmp_path):
    spec, entities = load_task("faculty_review")
    run_task(spec, entities, ReplayProvider(FIXTURES / "faculty_review"), tmp_path)
    next((tmp_path / "results").glob("*.json")).unlink()
    with pytest.raises(IncompleteRun):
        compile_run(tmp_path)
