from __future__ import annotations

import json

import pytest

from webcurate.bootstrap import (
    BASELINE_PREFIX,
    Playbook,
    bootstrap_discover_entities,
    bootstrap_with_entities,
    extract_fenced,
    set_baseline_mode,
    write_task_files,
)
from webcurate.errors import BootstrapExhausted, ConfigError, EmptyEntityDiscovery, InvalidField
from webcurate.gateway import ReplayProvider, ScriptedProvider

from conftest import FIXTURES, ROOT, TASKS, load_task

PLAYBOOK = Playbook.load(ROOT / "CONSTITUTION.md")
NOBEL_YAML = (TASKS / "nobel_death" / "task.yaml").read_text(encoding="utf-8")
NOBEL_CSV = (TASKS / "nobel_death" / "entities.csv").read_text(encoding="utf-8")
NOBEL_REQUEST = (TASKS / "nobel_death" / "request.txt").read_text(encoding="utf-8")
SENATOR_REQUEST = (TASKS / "senator_election_truth" / "request.txt").read_text(encoding="utf-8")


def fenced(kind, body):
    return f"Sure.\n```{kind}\n{body}\n```\nDone."


def test_playbook_needs_key_reference():
    with pytest.raises(InvalidField):
        Playbook("# Notes\nnothing useful here")
    with pytest.raises(InvalidField):
        Playbook("  ")


def test_extract_fenced():
    text = "a\n```csv\nx,y\n1,2\n```\nb\n```yaml\nk: v\n```"
    assert extract_fenced(text, "yaml") == "k: v\n"
    assert extract_fenced(text, "csv") == "x,y\n1,2\n"
    assert extract_fenced(text, "json") is None


def test_first_draft_accepted():
    provider = ScriptedProvider([fenced("yaml", NOBEL_YAML)])
    result = bootstrap_with_entities(NOBEL_REQUEST, PLAYBOOK, NOBEL_CSV, provider)
    assert result.attempts_used == 1 and result.validation_log == []
    assert result.spec.attribute_names == ("is_alive", "death_date")
    request = provider.requests[0]
    assert "YAML key reference" in request.system and request.search_enabled is False


def test_rejected_draft_fed_back():
    bad = NOBEL_YAML.replace("kind: date", "kind: datetime")
    provider = ScriptedProvider(["no fence here", fenced("yaml", bad), fenced("yaml", NOBEL_YAML)])
    result = bootstrap_with_entities(NOBEL_REQUEST, PLAYBOOK, NOBEL_CSV, provider)
    assert result.attempts_used == 3
    assert [e["attempt"] for e in result.validation_log] == [1, 2]
    assert "UnknownValueKind" in result.validation_log[1]["reason"]
    assert "UnknownValueKind" in provider.requests[2].user


def test_exhaustion_carries_log():
    provider = ScriptedProvider([fenced("yaml", "task_name: x")] * 3)
    with pytest.raises(BootstrapExhausted) as info:
        bootstrap_with_entities(NOBEL_REQUEST, PLAYBOOK, NOBEL_CSV, provider)
    assert len(info.value.validation_log) == 3


def test_discovery_phases_have_separate_caps():
    roster = "name,state\nA,Ohio\nB,Utah\n"
    dup = "name,state\nA,Ohio\nA,Utah\n"
    senator_yaml = PLAYBOOK.text.split("Step 2, write the task:\n\n```yaml\n")[1].split("```")[0]
    provider = ScriptedProvider([
        fenced("csv", dup), fenced("csv", dup), fenced("csv", roster),
        fenced("yaml", "oops: 1"), fenced("yaml", "oops: 2"), fenced("yaml", senator_yaml),
    ])
    result = bootstrap_discover_entities(SENATOR_REQUEST, PLAYBOOK, provider)
    assert result.attempts_by_phase == {"discover": 3, "config": 3}
    assert provider.requests[0].search_enabled and not provider.requests[3].search_enabled
    assert result.entity_csv == roster


def test_empty_discovery_is_immediate():
    provider = ScriptedProvider([fenced("csv", "name,state"), fenced("csv", "name,state\nA,Ohio")])
    with pytest.raises(EmptyEntityDiscovery):
        bootstrap_discover_entities(SENATOR_REQUEST, PLAYBOOK, provider)
    assert len(provider.requests) == 1


def test_baseline_mode_idempotent():
    spec, _ = load_task("nobel_death")
    once = set_baseline_mode(spec)
    twice = set_baseline_mode(once)
    assert once == twice and not once.search_enabled
    assert once.system_prompt.startswith(BASELINE_PREFIX)
    assert once.attributes == spec.attributes


def test_write_task_files(tmp_path):
    result = bootstrap_with_entities(NOBEL_REQUEST, PLAYBOOK, NOBEL_CSV, ScriptedProvider([fenced("yaml", NOBEL_YAML)]))
    target = write_task_files(result, tmp_path)
    assert target == tmp_path / "nobel_death"
    assert (target / "entities.csv").read_text() == NOBEL_CSV
    assert json.loads((target / "bootstrap_log.json").read_text())["attempts_used"] == 1
    with pytest.raises(ConfigError):
        write_task_files(result, tmp_path)


# -- the recorded fixtures ---------------------------------------------------------------


def test_recorded_nobel_bootstrap():
    result = bootstrap_with_entities(NOBEL_REQUEST, PLAYBOOK, NOBEL_CSV, ReplayProvider(FIXTURES / "bootstrap_nobel"))
    assert result.attempts_used == 1
    assert result.spec.task_name == "nobel_death"


def test_recorded_senator_bootstrap():
    result = bootstrap_discover_entities(SENATOR_REQUEST, PLAYBOOK, ReplayProvider(FIXTURES / "bootstrap_senator"))
    assert result.attempts_by_phase == {"discover": 2, "config": 1}
    assert len(result.entity_csv.strip().splitlines()) == 101
    assert result.spec.entity_key_columns == ("name", "state")


def test_recorded_invalid_bootstrap():
    with pytest.raises(BootstrapExhausted) as info:
        bootstrap_with_entities(NOBEL_REQUEST, PLAYBOOK, NOBEL_CSV, ReplayProvider(FIXTURES / "bootstrap_invalid"))
    reasons = [e["reason"].split(":")[0] for e in info.value.validation_log]
    assert reasons == ["DuplicateAttribute", "UnknownField", "MissingColumn"]
