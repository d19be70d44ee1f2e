"""Turn a natural-language request into a runnable task.

The model is shown the repository playbook and the request and asked for
fenced ``yaml`` (and, when no entity list exists yet, ``csv``) blocks. Every
draft goes through the same validators the engine uses; a rejected draft is
sent back with the validation error until the attempt cap is reached, so
whatever comes out of here is guaranteed to load.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field, replace
from pathlib import Path

from .errors import BootstrapExhausted, ConfigError, CurationError, EmptyEntityDiscovery, InvalidField
from .gateway import CurationRequest, Provider, _atomic_write_text
from .taskconfig import TaskSpec, parse_entity_set, parse_task_spec, read_csv_rows

logger = logging.getLogger(__name__)

DEFAULT_MODEL = "gpt-5-mini"
MAX_BOOTSTRAP_ATTEMPTS = 3
SAMPLE_ROWS = 5
PLAYBOOK_SECTION = "YAML key reference"

BASELINE_PREFIX = (
    "Answer from your internal knowledge only; web search is not available. "
    "If you are not certain of an answer, report it as not_found.\n\n"
)

BOOTSTRAP_INSTRUCTIONS = """\
You are configuring a data-curation task by following the playbook above.
Output requirements:
- Put the task descriptor in one fenced block that starts with ```yaml.
- When asked for an entity list, put it in one fenced block that starts with ```csv.
- Use only the keys listed in the YAML key reference. Unknown keys are rejected.
"""

_FENCE = re.compile(r"```([A-Za-z0-9_-]*)[^\n]*\n(.*?)```", re.S)


@dataclass(frozen=True)
class Playbook:
    text: str

    def __post_init__(self) -> None:
        if not self.text.strip():
            raise InvalidField("playbook", "playbook is empty")
        if PLAYBOOK_SECTION.lower() not in self.text.lower():
            raise InvalidField("playbook", f"playbook has no '{PLAYBOOK_SECTION}' section")

    @classmethod
    def load(cls, path: str | Path) -> "Playbook":
        return cls(Path(path).read_text(encoding="utf-8"))


@dataclass
class BootstrapResult:
    task_yaml: str
    entity_csv: str | None
    attempts_used: int
    validation_log: list[dict] = field(default_factory=list)
    attempts_by_phase: dict[str, int] = field(default_factory=dict)

    @property
    def spec(self) -> TaskSpec:
        return parse_task_spec(self.task_yaml)


def extract_fenced(text: str, kind: str) -> str | None:
    """Body of the first fenced block tagged ``kind``."""
    for m in _FENCE.finditer(text):
        if m.group(1).lower() == kind:
            return m.group(2)
    return None


def _csv_sample(entity_csv: str) -> str:
    lines = [ln for ln in entity_csv.strip().splitlines() if ln.strip()]
    return "\n".join(lines[: SAMPLE_ROWS + 1])


def _retry_note(reason: str, kind: str) -> str:
    return f"\n\nYour previous draft was rejected: {reason}\nReturn a corrected ```{kind} block."


def _request(model_id: str, system: str, user: str, search: bool, max_output_tokens: int) -> CurationRequest:
    return CurationRequest(model_id, system, user, None, search, max_output_tokens)


def _draft_loop(provider, phase, base_user, system, kind, validate, *, model_id, search, max_attempts,
                max_output_tokens, log):
    """Ask for a draft until ``validate`` accepts it. Returns (value, attempts)."""
    user = base_user
    for attempt in range(1, max_attempts + 1):
        response = provider.send(_request(model_id, system, user, search, max_output_tokens))
        draft = extract_fenced(response.raw_text, kind)
        try:
            if draft is None:
                raise InvalidField("draft", f"reply contains no ```{kind} block")
            value = validate(draft)
        except EmptyEntityDiscovery:
            raise
        except CurationError as exc:
            reason = f"{type(exc).__name__}: {exc}"
            log.append({"phase": phase, "attempt": attempt, "reason": reason, "draft": draft})
            logger.info("bootstrap %s draft %d rejected: %s", phase, attempt, reason)
            user = base_user + _retry_note(reason, kind)
            continue
        return value, attempt
    raise BootstrapExhausted(log)


def _yaml_validator(entity_csv: str):
    def validate(draft: str) -> str:
        spec = parse_task_spec(draft)
        parse_entity_set(entity_csv, spec)
        return draft

    return validate


def _validate_discovered_csv(draft: str) -> str:
    header, rows = read_csv_rows(draft)
    if not rows:
        raise EmptyEntityDiscovery()
    seen = set()
    for i, row in enumerate(rows, start=2):
        if len(row) != len(header):
            raise InvalidField("csv", f"row {i} has {len(row)} fields, header has {len(header)}")
        key = row[0].strip()
        if not key:
            raise InvalidField("csv", f"row {i} has an empty first column")
        if key in seen:
            raise InvalidField("csv", f"duplicate entity {key!r} in first column")
        seen.add(key)
    return draft.rstrip("\r\n") + "\n"


def bootstrap_with_entities(
    request: str,
    playbook: Playbook,
    entity_csv: str,
    provider: Provider,
    *,
    model_id: str = DEFAULT_MODEL,
    max_attempts: int = MAX_BOOTSTRAP_ATTEMPTS,
    max_output_tokens: int = 8192,
) -> BootstrapResult:
    """Generate a task descriptor for an entity table the user already has."""
    header, _ = read_csv_rows(entity_csv)
    system = playbook.text.rstrip() + "\n\n" + BOOTSTRAP_INSTRUCTIONS
    user = (
        f"Request:\n{request.strip()}\n\n"
        f"An entity list is provided. Columns: {', '.join(header)}\n"
        f"First rows:\n```csv\n{_csv_sample(entity_csv)}\n```\n\n"
        "Write the task descriptor for this entity list."
    )
    log: list[dict] = []
    task_yaml, attempts = _draft_loop(
        provider, "config", user, system, "yaml", _yaml_validator(entity_csv),
        model_id=model_id, search=False, max_attempts=max_attempts,
        max_output_tokens=max_output_tokens, log=log,
    )
    return BootstrapResult(task_yaml, entity_csv, attempts, log, {"config": attempts})


def bootstrap_discover_entities(
    request: str,
    playbook: Playbook,
    provider: Provider,
    *,
    model_id: str = DEFAULT_MODEL,
    max_attempts: int = MAX_BOOTSTRAP_ATTEMPTS,
    max_output_tokens: int = 16384,
) -> BootstrapResult:
    """Find the entities online first, then generate the task descriptor for them.

    The two phases have independent attempt caps.
    """
    system = playbook.text.rstrip() + "\n\n" + BOOTSTRAP_INSTRUCTIONS
    log: list[dict] = []
    discover_user = (
        f"Request:\n{request.strip()}\n\n"
        "No entity list was provided. Use web search to find the complete set of entities this "
        "request is about and return them as a CSV with a header row. The first column must "
        "identify each entity uniquely; include any columns needed to disambiguate it."
    )
    entity_csv, attempts_1 = _draft_loop(
        provider, "discover", discover_user, system, "csv", _validate_discovered_csv,
        model_id=model_id, search=True, max_attempts=max_attempts,
        max_output_tokens=max_output_tokens, log=log,
    )
    header, rows = read_csv_rows(entity_csv)
    config_user = (
        f"Request:\n{request.strip()}\n\n"
        f"The entity list has been constructed ({len(rows)} rows). Columns: {', '.join(header)}\n"
        f"First rows:\n```csv\n{_csv_sample(entity_csv)}\n```\n\n"
        "Write the task descriptor for this entity list."
    )
    task_yaml, attempts_2 = _draft_loop(
        provider, "config", config_user, system, "yaml", _yaml_validator(entity_csv),
        model_id=model_id, search=False, max_attempts=max_attempts,
        max_output_tokens=max_output_tokens, log=log,
    )
    return BootstrapResult(
        task_yaml, entity_csv, attempts_1 + attempts_2, log, {"discover": attempts_1, "config": attempts_2}
    )


def set_baseline_mode(spec: TaskSpec) -> TaskSpec:
    """Knowledge-only variant of a task: search off, prompt told to answer from memory."""
    prompt = spec.system_prompt
    if not prompt.startswith(BASELINE_PREFIX):
        prompt = BASELINE_PREFIX + prompt
    return replace(spec, search_enabled=False, system_prompt=prompt)


def write_task_files(result: BootstrapResult, tasks_dir: str | Path) -> Path:
    """Write ``task.yaml``, ``entities.csv`` and ``bootstrap_log.json`` under ``tasks_dir/<task_name>/``."""
    spec = result.spec
    target = Path(tasks_dir) / spec.task_name
    if (target / "task.yaml").exists():
        raise ConfigError(f"{target / 'task.yaml'} already exists; refusing to overwrite")
    target.mkdir(parents=True, exist_ok=True)
    _atomic_write_text(target / "task.yaml", result.task_yaml if result.task_yaml.endswith("\n") else result.task_yaml + "\n")
    if result.entity_csv is not None:
        _atomic_write_text(target / "entities.csv", result.entity_csv)
    log = {
        "attempts_used": result.attempts_used,
        "attempts_by_phase": result.attempts_by_phase,
        "validation_log": result.validation_log,
    }
    _atomic_write_text(target / "bootstrap_log.json", json.dumps(log, indent=2) + "\n")
    return target


__all__ = [
    "BASELINE_PREFIX",
    "BootstrapResult",
    "Playbook",
    "bootstrap_discover_entities",
    "bootstrap_with_entities",
    "extract_fenced",
    "set_baseline_mode",
    "write_task_files",
]
