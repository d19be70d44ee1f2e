"""Regenerate the sample tasks under tasks/ and the replay fixtures under fixtures/.

The entities are fictional and generated from a fixed seed. Model replies are
authored here so that every count the test-suite relies on is known in
advance (see EXPECTED below); requests are built with the engine's own prompt
rendering, so the fixture keys match what a replay run will ask for.

Re-run after any change to prompt rendering, request hashing or CONSTITUTION.md:

    python scripts/build_fixtures.py
"""

from __future__ import annotations

import csv
import io
import json
import random
import shutil
from pathlib import Path

from webcurate.bootstrap import (
    Playbook,
    bootstrap_discover_entities,
    bootstrap_with_entities,
    set_baseline_mode,
)
from webcurate.engine import build_request
from webcurate.errors import BootstrapExhausted
from webcurate.gateway import ProviderResponse, RecordingProvider, ScriptedProvider, Usage, fixture_document
from webcurate.taskconfig import parse_entity_set, parse_task_spec, render_prompt

ROOT = Path(__file__).resolve().parents[1]
TASKS = ROOT / "tasks"
FIXTURES = ROOT / "fixtures"

# counts designed into the fixtures; the tests assert against these
EXPECTED = {
    "faculty_hiring": {
        "degree_institution": {"n_total": 100, "n_found": 96, "k_correct": 93},
        "degree_year": {"n_total": 100, "n_found": 97, "k_correct": 95},
        "first_hire_institution": {"n_total": 100, "n_found": 90, "k_correct": 83},
    },
    "nobel_death_baseline": {
        "is_alive": {"n_total": 100, "n_found": 70, "k_correct": 44},
        "death_date": {"n_total": 62, "n_found": 0, "k_correct": 0},
    },
    "faculty_review": {"unresolved_cells": 3},
}

FIRST = [
    "Ada", "Bruno", "Chen", "Dara", "Elif", "Farid", "Greta", "Hiro", "Ines", "Jonas", "Kavya", "Lars",
    "Mina", "Nikolai", "Oona", "Pablo", "Qing", "Rhea", "Soren", "Tamar", "Umar", "Vera", "Wei", "Xenia",
    "Yusuf", "Zofia", "Anouk", "Bao", "Cosmin", "Delphine",
]
LAST = [
    "Abernathy", "Brandt", "Castellano", "Dubois", "Eriksen", "Fontaine", "Gallagher", "Hartmann",
    "Ishikawa", "Jablonski", "Kowalczyk", "Lindqvist", "Moreau", "Nakagawa", "Okafor", "Petrov",
    "Quintero", "Rasmussen", "Sorensen", "Takahashi", "Underwood", "Valdivia", "Whitfield", "Xu",
    "Yamamoto", "Zhou", "Achterberg", "Bellamy", "Carvalho", "Delacroix",
]

# canonical name, alias a model might return instead (None: no alias)
INSTITUTIONS = [
    ("Massachusetts Institute of Technology", "MIT"),
    ("Stanford University", "Stanford"),
    ("University of California, Berkeley", "UC Berkeley"),
    ("Carnegie Mellon University", "CMU"),
    ("Tsinghua University", "Tsinghua"),
    ("University of Cambridge", "Cambridge University"),
    ("Technical University of Munich", "TU Munich"),
    ("ETH Zurich", "Swiss Federal Institute of Technology Zurich"),
    ("Peking University", "PKU"),
    ("University of Oxford", "Oxford University"),
    ("Princeton University", None),
    ("Cornell University", None),
    ("University of Washington", "UW Seattle"),
    ("Georgia Institute of Technology", "Georgia Tech"),
    ("University of Illinois Urbana-Champaign", "UIUC"),
    ("Shanghai Jiao Tong University", "SJTU"),
    ("Imperial College London", "Imperial College"),
    ("Saarland University", None),
    ("University of Edinburgh", None),
    ("Max Planck Institute for Informatics", "MPI Informatics"),
]

COUNTRIES = ["United States", "China", "United Kingdom", "Germany"]

PRICING = {"input_per_million_tokens": "0.25", "output_per_million_tokens": "2", "per_search_call": "0.01"}

FACULTY_YAML = """\
task_name: {task_name}
system_prompt: You are a research assistant curating academic career histories. Use web search, prefer CVs, university pages and dissertation records, and report not_found rather than guessing.
entity_key_columns: [name]
attributes:
  - name: degree_institution
    question: From which institution did {{name}} ({{affiliation}}) receive their PhD?
    kind: string
  - name: degree_year
    question: In what year did {{name}} receive their PhD?
    kind: year
  - name: first_hire_institution
    question: At which institution did {{name}} hold their first tenure-track faculty position?
    kind: string
model:
  id: gpt-5-mini
  search_enabled: true
  max_output_tokens: 4096
execution:
  max_parallel: 8
  requests_per_minute: 600
  max_attempts: 3
pricing:
  input_per_million_tokens: "0.25"
  output_per_million_tokens: "2"
  per_search_call: "0.01"
"""

NOBEL_YAML = """\
task_name: nobel_death
system_prompt: You are a careful research assistant. Use web search to verify facts about Nobel laureates and cite reliable sources.
entity_key_columns: [name]
attributes:
  - name: is_alive
    question: Is {name}, Nobel laureate in {category} ({prize_year}), alive today?
    kind: boolean
  - name: death_date
    question: If {name} has died, on what date did they die?
    kind: date
model:
  id: gpt-5-mini
  search_enabled: true
  max_output_tokens: 4096
execution:
  max_parallel: 8
  requests_per_minute: 600
  max_attempts: 3
pricing:
  input_per_million_tokens: "0.25"
  output_per_million_tokens: "2"
  per_search_call: "0.01"
"""

NOBEL_REQUEST = (
    "I have compiled a list of Nobel Laureates in the folder nobel_death under the task directory. "
    "Your task is to determine whether each individual is still alive, and if not, when they passed away. "
    "Before launching the task, make sure to read the CONSTITUTION.md file carefully."
)

SENATOR_REQUEST = (
    "Collect data on all current (2025) U.S. senators, including the year they first entered the Senate "
    "(appointed or elected) and, if elected, the final opponent they defeated in the first successful "
    "election. Name the task senator_election. Read the CONSTITUTION.md carefully before launching the task."
)

SENATOR_YAML = """\
task_name: senator_election
system_prompt: You research the careers of U.S. senators. Use web search and prefer official and encyclopedic sources.
entity_key_columns: [name, state]
attributes:
  - name: first_entry_year
    question: In what year did {name} of {state} first enter the U.S. Senate?
    kind: year
  - name: entry_method
    question: Did {name} first enter the Senate by election or by appointment?
    kind: enum
    choices: [elected, appointed]
  - name: first_election_opponent
    question: Who was the final opponent {name} defeated in their first successful Senate election?
    kind: string
model:
  id: gpt-5-mini
  search_enabled: true
  max_output_tokens: 4096
execution:
  max_parallel: 8
  requests_per_minute: 600
  max_attempts: 3
pricing:
  input_per_million_tokens: "0.25"
  output_per_million_tokens: "2"
  per_search_call: "0.01"
"""

STATES = [
    "Alabama", "Alaska", "Arizona", "Arkansas", "California", "Colorado", "Connecticut", "Delaware",
    "Florida", "Georgia", "Hawaii", "Idaho", "Illinois", "Indiana", "Iowa", "Kansas", "Kentucky",
    "Louisiana", "Maine", "Maryland", "Massachusetts", "Michigan", "Minnesota", "Mississippi",
    "Missouri", "Montana", "Nebraska", "Nevada", "New Hampshire", "New Jersey", "New Mexico",
    "New York", "North Carolina", "North Dakota", "Ohio", "Oklahoma", "Oregon", "Pennsylvania",
    "Rhode Island", "South Carolina", "South Dakota", "Tennessee", "Texas", "Utah", "Vermont",
    "Virginia", "Washington", "West Virginia", "Wisconsin", "Wyoming",
]


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def unique_names(rng: random.Random, n: int, exclude=()) -> list[str]:
    names, seen = [], set(exclude)
    while len(names) < n:
        name = f"{rng.choice(FIRST)} {rng.choice(LAST)}"
        if name not in seen:
            seen.add(name)
            names.append(name)
    return names


def reset(path: Path) -> Path:
    if path.exists():
        shutil.rmtree(path)
    path.mkdir(parents=True)
    return path


def write_fixture(directory: Path, request, raw_text: str, usage: Usage) -> None:
    doc = fixture_document(request, ProviderResponse(raw_text, usage, request.model_id))
    (directory / f"{doc['request_key']}.json").write_text(
        json.dumps(doc, indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8"
    )


def reply(cells: dict) -> str:
    return json.dumps(cells, ensure_ascii=False)


def found(value) -> dict:
    return {"status": "found", "value": value}


NOT_FOUND = {"status": "not_found"}


def outcome_plan(rng: random.Random, n: int, n_found: int, k_correct: int) -> list[str]:
    """Shuffled per-entity outcomes: 'nf' (not found), 'wrong', 'right'."""
    plan = ["nf"] * (n - n_found) + ["wrong"] * (n_found - k_correct) + ["right"] * k_correct
    rng.shuffle(plan)
    return plan


def faculty_usages(rng: random.Random, n: int, mean_micro: int = 90_000) -> list[Usage]:
    """Per-record usage whose priced mean is exactly ``mean_micro`` under PRICING, search-dominated."""
    inputs = [4 * rng.randint(2000, 4000) for _ in range(n)]  # $0.25/M -> tokens/4 micro, exact
    outputs = [rng.randint(600, 1400) for _ in range(n)]  # $2/M -> 2 micro per token
    token_micro = sum(i // 4 for i in inputs) + sum(2 * o for o in outputs)
    remainder = token_micro % 10_000
    # shave the remainder off input tokens so search cost fills the rest in whole calls
    i = 0
    while remainder:
        take = min(remainder, inputs[i] // 4 - 1000)
        inputs[i] -= 4 * take
        remainder -= take
        i += 1
    token_micro = sum(i // 4 for i in inputs) + sum(2 * o for o in outputs)
    searches_total = (mean_micro * n - token_micro) // 10_000
    searches = [searches_total // n] * n
    for j in rng.sample(range(n), searches_total % n):
        searches[j] += 1
    for _ in range(3 * n):  # spread the distribution without changing its sum
        a, b = rng.randrange(n), rng.randrange(n)
        if searches[a] > 3:
            searches[a] -= 1
            searches[b] += 1
    usages = [Usage(inputs[j], outputs[j], searches[j]) for j in range(n)]
    assert sum(u.input_tokens // 4 + 2 * u.output_tokens + 10_000 * u.search_calls for u in usages) == mean_micro * n
    return usages


# -- faculty ----------------------------------------------------------------------


def build_faculty_world(rng: random.Random, n: int, exclude=()):
    names = unique_names(rng, n, exclude)
    people = []
    for name in names:
        phd = rng.choice(INSTITUTIONS)
        hire = rng.choice(INSTITUTIONS)
        current = rng.choice(INSTITUTIONS)
        people.append({
            "name": name,
            "affiliation": current[0],
            "country": rng.choice(COUNTRIES),
            "degree_institution": phd,
            "degree_year": rng.randint(1978, 2019),
            "first_hire_institution": hire,
        })
    return people


def institution_answer(rng: random.Random, inst, outcome: str):
    canonical, alias = inst
    if outcome == "nf":
        return NOT_FOUND
    if outcome == "wrong":
        others = [i for i in INSTITUTIONS if i[0] != canonical]
        return found(rng.choice(others)[0])
    style = rng.random()
    if alias and style < 0.3:
        return found(alias)
    if style < 0.45:
        return found(f"  {canonical.upper()} ")
    return found(canonical)


def build_faculty(rng: random.Random) -> list[dict]:
    task_dir = reset(TASKS / "faculty_hiring")
    fx_dir = reset(FIXTURES / "faculty_hiring")
    people = build_faculty_world(rng, 100)
    spec = parse_task_spec(FACULTY_YAML.format(task_name="faculty_hiring"))
    (task_dir / "task.yaml").write_text(FACULTY_YAML.format(task_name="faculty_hiring"), encoding="utf-8")
    entities_csv = csv_text(["name", "affiliation", "country"], [[p["name"], p["affiliation"], p["country"]] for p in people])
    (task_dir / "entities.csv").write_text(entities_csv, encoding="utf-8")
    (task_dir / "truth.csv").write_text(csv_text(
        ["name", "degree_institution", "degree_year", "first_hire_institution"],
        [[p["name"], p["degree_institution"][0], p["degree_year"], p["first_hire_institution"][0]] for p in people],
    ), encoding="utf-8")
    aliases = [(alias, canonical) for canonical, alias in INSTITUTIONS if alias]
    (task_dir / "aliases.csv").write_text(csv_text(["variant", "canonical"], aliases), encoding="utf-8")

    exp = EXPECTED["faculty_hiring"]
    plans = {a: outcome_plan(rng, 100, c["n_found"], c["k_correct"]) for a, c in exp.items()}
    usages = faculty_usages(rng, 100)
    entities = parse_entity_set(entities_csv, spec)
    for j, (person, record) in enumerate(zip(people, entities)):
        year_outcome = plans["degree_year"][j]
        if year_outcome == "nf":
            year = NOT_FOUND
        elif year_outcome == "wrong":
            year = found(person["degree_year"] + rng.choice([-1, 1]))
        else:
            year = found(person["degree_year"])
        cells = {
            "degree_institution": institution_answer(rng, person["degree_institution"], plans["degree_institution"][j]),
            "degree_year": year,
            "first_hire_institution": institution_answer(rng, person["first_hire_institution"], plans["first_hire_institution"][j]),
        }
        write_fixture(fx_dir, build_request(spec, render_prompt(spec, record)), reply(cells), usages[j])
    return people


def build_faculty_review(rng: random.Random, exclude) -> None:
    """Five entities with exactly three not_found cells, for the review walkthrough."""
    task_dir = reset(TASKS / "faculty_review")
    fx_dir = reset(FIXTURES / "faculty_review")
    people = build_faculty_world(rng, 5, exclude)
    yaml_text = FACULTY_YAML.format(task_name="faculty_review")
    spec = parse_task_spec(yaml_text)
    (task_dir / "task.yaml").write_text(yaml_text, encoding="utf-8")
    entities_csv = csv_text(["name", "affiliation", "country"], [[p["name"], p["affiliation"], p["country"]] for p in people])
    (task_dir / "entities.csv").write_text(entities_csv, encoding="utf-8")
    missing = {(0, "degree_year"), (2, "first_hire_institution"), (4, "degree_institution")}
    answers = []
    for j, (person, record) in enumerate(zip(people, parse_entity_set(entities_csv, spec))):
        cells = {
            "degree_institution": found(person["degree_institution"][0]),
            "degree_year": found(person["degree_year"]),
            "first_hire_institution": found(person["first_hire_institution"][0]),
        }
        for (idx, attr) in missing:
            if idx == j:
                cells[attr] = NOT_FOUND
        write_fixture(fx_dir, build_request(spec, render_prompt(spec, record)), reply(cells), Usage(10_000, 900, 7))
    # scripted reviewer answers: two values, one skip
    p0, p2, p4 = people[0], people[2], people[4]
    answers = [
        [p0["name"], "degree_year", str(p0["degree_year"])],
        [p2["name"], "first_hire_institution", p2["first_hire_institution"][0]],
        [p4["name"], "degree_institution", "skip"],
    ]
    (task_dir / "review_answers.csv").write_text(csv_text(["entity_id", "attribute", "answer"], answers), encoding="utf-8")


# -- nobel ------------------------------------------------------------------------

CATEGORIES = ["Physics", "Chemistry", "Medicine", "Literature", "Peace", "Economics"]


def build_nobel(rng: random.Random) -> None:
    task_dir = reset(TASKS / "nobel_death")
    fx_dir = reset(FIXTURES / "nobel_death")
    names = unique_names(rng, 100)
    alive_idx = set(rng.sample(range(100), 38))
    laureates = []
    for j, name in enumerate(names):
        prize_year = rng.randint(1950, 2020)
        if j in alive_idx:
            death = None
        else:
            y = rng.randint(max(prize_year, 1960), 2024)
            death = f"{y:04d}-{rng.randint(1, 12):02d}-{rng.randint(1, 28):02d}"
        laureates.append({"name": name, "prize_year": prize_year, "category": rng.choice(CATEGORIES), "death": death})

    (task_dir / "task.yaml").write_text(NOBEL_YAML, encoding="utf-8")
    entities_csv = csv_text(["name", "prize_year", "category"], [[l["name"], l["prize_year"], l["category"]] for l in laureates])
    (task_dir / "entities.csv").write_text(entities_csv, encoding="utf-8")
    (task_dir / "truth.csv").write_text(csv_text(
        ["name", "is_alive", "death_date"],
        [[l["name"], "true" if l["death"] is None else "false", l["death"] or "NA"] for l in laureates],
    ), encoding="utf-8")
    (task_dir / "request.txt").write_text(NOBEL_REQUEST + "\n", encoding="utf-8")

    spec = parse_task_spec(NOBEL_YAML)
    entities = parse_entity_set(entities_csv, spec)
    # search-enabled run: every answer right
    for l, record in zip(laureates, entities):
        cells = {
            "is_alive": found(l["death"] is None),
            "death_date": NOT_FOUND if l["death"] is None else found(l["death"]),
        }
        usage = Usage(rng.randint(9000, 15000), rng.randint(500, 1200), rng.randint(3, 9))
        write_fixture(fx_dir, build_request(spec, render_prompt(spec, record)), reply(cells), usage)

    # knowledge-only baseline: 70 guesses, 44 right, no dates
    base = set_baseline_mode(spec)
    exp = EXPECTED["nobel_death_baseline"]["is_alive"]
    plan = outcome_plan(rng, 100, exp["n_found"], exp["k_correct"])
    for l, record, outcome in zip(laureates, entities, plan):
        alive = l["death"] is None
        if outcome == "nf":
            is_alive = NOT_FOUND
        else:
            is_alive = found(alive if outcome == "right" else not alive)
        cells = {"is_alive": is_alive, "death_date": NOT_FOUND}
        usage = Usage(rng.randint(700, 900), rng.randint(150, 400), 0)
        write_fixture(fx_dir, build_request(base, render_prompt(base, record)), reply(cells), usage)


# -- bootstrap --------------------------------------------------------------------


def fenced(kind: str, body: str, lead: str = "") -> str:
    return f"{lead}```{kind}\n{body.rstrip()}\n```\n"


def build_bootstrap(rng: random.Random) -> None:
    playbook = Playbook.load(ROOT / "CONSTITUTION.md")
    nobel_csv = (TASKS / "nobel_death" / "entities.csv").read_text(encoding="utf-8")

    # mode (i): valid on the first draft
    fx = reset(FIXTURES / "bootstrap_nobel")
    scripted = ScriptedProvider([(fenced("yaml", NOBEL_YAML, "Here is the task descriptor.\n\n"), Usage(6000, 900, 0))])
    bootstrap_with_entities(NOBEL_REQUEST, playbook, nobel_csv, RecordingProvider(scripted, fx))

    # mode (i): three invalid drafts
    fx = reset(FIXTURES / "bootstrap_invalid")
    dup = NOBEL_YAML.replace("  - name: death_date", "  - name: is_alive")
    unknown_key = NOBEL_YAML.replace("    kind: date\n", "    kind: date\n    format: iso\n")
    bad_column = NOBEL_YAML.replace("({prize_year})", "({prize_date})")
    scripted = ScriptedProvider([
        (fenced("yaml", d), Usage(6000, 900, 0)) for d in (dup, unknown_key, bad_column)
    ])
    try:
        bootstrap_with_entities(NOBEL_REQUEST, playbook, nobel_csv, RecordingProvider(scripted, fx))
    except BootstrapExhausted:
        pass
    else:  # pragma: no cover
        raise SystemExit("invalid bootstrap script unexpectedly succeeded")

    # mode (ii): discovery with one rejected draft, then the config
    task_dir = reset(TASKS / "senator_election_truth")
    fx = reset(FIXTURES / "bootstrap_senator")
    used = set()
    senators = []
    for state in STATES:
        for _ in range(2):
            name = unique_names(rng, 1, used)[0]
            used.add(name)
            elected = rng.random() < 0.85
            senators.append({
                "name": name,
                "state": state,
                "first_entry_year": rng.randint(1975, 2025),
                "entry_method": "elected" if elected else "appointed",
                "first_election_opponent": unique_names(rng, 1, used)[0],
            })
    roster = csv_text(["name", "state"], [[s["name"], s["state"]] for s in senators])
    dup_roster = csv_text(["name", "state"], [[s["name"], s["state"]] for s in senators[:99]] + [[senators[0]["name"], senators[0]["state"]]])
    scripted = ScriptedProvider([
        (fenced("csv", dup_roster, "Current senators:\n\n"), Usage(20000, 3000, 12)),
        (fenced("csv", roster, "Corrected list:\n\n"), Usage(21000, 3000, 4)),
        (fenced("yaml", SENATOR_YAML, "Task descriptor:\n\n"), Usage(8000, 900, 0)),
    ])
    bootstrap_discover_entities(SENATOR_REQUEST, playbook, RecordingProvider(scripted, fx))
    (task_dir / "request.txt").write_text(SENATOR_REQUEST + "\n", encoding="utf-8")
    (task_dir / "truth.csv").write_text(csv_text(
        ["name", "state", "first_entry_year", "entry_method", "first_election_opponent"],
        [[s["name"], s["state"], s["first_entry_year"], s["entry_method"], s["first_election_opponent"]] for s in senators],
    ), encoding="utf-8")

    # curation fixtures for the bootstrapped senator task: every answer right
    fx = reset(FIXTURES / "senator_election")
    spec = parse_task_spec(SENATOR_YAML)
    for s, record in zip(senators, parse_entity_set(roster, spec)):
        cells = {
            "first_entry_year": found(s["first_entry_year"]),
            "entry_method": found(s["entry_method"]),
            "first_election_opponent": found(s["first_election_opponent"]),
        }
        usage = Usage(rng.randint(9000, 15000), rng.randint(500, 1200), rng.randint(3, 9))
        write_fixture(fx, build_request(spec, render_prompt(spec, record)), reply(cells), usage)


def main() -> None:
    rng = random.Random(20250917)
    people = build_faculty(rng)
    build_faculty_review(rng, {p["name"] for p in people})
    build_nobel(rng)
    build_bootstrap(rng)
    (FIXTURES / "EXPECTED.json").write_text(json.dumps(EXPECTED, indent=2) + "\n", encoding="utf-8")
    print("fixtures written to", FIXTURES)


if __name__ == "__main__":
    main()
