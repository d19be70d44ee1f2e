"""Command-line entry point.

Subcommands::

  run        curate every entity of a task into a run directory, then compile
  resume     continue an interrupted run from its run directory
  baseline   same as ``run --baseline`` (web search disabled)
  compile    rebuild curated.csv / curated.jsonl (applying overrides.csv)
  eval       score a curated table against ground truth
  report     cost report from a run's telemetry
  bootstrap  generate task files from a natural-language request
  review     fill unresolved cells by hand; answers go to overrides.csv

Exit codes: 0 success, 1 usage or configuration error, 2 run finished with
failed entities, 3 provider or authentication error, 4 bootstrap exhausted.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import __version__
from .bootstrap import (
    DEFAULT_MODEL,
    Playbook,
    bootstrap_discover_entities,
    bootstrap_with_entities,
    set_baseline_mode,
    write_task_files,
)
from .compiler import (
    CURATED_CSV,
    OVERRIDES_CSV,
    CuratedTable,
    Override,
    compile_run,
    parse_value,
    read_overrides,
    write_overrides,
)
from .engine import MANIFEST, TELEMETRY, load_run_inputs, run_task
from .errors import AuthFailure, BootstrapExhausted, CurationError, ProviderError, SchemaViolation
from .evaluator import MatchRule, evaluate, load_aliases, load_ground_truth
from .gateway import RecordingProvider, ReplayProvider, _atomic_write_text
from .ledger import Money, aggregate, costs_from_telemetry, human_baseline, read_telemetry
from .taskconfig import parse_entity_set, parse_task_spec, read_csv_rows, task_spec_from_dict

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_FAILED_ENTITIES = 2
EXIT_PROVIDER = 3
EXIT_BOOTSTRAP = 4

SKIP = "skip"
CONFIRM_NOT_FOUND = "confirm-not-found"

logger = logging.getLogger("webcurate")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on bad usage; 2 means "failed entities" here
    def error(self, message):
        self.print_usage(sys.stdout)
        print(f"{self.prog}: error: {message}")
        raise SystemExit(EXIT_USAGE)


def _out(text: str = "") -> None:
    print(text, flush=True)


# -- providers ----------------------------------------------------------------------


def _add_provider_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--provider", choices=("live", "replay", "record"), default="live",
                   help="model backend: live HTTP calls, replay recorded fixtures, or live calls "
                        "recorded into --fixtures (default: live)")
    p.add_argument("--fixtures", metavar="DIR",
                   help="fixture directory holding <request_key>.json files (replay and record)")
    p.add_argument("--vendor", choices=("openai-responses", "chat-completions"), default=None,
                   help="wire format of the live endpoint (default: $DP_API_VENDOR or openai-responses)")


def make_provider(args):
    if args.provider in ("replay", "record") and not args.fixtures:
        raise UsageError(f"--provider {args.provider} needs --fixtures DIR")
    if args.provider == "replay":
        if not Path(args.fixtures).is_dir():
            raise UsageError(f"fixture directory not found: {args.fixtures}")
        return ReplayProvider(args.fixtures)
    from .live import LiveProvider

    vendor = args.vendor or os.environ.get("DP_API_VENDOR") or "openai-responses"
    live = LiveProvider(vendor=vendor)
    if args.provider == "record":
        return RecordingProvider(live, args.fixtures)
    return live


# -- run / resume -------------------------------------------------------------------


def _read(path) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror or exc}") from None


def _print_run_summary(summary, run_dir: Path, spec) -> None:
    costs = costs_from_telemetry(read_telemetry(run_dir / TELEMETRY), spec.pricing)
    report = aggregate(costs)
    share = float(report.search_share) * 100
    _out(f"task        {spec.task_name}{'  (baseline: search disabled)' if not spec.search_enabled else ''}")
    _out(f"done        {summary.done}")
    _out(f"failed      {summary.failed}")
    _out(f"calls       {summary.calls} this session")
    _out(f"total cost  {report.total.render()} ({report.total.render_micro()})")
    _out(f"search      {share:.1f}% of cost")
    _out(f"curated     {run_dir / CURATED_CSV}")
    for eid in summary.failed_ids:
        _out(f"  failed: {eid}")


def _execute(spec, entities, args, run_dir: Path) -> int:
    provider = make_provider(args)
    summary = run_task(spec, entities, provider, run_dir)
    compile_run(run_dir)
    _print_run_summary(summary, run_dir, spec)
    return EXIT_FAILED_ENTITIES if summary.failed else EXIT_OK


def cmd_run(args) -> int:
    spec = parse_task_spec(_read(args.task))
    if args.baseline:
        spec = set_baseline_mode(spec)
    entities = parse_entity_set(_read(args.entities), spec)
    return _execute(spec, entities, args, Path(args.run_dir))


def cmd_resume(args) -> int:
    run_dir = Path(args.run_dir)
    if not (run_dir / MANIFEST).exists():
        raise UsageError(f"no run manifest in {run_dir}")
    spec, entities, _ = load_run_inputs(run_dir)
    return _execute(spec, entities, args, run_dir)


def cmd_compile(args) -> int:
    run_dir = Path(args.run_dir)
    if not (run_dir / MANIFEST).exists():
        raise UsageError(f"no run manifest in {run_dir}")
    table = compile_run(run_dir)
    _out(f"compiled {len(table.rows)} rows -> {run_dir / CURATED_CSV}")
    return EXIT_OK


# -- eval / report ------------------------------------------------------------------


def _spec_for_table(curated_path: Path, task_path: str | None):
    if task_path:
        return parse_task_spec(_read(task_path))
    manifest = curated_path.parent / MANIFEST
    if not manifest.exists():
        raise UsageError(f"no {MANIFEST} next to {curated_path}; pass --task")
    return task_spec_from_dict(json.loads(_read(manifest))["task"])


def cmd_eval(args) -> int:
    curated_path = Path(args.curated)
    spec = _spec_for_table(curated_path, args.task)
    table = CuratedTable.from_csv_text(_read(curated_path), spec)
    truth = load_ground_truth(_read(args.truth), spec)
    rule = MatchRule(
        aliases=load_aliases(_read(args.aliases)) if args.aliases else {},
        year_tolerance=args.year_tolerance,
    )
    report = evaluate(table, truth, rule, args.alpha, baseline=not spec.search_enabled)
    out = Path(args.out) if args.out else curated_path.parent / "eval_report.json"
    _atomic_write_text(out, report.to_json())
    _out(report.to_text())
    _out(f"report written to {out}")
    return EXIT_OK


def cmd_report(args) -> int:
    run_dir = Path(args.run_dir)
    if not (run_dir / MANIFEST).exists():
        raise UsageError(f"no run manifest in {run_dir}")
    spec = task_spec_from_dict(json.loads(_read(run_dir / MANIFEST))["task"])
    costs = costs_from_telemetry(read_telemetry(run_dir / TELEMETRY), spec.pricing)
    baseline = human_baseline(Money.parse(args.wage), args.records_per_hour)
    report = aggregate(costs, baseline)
    _atomic_write_text(run_dir / "cost_report.json", json.dumps(report.to_dict(), indent=2) + "\n")
    _out(report.to_text())
    return EXIT_OK


# -- bootstrap ----------------------------------------------------------------------


def cmd_bootstrap(args) -> int:
    if args.request_file:
        request = _read(args.request_file)
    elif args.request:
        request = args.request
    else:
        raise UsageError("give the request text or --request-file")
    try:
        playbook = Playbook.load(args.playbook)
    except OSError as exc:
        raise UsageError(f"cannot read playbook {args.playbook}: {exc.strerror or exc}") from None
    provider = make_provider(args)
    try:
        if args.entities:
            result = bootstrap_with_entities(request, playbook, _read(args.entities), provider, model_id=args.model)
        else:
            result = bootstrap_discover_entities(request, playbook, provider, model_id=args.model)
    except BootstrapExhausted as exc:
        _out(f"bootstrap exhausted after {len(exc.validation_log)} rejected drafts:")
        for entry in exc.validation_log:
            _out(f"  [{entry['phase']} #{entry['attempt']}] {entry['reason']}")
        if args.log_file:
                    _atomic_write_text(Path(args.log_file), json.dumps({"validation_log": exc.validation_log}, indent=2) + "\n")
        return EXIT_BOOTSTRAP
    target = write_task_files(result, args.tasks_dir)
    spec = result.spec
    mode = "with entity list" if args.entities else "entity discovery"
    _out(f"bootstrap ({mode}) produced task {spec.task_name} in {result.attempts_used} attempt(s)")
    _out(f"attributes  {', '.join(spec.attribute_names)}")
    if result.entity_csv is not None:
        _, rows = read_csv_rows(result.entity_csv)
        _out(f"entities    {len(rows)}")
    _out(f"written to  {target}")
    return EXIT_OK


# -- review -------------------------------------------------------------------------


def _load_answers(path) -> dict[tuple[str, str], str]:
    header, rows = read_csv_rows(_read(path))
    for col in ("entity_id", "attribute", "answer"):
        if col not in header:
            raise UsageError(f"{path}: missing column {col}")
    idx = [header.index(c) for c in ("entity_id", "attribute", "answer")]
    return {(r[idx[0]], r[idx[1]]): r[idx[2]] for r in rows}


def _interpret(answer: str, attr) -> Override | str | None:
    """An Override, SKIP, or None when the answer does not fit the attribute kind."""
    text = answer.strip()
    if not text or text.lower() == SKIP:
        return SKIP
    if text.lower() == CONFIRM_NOT_FOUND:
        return Override("", attr.name, None)
    try:
        parse_value(attr, text)
    except SchemaViolation as exc:
        _out(f"  rejected: {exc.detail}")
        return None
    return Override("", attr.name, text)


def cmd_review(args) -> int:
    run_dir = Path(args.run_dir)
    if not (run_dir / CURATED_CSV).exists() or not (run_dir / MANIFEST).exists():
        _out(f"no compiled table in {run_dir}; run `compile` first")
        return EXIT_USAGE
    spec, entities, _ = load_run_inputs(run_dir)
    table = compile_run(run_dir, write=False)
    pending = table.unresolved()
    if not pending:
        _out("nothing to review")
        return EXIT_OK
    scripted = _load_answers(args.from_file) if args.from_file else None
    records = entities.by_id()
    accepted: list[Override] = []
    _out(f"{len(pending)} unresolved cell(s). Answer with a value, '{SKIP}', or '{CONFIRM_NOT_FOUND}'.")
    for eid, name in pending:
        attr = spec.attribute(name)
        row = table.row(eid)
        cell = row.cells[name]
        _out("")
        _out(f"entity {eid}")
        for col, val in records[eid].values.items():
            _out(f"  {col}: {val}")
        _out(f"  {name} [{attr.value_kind}] status={cell.status} provenance={cell.provenance}")
        while True:
            if scripted is not None:
                answer = scripted.get((eid, name), SKIP)
                _out(f"{name}> {answer}")
            else:
                try:
                    answer = input(f"{name}> ")
                except EOFError:
                    answer = None
            if answer is None:
                break
            decision = _interpret(answer, attr)
            if decision is None and scripted is None:
                continue
            break
        if answer is None:
            _out("input closed; saving answers given so far")
            break
        if isinstance(decision, Override):
            accepted.append(Override(eid, name, decision.value))
    if accepted:
        existing = read_overrides(run_dir / OVERRIDES_CSV)
        new_pairs = {o.pair for o in accepted}
        merged = [o for o in existing if o.pair not in new_pairs] + accepted
        write_overrides(run_dir / OVERRIDES_CSV, merged)
    compile_run(run_dir)
    _out("")
    _out(f"accepted {len(accepted)} override(s); skipped {len(pending) - len(accepted)}")
    return EXIT_OK


# -- parser -------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="webcurate", description="Entity-parallel online data curation with LLM web search.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to standard error")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    def run_like(name, help_text, baseline_flag):
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("task", metavar="TASK_YAML", help="task descriptor (YAML)")
        p.add_argument("entities", metavar="ENTITIES_CSV", help="entity table (CSV)")
        p.add_argument("--run-dir", required=True, metavar="DIR", help="run directory (created or resumed)")
        if baseline_flag:
            p.add_argument("--baseline", action="store_true",
                           help="disable web search and answer from model knowledge only")
        _add_provider_flags(p)
        return p

    run_like("run", "curate every entity of a task, then compile the curated table", True).set_defaults(func=cmd_run)
    run_like("baseline", "alias for `run --baseline`: knowledge-only run with web search disabled", False) \
        .set_defaults(func=cmd_run, baseline=True)

    p = sub.add_parser("resume", help="continue an interrupted run", description="continue an interrupted run")
    p.add_argument("--run-dir", required=True, metavar="DIR", help="run directory to resume")
    _add_provider_flags(p)
    p.set_defaults(func=cmd_resume)

    p = sub.add_parser("compile", help="rebuild curated.csv and curated.jsonl from results and overrides.csv",
                       description="rebuild curated.csv and curated.jsonl from results and overrides.csv")
    p.add_argument("--run-dir", required=True, metavar="DIR", help="settled run directory")
    p.set_defaults(func=cmd_compile)

    p = sub.add_parser("eval", help="score a curated table against ground truth",
                       description="score a curated table against ground truth under both accuracy regimes")
    p.add_argument("curated", metavar="CURATED_CSV", help="curated table written by run/compile")
    p.add_argument("truth", metavar="TRUTH_CSV", help="ground truth keyed by the entity key columns")
    p.add_argument("--aliases", metavar="FILE", help="alias table CSV with columns variant,canonical")
    p.add_argument("--alpha", type=float, default=0.05, metavar="F",
                   help="1 - confidence level of the Clopper-Pearson intervals (default 0.05)")
    p.add_argument("--task", metavar="FILE", help="task YAML (default: the manifest next to CURATED_CSV)")
    p.add_argument("--year-tolerance", type=int, default=0, metavar="N",
                   help="accept year answers within N years of the truth (default 0, exact)")
    p.add_argument("--out", metavar="FILE", help="report path (default: eval_report.json next to CURATED_CSV)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="cost report from a run's telemetry",
                       description="per-record cost distribution, search share and human-labor baseline")
    p.add_argument("--run-dir", required=True, metavar="DIR", help="run directory")
    p.add_argument("--wage", default="20", metavar="DOLLARS",
                   help="research-assistant wage per hour for the human baseline (default 20)")
    p.add_argument("--records-per-hour", type=int, default=30, metavar="N",
                   help="records a person curates per hour (default 30)")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("bootstrap", help="generate task files from a natural-language request",
                       description="generate task.yaml (and entities.csv when none is given) from a request")
    p.add_argument("request", nargs="?", metavar="REQUEST", help="natural-language task request")
    p.add_argument("--request-file", metavar="FILE", help="read the request text from FILE")
    p.add_argument("--playbook", default="CONSTITUTION.md", metavar="FILE",
                   help="repository playbook (default: CONSTITUTION.md)")
    p.add_argument("--entities", metavar="FILE",
                   help="existing entity CSV; without it the entity list is discovered online")
    p.add_argument("--tasks-dir", default="tasks", metavar="DIR",
                   help="where tasks/<task_name>/ is written (default: tasks)")
    p.add_argument("--model", default=DEFAULT_MODEL, metavar="ID", help=f"model id (default {DEFAULT_MODEL})")
    p.add_argument("--log-file", metavar="FILE", help="write the validation log here if bootstrap gives up")
    _add_provider_flags(p)
    p.set_defaults(func=cmd_bootstrap)

    p = sub.add_parser("review", help="resolve not_found and failed cells by hand",
                       description="walk unresolved cells and record human answers in overrides.csv")
    p.add_argument("--run-dir", required=True, metavar="DIR", help="compiled run directory")
    p.add_argument("--from-file", metavar="FILE",
                   help="CSV of scripted answers (entity_id,attribute,answer) instead of the terminal")
    p.set_defaults(func=cmd_review)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_help(sys.stdout)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except AuthFailure as exc:
        _out(f"error: authentication failed: {exc}")
        return EXIT_PROVIDER
    except ProviderError as exc:
        _out(f"error: provider: {exc}")
        return EXIT_PROVIDER
    except (CurationError, UsageError) as exc:
        _out(f"error: {exc}")
        return EXIT_USAGE
    except KeyboardInterrupt:
        _out("interrupted; completed entities are saved, continue with `resume`")
        return EXIT_USAGE
    except BrokenPipeError:
        # output piped into e.g. `head`; silence the flush at interpreter exit
        os.dup2(os.open(os.devnull, os.O_WRONLY), sys.stdout.fileno())
        return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
