"""Schema-driven, entity-parallel online data curation."""

__version__ = "0.1.0"

from .bootstrap import bootstrap_discover_entities, bootstrap_with_entities, set_baseline_mode
from .compiler import apply_overrides, compile_run
from .engine import curate_entity, parse_structured_output, retry_policy, run_task
from .evaluator import clopper_pearson, evaluate, match_value, tally
from .gateway import ReplayProvider, RecordingProvider, build_output_schema, request_key
from .ledger import Money, PricingTable, aggregate, cost_of, human_baseline
from .taskconfig import parse_entity_set, parse_task_spec, render_prompt

__all__ = [
    "Money",
    "PricingTable",
    "RecordingProvider",
    "ReplayProvider",
    "aggregate",
    "apply_overrides",
    "bootstrap_discover_entities",
    "bootstrap_with_entities",
    "build_output_schema",
    "clopper_pearson",
    "compile_run",
    "cost_of",
    "curate_entity",
    "evaluate",
    "human_baseline",
    "match_value",
    "parse_entity_set",
    "parse_structured_output",
    "parse_task_spec",
    "render_prompt",
    "request_key",
    "retry_policy",
    "run_task",
    "set_baseline_mode",
    "tally",
]
