"""Command-line entry point: collect, screen, metrics, simulate, report."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from app.models.trial import Condition
from app.routers.schemas import ReportFormat
from app.services.collector import CollectorConfig, CollectorError, run_condition
from app.services.config import ScreeningConfig, get_default_endpoint, load_screening_config
from app.services.ingest import TrialFileError, TrialFormat, group_cells, load_items, read_trials, write_trials
from app.services.report import (
    emit_report,
    evaluate_all,
    load_report,
    render_text_table,
    summarise_run,
    to_jsonable,
)
from app.services.run_logger import configure_logging
from app.services.screening import Tier
from app.services.synthgen import GenSpec, GenSpecError, generate_run

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INPUT_ERROR = 1
EXIT_INVALID_CELL = 2

DEFAULTS = ScreeningConfig()

PROTOCOL_EPILOG = (
    "Published protocol defaults: binarisation threshold "
    f"{DEFAULTS.binarize_threshold:.2f} (HIGH if confidence >= threshold); ceiling threshold "
    f"{DEFAULTS.ceiling_threshold:.2f}; exclusion when confidence-parse failure > "
    f"{DEFAULTS.exclusion_threshold:.2f}; Fp >= {DEFAULTS.fp_threshold:.2f} with Wilson lower > "
    f"{DEFAULTS.fp_bound:.2f}; L >= {DEFAULTS.l_threshold:.2f} with Wilson lower > {DEFAULTS.l_bound:.2f}; "
    f"RBS > {DEFAULTS.rbs_threshold:.2f} with interval excluding zero; TRIN warning at "
    f"{DEFAULTS.trin_warning:.2f}; every 2x2 cell >= {DEFAULTS.min_cell_count}; "
    f"{DEFAULTS.bootstrap_resamples} bootstrap resamples, seed {DEFAULTS.bootstrap_seed}. "
    "Any override is logged as a warning and stamped into the report."
)


class CliParser(argparse.ArgumentParser):
    """Argument parser whose usage errors exit 1, keeping 2 for the validity gate."""

    def error(self, message: str) -> None:  # type: ignore[override]
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT_ERROR, f"{self.prog}: error: {message}\n")


def _add_threshold_options(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("protocol thresholds")
    group.add_argument(
        "--binarize-threshold", type=float, default=None,
        help=f"binarisation threshold (default {DEFAULTS.binarize_threshold:.2f})",
    )
    group.add_argument(
        "--ceiling-threshold", type=float, default=None,
        help=f"ceiling threshold (default {DEFAULTS.ceiling_threshold:.2f})",
    )
    group.add_argument(
        "--exclusion-threshold", type=float, default=None,
        help=f"parse-failure exclusion threshold, strict (default {DEFAULTS.exclusion_threshold:.2f})",
    )
    group.add_argument(
        "--bootstrap-resamples", type=int, default=None,
        help=f"bootstrap resamples (default {DEFAULTS.bootstrap_resamples})",
    )
    group.add_argument(
        "--seed", type=int, default=None,
        help=f"bootstrap and cross-validation seed (default {DEFAULTS.bootstrap_seed})",
    )


def _add_input_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("input", type=Path, help="trial file")
    parser.add_argument(
        "--format", dest="input_format", choices=[f.value for f in TrialFormat],
        default=TrialFormat.JSONL.value, help="trial file format (default jsonl)",
    )
    parser.add_argument("-o", "--output", type=Path, default=None, help="output path (default stdout)")
    parser.add_argument("--workers", type=int, default=1, help="cells evaluated in parallel (default 1)")


def build_parser() -> argparse.ArgumentParser:
    parser = CliParser(
        prog="confidence-screen",
        description="Validity screening for verbalised LLM confidence.",
        epilog=PROTOCOL_EPILOG,
    )
    parser.add_argument("--log-level", default="WARNING", help="logging level (default WARNING)")
    parser.add_argument("--log-file", default=None, help="also write logs to this file")
    sub = parser.add_subparsers(dest="command", required=True)

    screen = sub.add_parser("screen", help="screen every cell of a trial file", epilog=PROTOCOL_EPILOG)
    _add_input_options(screen)
    _add_threshold_options(screen)
    screen.add_argument(
        "--report-format", choices=[f.value for f in ReportFormat], default=ReportFormat.JSON.value,
        help="report format (default json)",
    )
    screen.add_argument(
        "--fail-on-invalid", action="store_true",
        help=f"exit {EXIT_INVALID_CELL} when any cell is INVALID",
    )

    metrics = sub.add_parser("metrics", help="compute metrics for every cell", epilog=PROTOCOL_EPILOG)
    _add_input_options(metrics)
    _add_threshold_options(metrics)

    collect = sub.add_parser("collect", help="elicit trials from a chat-completions endpoint")
    collect.add_argument("--items", type=Path, required=True, help="items JSONL (item_id, question, gold_aliases)")
    collect.add_argument("--model", required=True, help="model name sent to the endpoint")
    collect.add_argument("--condition", choices=[c.value for c in Condition], default=Condition.NUM.value)
    collect.add_argument(
        "--endpoint", default=None,
        help="base URL of the endpoint (default $CONFIDENCE_ENDPOINT_URL)",
    )
    collect.add_argument("--seed", type=int, default=42, help="decoding seed (default 42)")
    collect.add_argument("--timeout", type=float, default=60.0, help="per-request timeout in seconds (default 60)")
    collect.add_argument("--retries", type=int, default=3, help="retries per request (default 3)")
    collect.add_argument("--parallelism", type=int, default=4, help="requests in flight (default 4)")
    collect.add_argument("--top-logprobs", type=int, default=5, help="top-k logprobs requested (default 5)")
    collect.add_argument("--run-id", default=None, help="run identifier (default model-condition-seed)")
    collect.add_argument("-o", "--output", type=Path, required=True, help="trial file to write")
    collect.add_argument(
        "--format", dest="output_format", choices=[f.value for f in TrialFormat], default=TrialFormat.JSONL.value,
    )

    simulate = sub.add_parser("simulate", help="generate synthetic cells")
    simulate.add_argument("--n", type=int, default=524, help="trials per cell (default 524)")
    simulate.add_argument("--accuracy", type=float, default=0.65, help="fraction correct (default 0.65)")
    simulate.add_argument("--ceiling-mass", type=float, default=0.92, help="fraction at >= 0.95 (default 0.92)")
    simulate.add_argument("--off-ceiling-low", type=float, default=0.5, help="off-ceiling lower bound (default 0.5)")
    simulate.add_argument("--off-ceiling-high", type=float, default=0.95, help="off-ceiling upper bound, exclusive (default 0.95)")
    simulate.add_argument("--min-off-ceiling", type=float, default=0.0, help="required off-ceiling share (default 0)")
    simulate.add_argument("--parse-fail-correct", type=float, default=0.0, help="parse-failure rate among correct trials")
    simulate.add_argument("--parse-fail-incorrect", type=float, default=0.0, help="parse-failure rate among incorrect trials")
    simulate.add_argument("--logprob-r2", type=float, default=None, help="planted logprob/confidence R^2")
    simulate.add_argument("--trace-rho", type=float, default=None, help="planted partial trace/confidence rho")
    simulate.add_argument("--target-auroc", type=float, default=None, help="planted type-2 AUROC")
    simulate.add_argument("--resolution", type=float, default=0.01, help="confidence grid step; 0 for continuous")
    simulate.add_argument("--model-id", default="synthetic")
    simulate.add_argument("--models", type=int, default=1, help="number of models (default 1)")
    simulate.add_argument(
        "--conditions", nargs="+", choices=[c.value for c in Condition], default=[Condition.NUM.value],
    )
    simulate.add_argument("--seed", type=int, default=42, help="generator seed (default 42)")
    simulate.add_argument("-o", "--output", type=Path, required=True, help="trial file to write")
    simulate.add_argument(
        "--format", dest="output_format", choices=[f.value for f in TrialFormat], default=TrialFormat.JSONL.value,
    )

    report = sub.add_parser("report", help="render a JSON screening report as a text table")
    report.add_argument("input", type=Path, help="JSON report produced by `screen`")
    report.add_argument("-o", "--output", type=Path, default=None, help="output path (default stdout)")
    return parser


def _write(text: str, output: Optional[Path]) -> None:
    if output is None:
        sys.stdout.write(text)
        return
    output.parent.mkdir(parents=True, exist_ok=True)
    output.write_text(text, encoding="utf-8")


def _screening_config(args: argparse.Namespace) -> ScreeningConfig:
    config = load_screening_config().with_overrides(
        binarize_threshold=args.binarize_threshold,
        ceiling_threshold=args.ceiling_threshold,
        exclusion_threshold=args.exclusion_threshold,
        bootstrap_resamples=args.bootstrap_resamples,
        bootstrap_seed=args.seed,
        cv_seed=args.seed,
    )
    config.warn_if_non_default()
    return config


def _load_cells(args: argparse.Namespace):
    batch = read_trials(args.input, args.input_format)
    return group_cells(batch.records)


def cmd_screen(args: argparse.Namespace) -> int:
    config = _screening_config(args)
    cells = _load_cells(args)
    results = evaluate_all(cells, config, workers=args.workers)
    if args.report_format == ReportFormat.TEXT.value:
        text = emit_report(results, ReportFormat.TEXT, summarise_run(results, cells, config))
    else:
        text = emit_report(results, ReportFormat.JSON)
    _write(text, args.output)

    if args.fail_on_invalid and any(r.tier == Tier.INVALID for r in results):
        logger.warning("At least one cell is INVALID")
        return EXIT_INVALID_CELL
    return EXIT_OK


def cmd_metrics(args: argparse.Namespace) -> int:
    config = _screening_config(args)
    cells = _load_cells(args)
    results = evaluate_all(cells, config, workers=args.workers)
    payload = {
        "cells": [
            {"model_id": r.model_id, "condition": r.condition, "metrics": to_jsonable(r.metrics)}
            for r in results
        ],
        "summary": to_jsonable(summarise_run(results, cells, config)),
    }
    _write(json.dumps(payload, indent=2) + "\n", args.output)
    return EXIT_OK


def cmd_collect(args: argparse.Namespace) -> int:
    endpoint = args.endpoint or get_default_endpoint()
    if not endpoint:
        raise CollectorError("no endpoint: pass --endpoint or set CONFIDENCE_ENDPOINT_URL")
    config = CollectorConfig(
        endpoint=endpoint,
        model=args.model,
        condition=Condition(args.condition),
        seed=args.seed,
        timeout=args.timeout,
        retries=args.retries,
        top_logprobs=args.top_logprobs,
        parallelism=args.parallelism,
        items_path=str(args.items),
        run_id=args.run_id,
    )
    trials = run_condition(config, load_items(args.items))
    count = write_trials(trials, args.output, args.output_format)
    logger.info(f"Wrote {count} trials to {args.output}")
    return EXIT_OK


def cmd_simulate(args: argparse.Namespace) -> int:
    spec = GenSpec(
        n=args.n,
        accuracy=args.accuracy,
        ceiling_mass=args.ceiling_mass,
        off_ceiling_low=args.off_ceiling_low,
        off_ceiling_high=args.off_ceiling_high,
        min_off_ceiling=args.min_off_ceiling,
        parse_fail_rate_correct=args.parse_fail_correct,
        parse_fail_rate_incorrect=args.parse_fail_incorrect,
        planted_logprob_r2=args.logprob_r2,
        planted_trace_rho=args.trace_rho,
        target_auroc=args.target_auroc,
        resolution=args.resolution or None,
        model_id=args.model_id,
        run_id=f"simulate-seed{args.seed}",
        seed=args.seed,
    )
    trials = generate_run(spec, models=args.models, conditions=args.conditions)
    write_trials(trials, args.output, args.output_format)
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    if not args.input.is_file():
        raise TrialFileError(f"report file not found: {args.input}")
    rows, summary = load_report(args.input.read_text(encoding="utf-8"))
    _write(render_text_table(rows, summary), args.output)
    return EXIT_OK


COMMANDS = {
    "screen": cmd_screen,
    "metrics": cmd_metrics,
    "collect": cmd_collect,
    "simulate": cmd_simulate,
    "report": cmd_report,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(getattr(logging, str(args.log_level).upper(), logging.WARNING), args.log_file)

    try:
        return COMMANDS[args.command](args)
    except (TrialFileError, CollectorError, GenSpecError, ValueError, OSError) as e:
        logger.error(str(e))
        sys.stderr.write(f"error: {e}\n")
        return EXIT_INPUT_ERROR


if __name__ == "__main__":
    sys.exit(main())
