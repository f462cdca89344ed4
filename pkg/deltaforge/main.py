"""``deltaforge`` command line: one subcommand per activity, explicit inputs and outputs."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

from deltaforge.config import PipelineConfig
from deltaforge.errors import DeltaForgeError, ParseError, PreconditionViolation
from deltaforge.fixtures.corpus import FixtureSpec, write_fixture
from deltaforge.phase1.section_store import SectionStore
from deltaforge.phase1.sectionizer import SectionizerRules, sectionize_file
from deltaforge.phase2.pipeline import (
    EXIT_FAILURE,
    EXIT_OK,
    EXIT_WARN,
    evaluate,
    load_id_map,
    predictions_from_run,
    run_check,
    run_compare,
)
from deltaforge.phase3.sysml.cache import ValidatedCache, validated_update
from deltaforge.phase3.sysml.checks import static_check
from deltaforge.phase3.sysml.delta import load_delta
from deltaforge.phase3.sysml.elements import Diagnostic, Model
from deltaforge.phase3.sysml.parser import parse
from deltaforge.phase3.sysml.resolver import compile
from deltaforge.phase3.testgen import TestgenConfig, generate_tests, load_bindings, write_outputs
from deltaforge.utils import log_errors, setup_logging, write_json_file

logger = logging.getLogger("deltaforge.main")


def _diagnostics_exit(diagnostics: Sequence[Diagnostic]) -> int:
    for d in diagnostics:
        print(d)
    if any(d.is_error for d in diagnostics):
        return EXIT_FAILURE
    return EXIT_WARN if diagnostics else EXIT_OK


def _load_model(path):
    return parse(Path(path).read_text(encoding="utf-8"))


def _model_and_checks(args) -> Tuple[Model, Optional[Sequence[str]]]:
    """``--model`` wins; otherwise the last_good of ``--cache`` with the cache's enabled checks."""
    checks = getattr(args, "checks", None)
    if args.model:
        return _load_model(args.model), checks
    if args.cache:
        cache = ValidatedCache.open(args.cache)
        return cache.last_good, checks if checks is not None else cache.checks
    raise PreconditionViolation("pass --model or --cache")


# === Phase 1 ===

def cmd_ingest(args) -> int:
    rules = SectionizerRules.from_file(args.rules) if args.rules else SectionizerRules()
    sections = sectionize_file(args.file, rules, args.version)
    store = SectionStore.open(args.store)
    count = store.put_sections(args.version, sections, overwrite=args.overwrite)
    print(f"→ {count} sections of {args.version} stored in {args.store}")
    return EXIT_OK


# === Phase 2 ===

def cmd_compare(args) -> int:
    cfg = PipelineConfig.from_file(args.config, store=args.store)
    summary = run_compare(cfg, Path(args.out) if args.out else None)
    print(f"→ run {summary.run}: {summary.warn_count} warns, {len(summary.failed_sections)} failed sections")
    return summary.exit_code


def cmd_check(args) -> int:
    summary = run_check(args.store, Path(args.out) if args.out else None, args.run)
    print(f"→ run {summary.run} re-checked: {summary.warn_count} warns")
    return summary.exit_code


def cmd_eval(args) -> int:
    if args.pred:
        predictions = load_id_map(args.pred)
    else:
        predictions = predictions_from_run(SectionStore.open(args.store), args.run)
    metrics = evaluate(predictions, load_id_map(args.oracle))
    print(metrics.per_section.to_markdown(index=False, disable_numparse=True))
    print(f"\nprecision {metrics.precision:.3f}  recall {metrics.recall:.3f}  f1 {metrics.f1:.3f}")
    if args.out:
        write_json_file(args.out, metrics.to_dict())
    return EXIT_OK


# === Phase 3 ===

def cmd_sysml_compile(args) -> int:
    model, _ = _model_and_checks(args)
    report = compile(model)
    print(f"→ {report.resolved_count} references resolved, {len(report.unresolved)} unresolved")
    return _diagnostics_exit(report.diagnostics)


def cmd_sysml_check(args) -> int:
    model, checks = _model_and_checks(args)
    report = compile(model)
    if not report.success:
        return _diagnostics_exit(report.diagnostics)
    return _diagnostics_exit(static_check(model, checks))


def cmd_sysml_apply(args) -> int:
    cache_dir = Path(args.cache)
    if (cache_dir / "state.json").exists():
        cache = ValidatedCache.open(cache_dir)
    elif args.model:
        cache = ValidatedCache.init(cache_dir, _load_model(args.model), args.checks)
    else:
        print("no cache at --cache and no --model baseline to start one", file=sys.stderr)
        return EXIT_FAILURE
    if not args.delta:
        print(f"→ cache at revision {cache.revision}")
        return EXIT_OK
    store = SectionStore.open(args.store) if args.store else None
    outcome = validated_update(cache, load_delta(args.delta), store)
    print(f"→ delta {outcome.delta_id} {outcome.outcome}; last_good at revision {outcome.revision}")
    if not outcome.accepted:
        for d in outcome.diagnostics:
            print(d)
        return EXIT_FAILURE
    return EXIT_WARN if outcome.diagnostics else EXIT_OK


def cmd_testgen(args) -> int:
    cache = ValidatedCache.open(args.cache)
    cfg = TestgenConfig.from_file(args.config) if args.config else TestgenConfig()
    tests, monitors = generate_tests(cache, args.delta, load_bindings(args.bindings), cfg)
    machine, human = write_outputs(tests, monitors, args.out)
    print(f"→ {len(monitors)} monitors, {len(tests)} tests: {machine}, {human}")
    return EXIT_OK


def cmd_fixture(args) -> int:
    spec = FixtureSpec(seed=args.seed, n_sections=args.sections, n_added=args.added, n_removed=args.removed)
    paths = write_fixture(args.out, spec)
    print(f"→ fixture written: {paths['config']}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="deltaforge", description="Requirements-document diffing and design-model update")
    parser.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING ...")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="Sectionize a document version into the store")
    p.add_argument("--version", required=True)
    p.add_argument("--file", required=True)
    p.add_argument("--store", required=True)
    p.add_argument("--rules", help="Sectionizer rules JSON")
    p.add_argument("--overwrite", action="store_true")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("compare", help="Full v1/v2 comparison run")
    p.add_argument("--store", help="Overrides the store path of the config")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("check", help="Re-run checkers from persisted artifacts")
    p.add_argument("--store", required=True)
    p.add_argument("--out")
    p.add_argument("--run", type=int, help="Compare run number (default: latest)")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("eval", help="Precision/recall of retrieved sections against an oracle")
    source = p.add_mutually_exclusive_group(required=True)
    source.add_argument("--pred", help="JSON map v2 id -> [v1 ids]")
    source.add_argument("--store", help="Take predictions from a compare run")
    p.add_argument("--run", type=int)
    p.add_argument("--oracle", required=True)
    p.add_argument("--out", help="Write metrics JSON here")
    p.set_defaults(func=cmd_eval)

    sysml = sub.add_parser("sysml", help="SysML subset kernel").add_subparsers(dest="sysml_command", required=True)
    p = sysml.add_parser("compile")
    p.add_argument("--model")
    p.add_argument("--cache", help="Use the last_good model of this cache when --model is absent")
    p.set_defaults(func=cmd_sysml_compile)
    p = sysml.add_parser("check")
    p.add_argument("--model")
    p.add_argument("--cache", help="Use the last_good model and checks of this cache when --model is absent")
    p.add_argument("--checks", nargs="*", help="Check ids to enable (default: all)")
    p.set_defaults(func=cmd_sysml_check)
    p = sysml.add_parser("apply")
    p.add_argument("--model", help="Baseline model, used when the cache does not exist yet")
    p.add_argument("--delta")
    p.add_argument("--cache", required=True)
    p.add_argument("--checks", nargs="*")
    p.add_argument("--store", help="Also record accepted checkpoints in this store")
    p.set_defaults(func=cmd_sysml_apply)

    p = sub.add_parser("testgen", help="Monitors and boundary tests for an accepted delta")
    p.add_argument("--cache", required=True)
    p.add_argument("--delta", required=True, help="Delta file or accepted delta id")
    p.add_argument("--bindings", required=True)
    p.add_argument("--config", help="Nominal context and epsilon overrides JSON")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_testgen)

    p = sub.add_parser("fixture", help="Write a synthetic document pair with oracles and mocks")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sections", type=int, default=6)
    p.add_argument("--added", type=int, default=1)
    p.add_argument("--removed", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fixture)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(args.log_level)
    try:
        return args.func(args)
    except ParseError as e:
        for d in e.diagnostics:
            print(d, file=sys.stderr)
        log_errors({"command": args.command, **e.to_dict()}, logger)
        return EXIT_FAILURE
    except DeltaForgeError as e:
        log_errors({"command": args.command, **e.to_dict()}, logger)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
