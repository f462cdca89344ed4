"""
End-to-end comparison run (N1 -> N2 -> consensus -> N3 -> merge -> checks),
the checker-only rerun from persisted artifacts, and the precision/recall
harness against an oracle.

Reports are assembled from the store alone, never from in-memory state, so
``run_check`` reproduces ``run_compare`` output byte for byte.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Set, Tuple

import pandas as pd

from deltaforge.config import PipelineConfig
from deltaforge.errors import DeltaForgeError, PreconditionViolation, StoreError, UnknownSectionInPredictions
from deltaforge.phase1.section_store import ArtifactRecord, SectionStore
from deltaforge.phase1.sectionizer import Section
from deltaforge.phase2 import checkers, retrieval
from deltaforge.phase2.agent.gateway import LLMGateway
from deltaforge.phase2.checkers import CheckReport
from deltaforge.phase2.delta_extract import ChangeTuple, extract_changes, merge_changes, render_changes_markdown, summarize_section
from deltaforge.phase2.retrieval import ConsensusSet
from deltaforge.phase2.similarity import TfidfIndex, fit
from deltaforge.utils import canonical_json, fingerprint, load_json_file, log_errors, section_sort_key, sorted_ids, write_json_file, write_text_file

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_WARN = 1
EXIT_FAILURE = 2

OK = "ok"
FAILED = "failed"


class _StageError(Exception):
    def __init__(self, stage: str, error: DeltaForgeError):
        super().__init__(str(error))
        self.stage = stage
        self.error = error


@dataclass
class RunSummary:
    run: int
    report: Dict[str, Any]
    check_reports: List[CheckReport] = field(default_factory=list)

    @property
    def failed_sections(self) -> List[str]:
        return [s["section_id"] for s in self.report["sections"] if s["status"] == FAILED]

    @property
    def warn_count(self) -> int:
        return sum(r.warn_count for r in self.check_reports)

    @property
    def exit_code(self) -> int:
        return EXIT_WARN if self.warn_count or self.failed_sections else EXIT_OK


def fit_index(store: SectionStore, cfg: PipelineConfig) -> TfidfIndex:
    texts = [s.text for v in (cfg.v1_version, cfg.v2_version) for s in store.sections(v)]
    return fit(texts)


def _start_run(store: SectionStore, cfg: PipelineConfig) -> int:
    return store.put_artifact(ArtifactRecord(
        kind="run_config",
        section_id=None,
        producer=fingerprint(cfg.to_dict()),
        payload={"config": cfg.to_dict()},
    ))


# === N2 + consensus ===

def _retrieve(v2sec: Section, store: SectionStore, cfg: PipelineConfig, gateway: LLMGateway, run: int) -> List[retrieval.RetrievalResult]:
    rc = cfg.retrieval
    backends = cfg.retrieval_backends
    if rc.variant == "single":
        return [retrieval.find_relevant_sec(v2sec, store, backends[0], gateway, cfg.v1_version, run)]
    if rc.variant == "monolithic":
        return [retrieval.find_relevant_sec_monolithic(v2sec, store, backends[0], gateway, cfg.v1_version, run)]
    if rc.variant == "redundant":
        return retrieval.find_relevant_sec_redundant(
            v2sec, store, backends[0], rc.n_seeds, gateway, rc.diversity_temperature, cfg.v1_version, run
        )
    return retrieval.find_relevant_sec_different_llms(v2sec, store, backends, gateway, cfg.v1_version, run)


def _process_section(v2sec: Section, store: SectionStore, index: TfidfIndex, cfg: PipelineConfig,
                     gateway: LLMGateway, run: int) -> CheckReport:
    summary = None
    if v2sec.text.strip():
        try:
            summary = summarize_section(v2sec, cfg.backend(cfg.summary_backend), store, gateway, run)
        except DeltaForgeError as e:
            raise _StageError("summary", e) from e

    try:
        results = _retrieve(v2sec, store, cfg, gateway, run)
        consensus = retrieval.merge_consensus(results, cfg.retrieval.strategy)
        if cfg.retrieval.prune_alpha:
            consensus, _ = checkers.prune_candidates(v2sec, consensus, store, index, cfg.checks, cfg.v1_version)
        retrieval.persist_consensus(store, consensus, run)
    except DeltaForgeError as e:
        raise _StageError("retrieval", e) from e

    v1texts = [(sid, store.fetch_section(cfg.v1_version, sid).text) for sid in sorted_ids(consensus.member_ids)]
    per_criterion: List[List[ChangeTuple]] = []
    failures: List[Tuple[str, DeltaForgeError]] = []
    for criterion in cfg.criteria:
        try:
            per_criterion.append(extract_changes(
                v2sec, v1texts, criterion, cfg.backend(cfg.extract_backend), store, gateway,
                summary if cfg.summary_in_extraction else None, run,
            ))
        except DeltaForgeError as e:
            logger.warning("section %s: %s extraction failed: %s", v2sec.section_id, criterion.id, e)
            failures.append((criterion.id, e))
    if failures:
        raise _StageError(f"extraction:{','.join(c for c, _ in failures)}", failures[0][1])

    report = checkers.run_all_checks(
        v2sec, consensus, summary, merge_changes(per_criterion), store, index, cfg.checks, cfg.nli, cfg.v1_version
    )
    checkers.persist_report(store, report, cfg.checks, run)
    return report


def run_compare(cfg: PipelineConfig, out_dir: Optional[Path] = None, gateway: Optional[LLMGateway] = None) -> RunSummary:
    """
    Full comparison of the ingested v2 against v1. Section failures are
    recorded and skipped; store and config errors end the run.
    """
    store = SectionStore.open(cfg.store)
    v2_sections = store.sections(cfg.v2_version)
    store.sections(cfg.v1_version)
    gateway = gateway or LLMGateway(cfg.gateway)
    index = fit_index(store, cfg)
    run = _start_run(store, cfg)
    logger.info("run %d: comparing %d v2 sections (variant %s, strategy %s)",
                run, len(v2_sections), cfg.retrieval.variant, cfg.retrieval.strategy)

    def work(v2sec: Section) -> None:
        try:
            _process_section(v2sec, store, index, cfg, gateway, run)
        except StoreError:
            raise
        except _StageError as e:
            if isinstance(e.error, StoreError):
                raise e.error
            _record_failure(store, v2sec.section_id, e.stage, e.error, run)
        except DeltaForgeError as e:
            _record_failure(store, v2sec.section_id, "section", e, run)

    with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
        # list() surfaces the first StoreError
        list(pool.map(work, v2_sections))

    return _finish(store, cfg, run, out_dir)


def _record_failure(store: SectionStore, section_id: str, stage: str, error: DeltaForgeError, run: int) -> None:
    log_errors({"run": run, "section_id": section_id, "stage": stage, **error.to_dict()}, logger)
    store.put_artifact(ArtifactRecord(
        kind="section_failure",
        section_id=section_id,
        producer=fingerprint({"stage": stage}),
        payload={"run": run, "stage": stage, "error": error.to_dict()},
    ))


def latest_run(store: SectionStore) -> int:
    record = store.latest_artifact("run_config")
    if record is None:
        raise PreconditionViolation(f"store {store.path} holds no compare run")
    return record.revision


def run_check(store_path, out_dir: Optional[Path] = None, run: Optional[int] = None,
              cfg: Optional[PipelineConfig] = None) -> RunSummary:
    """Re-runs every checker from the persisted artifacts of one compare run (default: latest)."""
    store = SectionStore.open(store_path)
    run = run or latest_run(store)
    records = [r for r in store.get_artifacts("run_config", None) if r.revision == run]
    if not records:
        raise PreconditionViolation(f"no compare run {run} in store {store.path}")
    cfg = cfg or PipelineConfig.from_persisted(records[-1].payload["config"])
    index = fit_index(store, cfg)
    logger.info("re-checking run %d from persisted artifacts", run)

    for v2sec in store.sections(cfg.v2_version):
        sid = v2sec.section_id
        if store.latest_artifact("section_failure", sid, run) is not None:
            continue
        consensus_record = store.latest_artifact("consensus", sid, run)
        if consensus_record is None:
            logger.warning("run %d: section %s has no consensus artifact; skipped", run, sid)
            continue
        consensus = ConsensusSet.from_payload(sid, consensus_record.payload)
        summary_record = store.latest_artifact("summary", sid, run)
        summary = summary_record.payload["summary"] if summary_record else None
        report = checkers.run_all_checks(
            v2sec, consensus, summary, _persisted_changes(store, sid, run, cfg), store, index,
            cfg.checks, cfg.nli, cfg.v1_version,
        )
        checkers.persist_report(store, report, cfg.checks, run)
    return _finish(store, cfg, run, out_dir)


def _persisted_changes(store: SectionStore, section_id: str, run: int, cfg: PipelineConfig) -> List[ChangeTuple]:
    by_criterion: Dict[str, List[ChangeTuple]] = {}
    for record in store.get_artifacts("changes", section_id):
        if record.payload.get("run") == run:
            by_criterion[record.payload["criterion_id"]] = [ChangeTuple.from_dict(t) for t in record.payload["tuples"]]
    return merge_changes(by_criterion.get(c.id, []) for c in cfg.criteria)


# === Reports ===

def assemble_report(store: SectionStore, cfg: PipelineConfig, run: int) -> Tuple[Dict[str, Any], List[CheckReport]]:
    """Report content for one run, built only from persisted artifacts; carries no revisions or timestamps."""
    entries: List[Dict[str, Any]] = []
    reports: List[CheckReport] = []
    for v2sec in store.sections(cfg.v2_version):
        sid = v2sec.section_id
        entry: Dict[str, Any] = {"section_id": sid, "heading": v2sec.heading}
        failure = store.latest_artifact("section_failure", sid, run)
        check = store.latest_artifact("check_report", sid, run)
        if failure is not None or check is None:
            entry["status"] = FAILED
            entry["error"] = failure.payload if failure is not None else {"stage": "checks", "error": {"error": "missing_check_report"}}
            entries.append(entry)
            continue
        report = CheckReport.from_payload(check.payload)
        reports.append(report)
        consensus = store.latest_artifact("consensus", sid, run)
        summary = store.latest_artifact("summary", sid, run)
        entry.update({
            "status": OK,
            "check_status": report.status,
            "warn_count": report.warn_count,
            "summary": summary.payload["summary"] if summary else None,
            "v1_section_ids": consensus.payload["member_ids"] if consensus else [],
            "pruned_ids": consensus.payload.get("pruned_ids", []) if consensus else [],
            "changes": [t.to_dict() for t in _persisted_changes(store, sid, run, cfg)],
            "checks": [o.to_dict() for o in report.outcomes],
        })
        entries.append(entry)
    report = {
        "sections": entries,
        "totals": {
            "sections": len(entries),
            "failed": sum(1 for e in entries if e["status"] == FAILED),
            "changes": sum(len(e.get("changes", [])) for e in entries),
            "warns": sum(r.warn_count for r in reports),
        },
    }
    return report, reports


def render_report_markdown(report: Mapping[str, Any]) -> str:
    totals = report["totals"]
    lines = [
        "# Change report",
        "",
        f"{totals['sections']} sections, {totals['changes']} changes, {totals['warns']} checker warns, "
        f"{totals['failed']} failed sections.",
        "",
    ]
    for entry in report["sections"]:
        lines.append(f"## {entry['section_id']} {entry['heading']}")
        if entry["status"] == FAILED:
            error = entry["error"]
            lines += [f"**failed** at `{error.get('stage')}`: {error.get('error', {}).get('message', '')}", ""]
            continue
        lines.append(f"checks: **{entry['check_status']}** ({entry['warn_count']} warns); "
                     f"related v1 sections: {', '.join(entry['v1_section_ids']) or 'none'}")
        lines.append("")
        lines.append(render_changes_markdown([ChangeTuple.from_dict(t) for t in entry["changes"]]))
    return "\n".join(lines)


def write_reports(out_dir: Path, report: Mapping[str, Any], check_reports: Sequence[CheckReport]) -> None:
    out_dir = Path(out_dir)
    write_json_file(out_dir / "report.json", report)
    write_text_file(out_dir / "report.md", render_report_markdown(report))
    checks = {r.subject: r.to_payload() for r in sorted(check_reports, key=lambda r: section_sort_key(r.subject))}
    write_text_file(out_dir / "check_report.json", canonical_json(checks) + "\n")
    write_text_file(out_dir / "review.md", checkers.render_review_sheet(check_reports))
    changes = [t for e in report["sections"] for t in e.get("changes", [])]
    write_json_file(out_dir / "changes.json", changes)


def _finish(store: SectionStore, cfg: PipelineConfig, run: int, out_dir: Optional[Path]) -> RunSummary:
    report, check_reports = assemble_report(store, cfg, run)
    out_dir = out_dir or cfg.report_dir
    if out_dir is not None:
        write_reports(Path(out_dir), report, check_reports)
        logger.info("run %d: reports written to %s", run, out_dir)
    summary = RunSummary(run, report, check_reports)
    logger.info("run %d finished: %d warns, %d failed sections", run, summary.warn_count, len(summary.failed_sections))
    return summary


# === Evaluation ===

@dataclass(frozen=True)
class PRMetrics:
    tp: int
    fp: int
    fn: int
    per_section: pd.DataFrame = field(compare=False, repr=False)

    @property
    def precision(self) -> float:
        return _ratio(self.tp, self.tp + self.fp)

    @property
    def recall(self) -> float:
        return _ratio(self.tp, self.tp + self.fn)

    @property
    def f1(self) -> float:
        return _f1(self.precision, self.recall)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "tp": self.tp, "fp": self.fp, "fn": self.fn,
            "precision": self.precision, "recall": self.recall, "f1": self.f1,
            "per_section": self.per_section.to_dict(orient="records"),
        }


def _ratio(num: int, den: int) -> float:
    return 1.0 if den == 0 else num / den


def _f1(p: float, r: float) -> float:
    return 0.0 if p + r == 0 else 2 * p * r / (p + r)


def evaluate(predictions: Mapping[str, Set[str]], oracle: Mapping[str, Set[str]]) -> PRMetrics:
    """Micro-averaged precision and recall of predicted v1 ids per v2 section; 0/0 counts as 1."""
    unknown = set(predictions) - set(oracle)
    if unknown:
        raise UnknownSectionInPredictions(sorted(unknown))
    rows = []
    for sid in sorted_ids(oracle):
        truth = set(oracle[sid])
        pred = set(predictions.get(sid, ()))
        tp, fp, fn = len(pred & truth), len(pred - truth), len(truth - pred)
        p, r = _ratio(tp, tp + fp), _ratio(tp, tp + fn)
        rows.append({"section": sid, "tp": tp, "fp": fp, "fn": fn, "precision": p, "recall": r, "f1": _f1(p, r)})
    frame = pd.DataFrame(rows, columns=["section", "tp", "fp", "fn", "precision", "recall", "f1"])
    return PRMetrics(
        tp=int(frame["tp"].sum()),
        fp=int(frame["fp"].sum()),
        fn=int(frame["fn"].sum()),
        per_section=frame,
    )


def predictions_from_run(store: SectionStore, run: Optional[int] = None, v2_version: str = "v2") -> Dict[str, Set[str]]:
    """Consensus member ids of a compare run, as an evaluate() prediction map."""
    run = run or latest_run(store)
    predictions: Dict[str, Set[str]] = {}
    for sid, _ in store.list_sections(v2_version):
        record = store.latest_artifact("consensus", sid, run)
        if record is not None:
            predictions[sid] = set(record.payload["member_ids"])
    return predictions


def load_id_map(path) -> Dict[str, Set[str]]:
    data = load_json_file(path)
    if not isinstance(data, dict):
        raise PreconditionViolation(f"{path} must map v2 section ids to arrays of v1 ids")
    return {str(k): {str(i) for i in v} for k, v in data.items()}
