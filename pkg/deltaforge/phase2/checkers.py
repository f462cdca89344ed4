"""
Classical necessary-condition checks over the neural outputs.

Checks only flag: inputs are never modified, and every warn carries the
scores that triggered it.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from deltaforge.errors import ConfigError, MalformedResponse
from deltaforge.phase1.section_store import ArtifactRecord, SectionStore
from deltaforge.phase1.sectionizer import Section
from deltaforge.phase2.agent.nli import NliBackendSpec, NliUnreachable, classify, top_label
from deltaforge.phase2.delta_extract import ChangeTuple
from deltaforge.phase2.retrieval import ConsensusSet
from deltaforge.phase2.similarity import TfidfIndex, cosine
from deltaforge.utils import fingerprint, normalize_ws, section_sort_key, sha256_hex, sorted_ids

logger = logging.getLogger(__name__)

ALPHA = 30.0
K = 10
BETA = 0.35
KAPPA = 0.5

PASS, SKIP, WARN = "pass", "skip", "warn"
STATUS_RANK = {PASS: 0, SKIP: 1, WARN: 2}

RELEVANCE = "relevance"
SUMMARY = "summary"
EVIDENCE_V1_SENTINEL = "evidence_v1_sentinel"
EVIDENCE_V2_SENTINEL = "evidence_v2_sentinel"
EVIDENCE_VERBATIM = "evidence_verbatim"
NLI = "nli"


@dataclass(frozen=True)
class CheckConfig:
    alpha_percent: float = ALPHA
    K: int = K
    beta: float = BETA
    kappa: float = KAPPA
    rng_seed: int = 0

    def __post_init__(self):
        if not 0 <= self.alpha_percent <= 100:
            raise ConfigError(f"alpha_percent must lie in [0, 100], got {self.alpha_percent}")
        if self.K < 1:
            raise ConfigError(f"K must be >= 1, got {self.K}")
        for name in ("beta", "kappa"):
            if not 0 <= getattr(self, name) <= 1:
                raise ConfigError(f"{name} must lie in [0, 1], got {getattr(self, name)}")

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "CheckConfig":
        return cls(
            alpha_percent=float(data.get("alpha_percent", ALPHA)),
            K=int(data.get("K", K)),
            beta=float(data.get("beta", BETA)),
            kappa=float(data.get("kappa", KAPPA)),
            rng_seed=int(data.get("rng_seed", 0)),
        )

    def to_dict(self) -> Dict[str, Any]:
        return {"alpha_percent": self.alpha_percent, "K": self.K, "beta": self.beta,
                "kappa": self.kappa, "rng_seed": self.rng_seed}


@dataclass(frozen=True)
class CheckOutcome:
    check_id: str
    status: str
    subject: str
    details: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return {"check_id": self.check_id, "status": self.status, "subject": self.subject, "details": self.details}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "CheckOutcome":
        return cls(data["check_id"], data["status"], data["subject"], dict(data.get("details", {})))


@dataclass(frozen=True)
class CheckReport:
    subject: str
    outcomes: Tuple[CheckOutcome, ...]

    @property
    def status(self) -> str:
        return worst_status(o.status for o in self.outcomes)

    @property
    def warn_count(self) -> int:
        return sum(1 for o in self.outcomes if o.status == WARN)

    def to_payload(self) -> Dict[str, Any]:
        return {
            "subject": self.subject,
            "status": self.status,
            "warn_count": self.warn_count,
            "outcomes": [o.to_dict() for o in self.outcomes],
        }

    @classmethod
    def from_payload(cls, payload: Mapping[str, Any]) -> "CheckReport":
        return cls(payload["subject"], tuple(CheckOutcome.from_dict(o) for o in payload["outcomes"]))


def worst_status(statuses: Iterable[str]) -> str:
    return max(statuses, key=STATUS_RANK.__getitem__, default=PASS)


# === Relevance ===

def _rng_for(cfg: CheckConfig, section_id: str) -> np.random.Generator:
    return np.random.default_rng(int(sha256_hex(f"{cfg.rng_seed}:{section_id}")[:16], 16))


def _draws(v2_section_id: str, selected: Sequence[str], pool: Sequence[str], cfg: CheckConfig) -> Dict[str, List[str]]:
    """Fresh K draws without replacement per selected id, in natural id order."""
    rng = _rng_for(cfg, v2_section_id)
    k = min(cfg.K, len(pool))
    return {j: [pool[i] for i in rng.choice(len(pool), size=k, replace=False)] for j in selected}


def _inequalities(v2sec: Section, selected: Sequence[str], store: SectionStore, index: TfidfIndex,
                  cfg: CheckConfig, v1_version: str) -> Tuple[Dict[str, List[Dict[str, Any]]], Dict[str, List[str]]]:
    selected_set = set(selected)
    pool = [sid for sid, _ in store.list_sections(v1_version) if sid not in selected_set]
    if not pool:
        return {}, {}
    draws = _draws(v2sec.section_id, selected, pool, cfg)
    texts: Dict[str, str] = {}

    def score(sid: str) -> float:
        if sid not in texts:
            texts[sid] = store.fetch_section(v1_version, sid).text
        return cosine(index, v2sec.text, texts[sid])

    rows: Dict[str, List[Dict[str, Any]]] = {}
    for j, randoms in draws.items():
        s_j = score(j)
        rows[j] = [
            {"selected": j, "random": r, "s_selected": s_j, "s_random": s_r, "violated": s_j <= s_r}
            for r, s_r in ((r, score(r)) for r in randoms)
        ]
    return rows, draws


def check_relevance(v2sec: Section, selected: ConsensusSet, store: SectionStore, index: TfidfIndex,
                    cfg: CheckConfig = CheckConfig(), v1_version: str = "v1") -> CheckOutcome:
    """
    Every selected v1 section should score higher against the v2 text than K
    random other v1 sections. The violation fraction is pooled over all
    selected ids; warn iff it reaches alpha percent.
    """
    subject = v2sec.section_id
    ids = sorted_ids(selected.member_ids)
    if not ids:
        return CheckOutcome(RELEVANCE, SKIP, subject, {"reason": "empty_consensus"})
    rows, draws = _inequalities(v2sec, ids, store, index, cfg, v1_version)
    if not rows:
        return CheckOutcome(RELEVANCE, SKIP, subject, {"reason": "no_comparison_sections"})

    total = sum(len(r) for r in rows.values())
    violated = [row for j in ids for row in rows[j] if row["violated"]]
    percent = 100.0 * len(violated) / total
    status = WARN if percent >= cfg.alpha_percent else PASS
    details = {
        "violation_percent": percent,
        "violated_count": len(violated),
        "constraint_count": total,
        "alpha_percent": cfg.alpha_percent,
        "rng_seed": cfg.rng_seed,
        "draws": {j: draws[j] for j in ids},
        "violated": violated,
    }
    if status == WARN:
        logger.warning("section %s: %.1f%% of relevance inequalities violated (alpha %.1f)",
                       subject, percent, cfg.alpha_percent)
    return CheckOutcome(RELEVANCE, status, subject, details)


def prune_candidates(v2sec: Section, selected: ConsensusSet, store: SectionStore, index: TfidfIndex,
                     cfg: CheckConfig = CheckConfig(), v1_version: str = "v1") -> Tuple[ConsensusSet, List[CheckOutcome]]:
    """Drops every candidate whose own violation percentage reaches alpha."""
    ids = sorted_ids(selected.member_ids)
    rows, draws = _inequalities(v2sec, ids, store, index, cfg, v1_version) if ids else ({}, {})
    if not rows:
        return selected, []

    outcomes: List[CheckOutcome] = []
    dropped: List[str] = []
    for j in ids:
        violated = [row for row in rows[j] if row["violated"]]
        percent = 100.0 * len(violated) / len(rows[j])
        status = WARN if percent >= cfg.alpha_percent else PASS
        if status == WARN:
            dropped.append(j)
        outcomes.append(CheckOutcome(RELEVANCE, status, f"{v2sec.section_id}:{j}", {
            "candidate": j, "violation_percent": percent, "alpha_percent": cfg.alpha_percent,
            "draws": draws[j], "violated": violated,
        }))
    if dropped:
        logger.warning("section %s: pruned candidates %s at alpha %.1f", v2sec.section_id, dropped, cfg.alpha_percent)
    pruned = replace(
        selected,
        member_ids=frozenset(set(ids) - set(dropped)),
        pruned_ids=tuple(sorted_ids(set(selected.pruned_ids) | set(dropped))),
    )
    return pruned, outcomes


# === Summary (beta) ===

def check_summary(summary: str, section_text: str, index: TfidfIndex, cfg: CheckConfig = CheckConfig(),
                  subject: str = "") -> CheckOutcome:
    if cfg.beta == 0:
        logger.info("beta is 0; summary check always passes")
    score = cosine(index, summary, section_text)
    status = WARN if score < cfg.beta else PASS
    if status == WARN:
        logger.warning("section %s: summary similarity %.3f below beta %.2f", subject, score, cfg.beta)
    return CheckOutcome(SUMMARY, status, subject, {"score": score, "beta": cfg.beta})


# === Evidence (kappa) ===

def check_evidence(t: ChangeTuple, v1_text: str, v2_text: str, index: TfidfIndex,
                   cfg: CheckConfig = CheckConfig()) -> List[CheckOutcome]:
    """
    Sentinel plausibility: claimed-new content must not already be in v1
    (and vice versa). Non-sentinel evidence must occur verbatim.
    """
    outcomes: List[CheckOutcome] = []
    if t.v1_absent:
        score = cosine(index, v1_text, t.ev_v2)
        outcomes.append(CheckOutcome(
            EVIDENCE_V1_SENTINEL, WARN if score > cfg.kappa else PASS, t.tuple_id,
            {"score": score, "kappa": cfg.kappa},
        ))
    if t.v2_absent:
        score = cosine(index, v2_text, t.ev_v1)
        outcomes.append(CheckOutcome(
            EVIDENCE_V2_SENTINEL, WARN if score > cfg.kappa else PASS, t.tuple_id,
            {"score": score, "kappa": cfg.kappa},
        ))
    if not t.v1_absent and not t.v2_absent:
        missing = [
            side for side, ev, text in (("v1", t.ev_v1, v1_text), ("v2", t.ev_v2, v2_text))
            if normalize_ws(ev) not in normalize_ws(text)
        ]
        details: Dict[str, Any] = {"missing": missing}
        if missing:
            details["reason"] = "fabricated_evidence"
        outcomes.append(CheckOutcome(EVIDENCE_VERBATIM, WARN if missing else PASS, t.tuple_id, details))
    for o in outcomes:
        if o.status == WARN:
            logger.warning("tuple %s (%s): %s warned %s", t.tuple_id, t.v2_section_id, o.check_id, o.details)
    return outcomes


# === NLI ===

def nli_premise(t: ChangeTuple) -> str:
    v1 = "V1 does not mention this." if t.v1_absent else f"V1 states: {t.ev_v1}."
    v2 = "V2 does not mention this." if t.v2_absent else f"V2 states: {t.ev_v2}."
    return f"{v1} {v2}"


def check_nli(t: ChangeTuple, nli: Optional[NliBackendSpec]) -> CheckOutcome:
    if nli is None:
        return CheckOutcome(NLI, SKIP, t.tuple_id, {"reason": "nli_not_configured"})
    premise = nli_premise(t)
    try:
        probs = classify(nli, premise, t.ccd)
    except NliUnreachable as e:
        logger.warning("tuple %s: NLI unreachable (%s); check skipped", t.tuple_id, e)
        return CheckOutcome(NLI, SKIP, t.tuple_id, {"reason": "nli_unreachable"})
    except MalformedResponse as e:
        logger.warning("tuple %s: NLI answer unusable (%s); check skipped", t.tuple_id, e)
        return CheckOutcome(NLI, SKIP, t.tuple_id, {"reason": "nli_malformed", "message": str(e)})
    label = top_label(probs)
    status = WARN if label == "contradiction" else PASS
    if status == WARN:
        logger.warning("tuple %s: NLI reports contradiction (%.2f) for '%s'", t.tuple_id, probs["contradiction"], t.ccd)
    return CheckOutcome(NLI, status, t.tuple_id, {"label": label, "probabilities": probs})


# === Aggregation ===

def v1_text_for(t: ChangeTuple, store: SectionStore, v1_version: str = "v1") -> str:
    return "\n\n".join(store.fetch_section(v1_version, sid).text for sid in t.v1_section_ids)


def run_all_checks(v2sec: Section, consensus: ConsensusSet, summary: Optional[str], changes: Sequence[ChangeTuple],
                   store: SectionStore, index: TfidfIndex, cfg: CheckConfig = CheckConfig(),
                   nli: Optional[NliBackendSpec] = None, v1_version: str = "v1") -> CheckReport:
    """All checks for one v2 section; status is the worst of pass < skip < warn."""
    outcomes: List[CheckOutcome] = [check_relevance(v2sec, consensus, store, index, cfg, v1_version)]
    if summary is not None:
        outcomes.append(check_summary(summary, v2sec.text, index, cfg, subject=v2sec.section_id))
    for t in changes:
        outcomes.extend(check_evidence(t, v1_text_for(t, store, v1_version), v2sec.text, index, cfg))
        outcomes.append(check_nli(t, nli))
    return CheckReport(v2sec.section_id, tuple(outcomes))


def persist_report(store: SectionStore, report: CheckReport, cfg: CheckConfig, run: Optional[int] = None) -> int:
    return store.put_artifact(ArtifactRecord(
        kind="check_report",
        section_id=report.subject,
        producer=fingerprint({"stage": "checks", "config": cfg.to_dict()}),
        payload={"run": run, **report.to_payload()},
    ))


def render_review_sheet(reports: Sequence[CheckReport]) -> str:
    """Markdown review sheet; sections with warns first, then skips, then passes."""
    ordered = sorted(reports, key=lambda r: (-STATUS_RANK[r.status], section_sort_key(r.subject)))
    lines = ["# Review sheet", ""]
    if not ordered:
        return "\n".join(lines + ["_No sections checked._", ""])
    overview = pd.DataFrame(
        [{"section": r.subject, "status": r.status, "warns": r.warn_count} for r in ordered]
    )
    lines += [overview.to_markdown(index=False, disable_numparse=True), ""]
    for report in ordered:
        flagged = [o for o in report.outcomes if o.status != PASS]
        if not flagged:
            continue
        lines.append(f"## Section {report.subject} ({report.status})")
        for o in sorted(flagged, key=lambda o: -STATUS_RANK[o.status]):
            lines.append(f"- **{o.status}** `{o.check_id}` on {o.subject}: {_brief(o)}")
        lines.append("")
    return "\n".join(lines)


def _brief(o: CheckOutcome) -> str:
    d = o.details
    if "reason" in d and o.status == SKIP:
        return d["reason"]
    if o.check_id == RELEVANCE:
        return f"{d['violation_percent']:.1f}% inequalities violated (alpha {d['alpha_percent']:g})"
    if o.check_id == SUMMARY:
        return f"similarity {d['score']:.3f} < beta {d['beta']:g}"
    if o.check_id in (EVIDENCE_V1_SENTINEL, EVIDENCE_V2_SENTINEL):
        return f"similarity {d['score']:.3f} > kappa {d['kappa']:g}"
    if o.check_id == EVIDENCE_VERBATIM:
        return f"evidence not found verbatim in {', '.join(d['missing'])}"
    if o.check_id == NLI:
        return f"NLI label {d['label']}"
    return str(d)
