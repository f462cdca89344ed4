"""
N1 (verbatim-leaning summary) and N3 (criterion-wise change extraction into
evidence tuples), plus the classical merge of per-criterion results.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import pandas as pd

from deltaforge.errors import ConfigError, DeltaForgeError, InvalidTuple, PreconditionViolation
from deltaforge.phase1.section_store import ArtifactRecord, SectionStore
from deltaforge.phase1.sectionizer import Section
from deltaforge.phase2.agent.gateway import BackendSpec, CompletionRequest, LLMGateway
from deltaforge.prompt_template import EXTRACT, SUMMARIZE, extraction_prompt, load_template, summary_prompt
from deltaforge.utils import fingerprint, load_json_file, normalize_evidence, section_sort_key, sha256_hex

logger = logging.getLogger(__name__)

NOT_IN_V1 = "not in v1"
NOT_IN_V2 = "not in v2"

CHANGES_SCHEMA = {
    "type": "object",
    "required": ["changes"],
    "properties": {
        "changes": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["ccd", "ev_v1", "ev_v2"],
                "properties": {"ccd": {"type": "string"}, "ev_v1": {"type": "string"}, "ev_v2": {"type": "string"}},
            },
        }
    },
}


@dataclass(frozen=True)
class Criterion:
    id: str
    description: str


# === Change Criteria ===
DEFAULT_CRITERIA: Tuple[Criterion, ...] = (
    Criterion("SCOPE", "scope changes: entities, components or functions added to or removed from the requirement"),
    Criterion("MODALITY", "modality changes: an obligation word changed, e.g. 'shall' became 'may' or 'should' became 'shall'"),
    Criterion("NUMERIC", "numeric or tolerance changes: a value, limit, unit, range or tolerance changed"),
    Criterion("MANDATE", "mandatory requirements that were added or removed"),
    Criterion("DEFINITION", "newly introduced or removed definitions of terms"),
    Criterion("RENAME", "renamed tools, technologies, components or standards"),
    Criterion("TERMINOLOGY", "terminology changes that make a requirement more ambiguous or change its meaning"),
)


def load_criteria(path: Optional[str] = None, base: Sequence[Criterion] = DEFAULT_CRITERIA) -> List[Criterion]:
    """
    Built-in registry, optionally adjusted by a JSON file of the form
    {"add": [{"id", "description"}], "disable": ["TERMINOLOGY", ...]}.
    """
    criteria = list(base)
    if path is None:
        return criteria
    data = load_json_file(path)
    if not isinstance(data, dict):
        raise ConfigError(f"criteria file {path} must be a JSON object")
    known = {c.id for c in criteria}
    for entry in data.get("add", []):
        try:
            criterion = Criterion(str(entry["id"]), str(entry["description"]))
        except (KeyError, TypeError) as e:
            raise ConfigError(f"criterion entry {entry!r} in {path} needs id and description") from e
        if criterion.id in known:
            criteria = [criterion if c.id == criterion.id else c for c in criteria]
        else:
            criteria.append(criterion)
            known.add(criterion.id)
    disabled = set(data.get("disable", []))
    unknown = disabled - known
    if unknown:
        raise ConfigError(f"cannot disable unknown criteria {sorted(unknown)}")
    return [c for c in criteria if c.id not in disabled]


def select_criteria(ids: Optional[Iterable[str]], registry: Sequence[Criterion]) -> List[Criterion]:
    if ids is None:
        return list(registry)
    by_id = {c.id: c for c in registry}
    missing = [i for i in ids if i not in by_id]
    if missing:
        raise ConfigError(f"unknown criteria {missing}; known: {sorted(by_id)}")
    return [by_id[i] for i in ids]


def is_sentinel(text: str, sentinel: str) -> bool:
    return text.strip().casefold() == sentinel


@dataclass(frozen=True)
class ChangeTuple:
    ccd: str
    ev_v1: str
    ev_v2: str
    criterion_id: str
    v2_section_id: str
    v1_section_ids: Tuple[str, ...] = ()
    tuple_id: str = field(default="")

    def __post_init__(self):
        if not self.ccd.strip():
            raise InvalidTuple("change tuple needs a non-empty ccd")
        if self.v1_absent and self.v2_absent:
            raise InvalidTuple(f"both evidences are sentinels for '{self.ccd}'")
        if not self.tuple_id:
            object.__setattr__(self, "tuple_id", sha256_hex(
                "\x00".join([self.criterion_id, self.v2_section_id, *self.evidence_key])
            )[:16])

    @property
    def v1_absent(self) -> bool:
        return is_sentinel(self.ev_v1, NOT_IN_V1)

    @property
    def v2_absent(self) -> bool:
        return is_sentinel(self.ev_v2, NOT_IN_V2)

    @property
    def evidence_key(self) -> Tuple[str, str]:
        return normalize_evidence(self.ev_v1), normalize_evidence(self.ev_v2)

    @classmethod
    def build(cls, raw: Mapping[str, Any], criterion_id: str, v2_section_id: str,
              v1_section_ids: Sequence[str] = ()) -> "ChangeTuple":
        """Stamps ids and normalizes sentinel spellings of a model-produced tuple."""
        ev_v1 = str(raw.get("ev_v1", "")).strip()
        ev_v2 = str(raw.get("ev_v2", "")).strip()
        if is_sentinel(ev_v1, NOT_IN_V1):
            ev_v1 = NOT_IN_V1
        if is_sentinel(ev_v2, NOT_IN_V2):
            ev_v2 = NOT_IN_V2
        return cls(
            ccd=str(raw.get("ccd", "")).strip(),
            ev_v1=ev_v1,
            ev_v2=ev_v2,
            criterion_id=criterion_id,
            v2_section_id=v2_section_id,
            v1_section_ids=tuple(v1_section_ids),
        )

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["v1_section_ids"] = list(self.v1_section_ids)
        return data

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ChangeTuple":
        return cls(
            ccd=data["ccd"],
            ev_v1=data["ev_v1"],
            ev_v2=data["ev_v2"],
            criterion_id=data["criterion_id"],
            v2_section_id=data["v2_section_id"],
            v1_section_ids=tuple(data.get("v1_section_ids", ())),
            tuple_id=data.get("tuple_id", ""),
        )


# === N1 ===

def summarize_section(v2sec: Section, backend: BackendSpec, store: Optional[SectionStore] = None,
                      gateway: Optional[LLMGateway] = None, run: Optional[int] = None) -> str:
    """Summary that reuses the section's own wording; persisted when a store is given."""
    if not v2sec.text.strip():
        raise PreconditionViolation(f"section {v2sec.section_id} has no text to summarize")
    gateway = gateway or LLMGateway()
    logger.info("[N1] summarizing section %s", v2sec.section_id)
    system, user = summary_prompt(v2sec)
    req = CompletionRequest(system, user, temperature=0.0)
    result = gateway.complete(backend, req)
    summary = result.text.strip()
    if store is not None:
        store.put_artifact(ArtifactRecord(
            kind="summary",
            section_id=v2sec.section_id,
            producer=fingerprint({"stage": "summary", "prompt": load_template(SUMMARIZE).sha, "backend": backend.id}),
            payload={"run": run, "summary": summary, "prompt": req.to_dict(), "backend": backend.id,
                     "result": result.to_dict()},
        ))
    return summary


# === N3 ===

def extract_changes(v2sec: Section, v1texts: Sequence[Tuple[str, str]], criterion: Criterion, backend: BackendSpec,
                    store: Optional[SectionStore] = None, gateway: Optional[LLMGateway] = None,
                    summary: Optional[str] = None, run: Optional[int] = None) -> List[ChangeTuple]:
    """
    Changes of one criterion between a v2 section and its related v1 texts.
    Tuples with both evidences missing are dropped with a warning. A
    JsonCoercionFailed is persisted as the criterion's artifact and re-raised.
    """
    gateway = gateway or LLMGateway()
    logger.info("[N3] extracting %s changes for section %s", criterion.id, v2sec.section_id)
    system, user = extraction_prompt(v2sec, v1texts, criterion, summary)
    req = CompletionRequest(system, user, temperature=0.0)
    v1_ids = tuple(sid for sid, _ in v1texts)
    producer = fingerprint({
        "stage": "changes", "prompt": load_template(EXTRACT).sha, "backend": backend.id,
        "criterion": criterion.id, "with_summary": summary is not None,
    })

    def persist(payload: Dict[str, Any]) -> None:
        if store is not None:
            store.put_artifact(ArtifactRecord(
                kind="changes", section_id=v2sec.section_id, producer=producer,
                payload={"run": run, "criterion_id": criterion.id, "v1_section_ids": list(v1_ids),
                         "prompt": req.to_dict(), **payload},
            ))

    try:
        completion = gateway.complete_json(backend, req, CHANGES_SCHEMA)
    except DeltaForgeError as e:
        persist({"tuples": [], "error": e.to_dict()})
        raise

    tuples: List[ChangeTuple] = []
    rejected: List[Dict[str, Any]] = []
    for raw in completion.document["changes"]:
        try:
            tuples.append(ChangeTuple.build(raw, criterion.id, v2sec.section_id, v1_ids))
        except InvalidTuple as e:
            logger.warning("section %s, %s: rejected tuple %s (%s)", v2sec.section_id, criterion.id, raw, e)
            rejected.append({"raw": raw, "reason": str(e)})
    persist({"tuples": [t.to_dict() for t in tuples], "rejected": rejected, "raw_text": completion.result.text})
    return tuples


def merge_changes(per_criterion: Iterable[Iterable[ChangeTuple]]) -> List[ChangeTuple]:
    """Dedup on (criterion, normalized evidence pair); first wins; ordered by section then criterion."""
    seen = set()
    merged: List[ChangeTuple] = []
    for batch in per_criterion:
        for t in batch:
            key = (t.criterion_id, t.evidence_key)
            if key in seen:
                continue
            seen.add(key)
            merged.append(t)
    # sort is stable so first-occurrence order survives within a group
    return sorted(merged, key=lambda t: (section_sort_key(t.v2_section_id), t.criterion_id))


def render_changes_markdown(changes: Sequence[ChangeTuple]) -> str:
    if not changes:
        return "_No changes found._\n"
    frame = pd.DataFrame(
        [
            {
                "section": t.v2_section_id,
                "criterion": t.criterion_id,
                "change": t.ccd,
                "v1 evidence": t.ev_v1,
                "v2 evidence": t.ev_v2,
                "v1 sections": ", ".join(t.v1_section_ids),
            }
            for t in changes
        ]
    )
    return frame.to_markdown(index=False, disable_numparse=True) + "\n"
