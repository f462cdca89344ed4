"""
N2: find the v1 sections a v2 section continues, in three diversification
variants, and merge the proposed id-sets by union or strict majority.

The model only ever names ids; texts are fetched classically afterwards.
"""
from __future__ import annotations

import logging
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Dict, FrozenSet, List, Optional, Sequence, Tuple

from deltaforge.errors import (
    DeltaForgeError,
    EmptyV1,
    MixedSections,
    PreconditionViolation,
    RetrievalFailed,
    UnknownVersion,
)
from deltaforge.phase1.section_store import ArtifactRecord, SectionStore
from deltaforge.phase1.sectionizer import Section
from deltaforge.phase2.agent.gateway import BackendSpec, CompletionRequest, LLMGateway
from deltaforge.phase2.tools.tools import build_v1_tools
from deltaforge.prompt_template import MONOLITHIC, RETRIEVE, load_template, monolithic_prompt, retrieval_prompt
from deltaforge.utils import fingerprint, sorted_ids

logger = logging.getLogger(__name__)

UNION = "union"
MAJORITY = "majority"
STRATEGIES = (UNION, MAJORITY)
DEFAULT_N_SEEDS = 3
DIVERSITY_TEMPERATURE = 0.7
DETERMINISTIC_TEMPERATURE = 0.0

IDS_SCHEMA = {
    "type": "object",
    "required": ["ids"],
    "properties": {"ids": {"type": "array", "items": {"type": "string"}}},
}
MONOLITHIC_SCHEMA = {
    "type": "object",
    "required": ["ids"],
    "properties": {
        "summary": {"type": "string"},
        "ids": {"type": "array", "items": {"type": "string"}},
        "changes": {"type": "array"},
    },
}


@dataclass(frozen=True)
class RetrievalResult:
    v2_section_id: str
    proposer: str
    candidate_ids: FrozenSet[str]
    seed: Optional[int] = None
    dropped_ids: Tuple[str, ...] = ()
    raw_artifact_revision: Optional[int] = None

    @property
    def label(self) -> str:
        return self.proposer if self.seed is None else f"{self.proposer}#seed{self.seed}"


@dataclass(frozen=True)
class ConsensusSet:
    v2_section_id: str
    strategy: str
    member_ids: FrozenSet[str]
    votes: Dict[str, int] = field(default_factory=dict)
    proposers: Tuple[str, ...] = ()
    pruned_ids: Tuple[str, ...] = ()

    def to_payload(self) -> Dict[str, Any]:
        return {
            "strategy": self.strategy,
            "member_ids": sorted_ids(self.member_ids),
            "votes": {k: self.votes[k] for k in sorted_ids(self.votes)},
            "proposers": list(self.proposers),
            "pruned_ids": sorted_ids(self.pruned_ids),
        }

    @classmethod
    def from_payload(cls, v2_section_id: str, payload: Dict[str, Any]) -> "ConsensusSet":
        return cls(
            v2_section_id=v2_section_id,
            strategy=payload["strategy"],
            member_ids=frozenset(payload["member_ids"]),
            votes=dict(payload["votes"]),
            proposers=tuple(payload["proposers"]),
            pruned_ids=tuple(payload.get("pruned_ids", ())),
        )


def _require_v1(store: SectionStore, v1_version: str) -> None:
    try:
        if not store.list_sections(v1_version):
            raise EmptyV1(f"no {v1_version} sections in store {store.path}")
    except UnknownVersion:
        raise EmptyV1(f"no {v1_version} sections in store {store.path}") from None


def _call(v2sec: Section, store: SectionStore, backend: BackendSpec, gateway: LLMGateway,
          seed: Optional[int], temperature: float, v1_version: str, run: Optional[int],
          template: str = RETRIEVE) -> RetrievalResult:
    if template == MONOLITHIC:
        system, user = monolithic_prompt(v2sec)
        schema = MONOLITHIC_SCHEMA
    else:
        system, user = retrieval_prompt(v2sec)
        schema = IDS_SCHEMA
    req = CompletionRequest(system, user, tools=build_v1_tools(store, v1_version), seed=seed, temperature=temperature)
    producer = fingerprint({
        "stage": "retrieval", "prompt": load_template(template).sha, "backend": backend.id,
        "seed": seed, "temperature": temperature,
    })
    try:
        completion = gateway.complete_json(backend, req, schema)
    except DeltaForgeError as e:
        store.put_artifact(ArtifactRecord(
            kind="retrieval", section_id=v2sec.section_id, producer=producer,
            payload={"run": run, "proposer": backend.id, "seed": seed, "candidate_ids": [],
                     "prompt": req.to_dict(), "error": e.to_dict()},
        ))
        raise

    proposed = [str(i).strip() for i in completion.document["ids"]]
    kept = {i for i in proposed if store.has_section(v1_version, i)}
    dropped = tuple(sorted_ids(set(proposed) - kept))
    if dropped:
        logger.warning("v2 %s: %s proposed unknown v1 ids %s; dropped",
                       v2sec.section_id, backend.id, list(dropped))
    revision = store.put_artifact(ArtifactRecord(
        kind="retrieval", section_id=v2sec.section_id, producer=producer,
        payload={
            "run": run,
            "proposer": backend.id,
            "seed": seed,
            "candidate_ids": sorted_ids(kept),
            "dropped_ids": list(dropped),
            "raw_text": completion.result.text,
            "prompt": req.to_dict(),
            "result": completion.result.to_dict(),
        },
    ))
    return RetrievalResult(v2sec.section_id, backend.id, frozenset(kept), seed, dropped, revision)


def find_relevant_sec(v2sec: Section, store: SectionStore, backend: BackendSpec,
                      gateway: Optional[LLMGateway] = None, v1_version: str = "v1",
                      run: Optional[int] = None) -> RetrievalResult:
    """Deterministic single-model retrieval (temperature 0, no seed)."""
    _require_v1(store, v1_version)
    gateway = gateway or LLMGateway()
    logger.info("[N2] retrieving v1 sections for v2 %s with %s", v2sec.section_id, backend.id)
    return _call(v2sec, store, backend, gateway, None, DETERMINISTIC_TEMPERATURE, v1_version, run)


def _fan_out(v2sec: Section, jobs: Sequence[Tuple[BackendSpec, Optional[int], float]],
             store: SectionStore, gateway: LLMGateway, v1_version: str, run: Optional[int]) -> List[RetrievalResult]:
    def job(spec):
        backend, seed, temperature = spec
        try:
            return _call(v2sec, store, backend, gateway, seed, temperature, v1_version, run), None
        except DeltaForgeError as e:
            logger.warning("v2 %s: retrieval by %s (seed %s) failed: %s", v2sec.section_id, backend.id, seed, e)
            return None, {"proposer": backend.id, "seed": seed, **e.to_dict()}

    with ThreadPoolExecutor(max_workers=max(1, gateway.config.max_concurrency)) as pool:
        outcomes = list(pool.map(job, jobs))
    results = [r for r, _ in outcomes if r is not None]
    failures = [f for _, f in outcomes if f is not None]
    if not results:
        raise RetrievalFailed(v2sec.section_id, failures)
    return results


def find_relevant_sec_redundant(v2sec: Section, store: SectionStore, backend: BackendSpec, n_seeds: int = DEFAULT_N_SEEDS,
                                gateway: Optional[LLMGateway] = None, temperature: float = DIVERSITY_TEMPERATURE,
                                v1_version: str = "v1", run: Optional[int] = None) -> List[RetrievalResult]:
    """Same model, seeds 1..n_seeds at the diversity temperature."""
    if n_seeds < 2:
        raise PreconditionViolation(f"redundant retrieval needs n_seeds >= 2, got {n_seeds}")
    _require_v1(store, v1_version)
    gateway = gateway or LLMGateway()
    logger.info("[N2] redundant retrieval for v2 %s: %s x %d seeds", v2sec.section_id, backend.id, n_seeds)
    jobs = [(backend, seed, temperature) for seed in range(1, n_seeds + 1)]
    return _fan_out(v2sec, jobs, store, gateway, v1_version, run)


def find_relevant_sec_different_llms(v2sec: Section, store: SectionStore, backends: Sequence[BackendSpec],
                                     gateway: Optional[LLMGateway] = None, v1_version: str = "v1",
                                     run: Optional[int] = None) -> List[RetrievalResult]:
    """One deterministic call per backend."""
    if len(backends) < 2:
        raise PreconditionViolation(f"different-LLM retrieval needs >= 2 backends, got {len(backends)}")
    _require_v1(store, v1_version)
    gateway = gateway or LLMGateway()
    logger.info("[N2] multi-model retrieval for v2 %s: %s", v2sec.section_id, [b.id for b in backends])
    jobs = [(b, None, DETERMINISTIC_TEMPERATURE) for b in backends]
    return _fan_out(v2sec, jobs, store, gateway, v1_version, run)


def find_relevant_sec_monolithic(v2sec: Section, store: SectionStore, backend: BackendSpec,
                                 gateway: Optional[LLMGateway] = None, v1_version: str = "v1",
                                 run: Optional[int] = None) -> RetrievalResult:
    """The do-everything single prompt, kept as an evaluation baseline; only its ids are used."""
    _require_v1(store, v1_version)
    gateway = gateway or LLMGateway()
    logger.info("[N2] monolithic baseline for v2 %s with %s", v2sec.section_id, backend.id)
    return _call(v2sec, store, backend, gateway, None, DETERMINISTIC_TEMPERATURE, v1_version, run, MONOLITHIC)


def merge_consensus(results: Sequence[RetrievalResult], strategy: str = UNION) -> ConsensusSet:
    """Union or strict-majority (> P/2) merge of candidate sets; no neural call."""
    if not results:
        raise PreconditionViolation("merge_consensus needs at least one retrieval result")
    if strategy not in STRATEGIES:
        raise PreconditionViolation(f"unknown consensus strategy '{strategy}'")
    section_ids = {r.v2_section_id for r in results}
    if len(section_ids) > 1:
        raise MixedSections(f"results cover several v2 sections: {sorted(section_ids)}")

    votes: Counter = Counter()
    for result in results:
        votes.update(result.candidate_ids)
    n = len(results)
    if strategy == UNION:
        members = frozenset(votes)
    else:
        members = frozenset(i for i, count in votes.items() if count * 2 > n)
    return ConsensusSet(
        v2_section_id=section_ids.pop(),
        strategy=strategy,
        member_ids=members,
        votes={i: votes[i] for i in sorted_ids(votes)},
        proposers=tuple(sorted(r.label for r in results)),
    )


def persist_consensus(store: SectionStore, consensus: ConsensusSet, run: Optional[int] = None) -> int:
    return store.put_artifact(ArtifactRecord(
        kind="consensus",
        section_id=consensus.v2_section_id,
        producer=fingerprint({"stage": "consensus", "strategy": consensus.strategy}),
        payload={"run": run, **consensus.to_payload()},
    ))
