"""
LLM-proposed model deltas. The model never rewrites the whole design: it
proposes one small edit script per change tuple, and every proposal goes
through validated_update before it can touch last_good.
"""
from __future__ import annotations

import logging
from typing import List, Optional, Sequence

from deltaforge.errors import DeltaForgeError, PreconditionViolation
from deltaforge.phase1.section_store import SectionStore
from deltaforge.phase2.agent.gateway import BackendSpec, CompletionRequest, LLMGateway
from deltaforge.phase2.delta_extract import ChangeTuple
from deltaforge.phase3.sysml.cache import UpdateOutcome, ValidatedCache, validated_update
from deltaforge.phase3.sysml.delta import OP_KINDS, Delta
from deltaforge.phase3.sysml.elements import Diagnostic, Model, Severity
from deltaforge.phase3.sysml.serializer import serialize
from deltaforge.prompt_template import delta_prompt
from deltaforge.utils import log_errors

logger = logging.getLogger(__name__)

DELTA_SCHEMA = {
    "type": "object",
    "required": ["ops"],
    "properties": {
        "ops": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["op"],
                "properties": {
                    "op": {"enum": list(OP_KINDS)},
                    "parent_path": {"type": "string"},
                    "pkg_path": {"type": "string"},
                    "path": {"type": "string"},
                    "element": {"type": "string"},
                    "connection": {"type": "string"},
                    "index": {"type": "integer", "minimum": 0},
                    "doc_text": {"type": ["string", "null"]},
                    "constraints": {"type": "array", "items": {"type": "string"}},
                    "constraint": {"type": ["string", "null"]},
                },
            },
        }
    },
}


def delta_id_for(change: ChangeTuple) -> str:
    return f"D-{change.tuple_id}"


def propose_delta(change: ChangeTuple, model: Model, backend: BackendSpec,
                  gateway: Optional[LLMGateway] = None) -> Delta:
    """Asks ``backend`` for an edit script implementing ``change`` against ``model``."""
    gateway = gateway or LLMGateway()
    logger.info("[sysml] proposing delta for change %s (%s, section %s)",
                change.tuple_id, change.criterion_id, change.v2_section_id)
    system, user = delta_prompt(change, serialize(model))
    completion = gateway.complete_json(backend, CompletionRequest(system, user, temperature=0.0), DELTA_SCHEMA)
    try:
        return Delta.from_dict({
            "delta_id": delta_id_for(change),
            "trace": [change.tuple_id],
            "ops": completion.document["ops"],
        })
    except PreconditionViolation as e:
        raise PreconditionViolation(f"proposal for change {change.tuple_id} is not a delta: {e}") from e


def update_from_changes(cache: ValidatedCache, changes: Sequence[ChangeTuple], backend: BackendSpec,
                        gateway: Optional[LLMGateway] = None,
                        store: Optional[SectionStore] = None) -> List[UpdateOutcome]:
    """
    One proposal and one gated update per change, in order. A proposal that
    cannot be obtained is logged and recorded as a rejected outcome; the
    loop continues with the next change.
    """
    gateway = gateway or LLMGateway()
    outcomes: List[UpdateOutcome] = []
    for change in changes:
        try:
            delta = propose_delta(change, cache.last_good, backend, gateway)
        except DeltaForgeError as e:
            log_errors({"stage": "propose_delta", "tuple_id": change.tuple_id, **e.to_dict()}, logger)
            outcomes.append(UpdateOutcome(
                delta_id_for(change), False, cache.revision,
                (Diagnostic(Severity.ERROR, e.code, str(e)),), (change.tuple_id,),
            ))
            continue
        outcomes.append(validated_update(cache, delta, store))
    accepted = sum(o.accepted for o in outcomes)
    logger.info("[sysml] %d of %d proposed deltas accepted; last_good at revision %d",
                accepted, len(outcomes), cache.revision)
    return outcomes
