"""
Validated caching: the last model that compiled cleanly and passed every
enabled error-severity check is the only state deltas are applied to. A
delta that breaks either leaves ``last_good`` untouched.

Cache directory layout: ``last_good.sysml``, ``history.jsonl`` (one record
per attempted delta, accepted or rejected) and ``state.json``.
"""
from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

from filelock import FileLock

from deltaforge.errors import DeltaError, InvalidBaseline, ParseError, PreconditionViolation
from deltaforge.phase1.section_store import ArtifactRecord, SectionStore
from deltaforge.phase3.sysml.checks import CHECKS, has_errors, static_check
from deltaforge.phase3.sysml.delta import Delta, apply_delta
from deltaforge.phase3.sysml.elements import Diagnostic, Model, Severity
from deltaforge.phase3.sysml.parser import parse
from deltaforge.phase3.sysml.resolver import compile
from deltaforge.phase3.sysml.serializer import serialize
from deltaforge.utils import canonical_json, fingerprint, load_json_file, write_json_file, write_text_file

logger = logging.getLogger(__name__)

LAST_GOOD_FILE = "last_good.sysml"
HISTORY_FILE = "history.jsonl"
STATE_FILE = "state.json"
LOCK_FILE = ".cache.lock"

ACCEPTED = "accepted"
REJECTED = "rejected"


@dataclass(frozen=True)
class UpdateOutcome:
    delta_id: str
    accepted: bool
    revision: int
    diagnostics: Tuple[Diagnostic, ...] = ()
    trace: Tuple[str, ...] = ()

    @property
    def outcome(self) -> str:
        return ACCEPTED if self.accepted else REJECTED

    def to_dict(self) -> Dict[str, Any]:
        return {
            "delta_id": self.delta_id,
            "outcome": self.outcome,
            "revision": self.revision,
            "trace": list(self.trace),
            "diagnostics": [d.to_dict() for d in self.diagnostics],
        }


def validate(model: Model, checks: Optional[Sequence[str]] = None) -> List[Diagnostic]:
    """Compile diagnostics followed by static-check diagnostics."""
    report = compile(model)
    return list(report.diagnostics) + static_check(model, checks)


@dataclass
class ValidatedCache:
    directory: Path
    revision: int = 0
    checks: Tuple[str, ...] = tuple(CHECKS)
    _last_good: Optional[Model] = field(default=None, repr=False)

    @property
    def _lock(self) -> FileLock:
        return FileLock(str(self.directory / LOCK_FILE))

    @classmethod
    def init(cls, directory, model: Union[Model, str], checks: Optional[Sequence[str]] = None,
             overwrite: bool = False) -> "ValidatedCache":
        """Creates a cache around a baseline that must already compile and check cleanly."""
        directory = Path(directory)
        if (directory / STATE_FILE).exists() and not overwrite:
            raise PreconditionViolation(f"cache {directory} already initialized")
        if isinstance(model, str):
            try:
                model = parse(model)
            except ParseError as e:
                raise InvalidBaseline(f"baseline does not parse: {e}") from e
        checks = tuple(CHECKS) if checks is None else tuple(checks)
        problems = [d for d in validate(model, checks) if d.is_error]
        if problems:
            raise InvalidBaseline("baseline is not valid:\n" + "\n".join(str(d) for d in problems))
        directory.mkdir(parents=True, exist_ok=True)
        cache = cls(directory, 0, checks, model)
        with cache._lock:
            write_text_file(directory / LAST_GOOD_FILE, serialize(model))
            (directory / HISTORY_FILE).write_text("", encoding="utf-8")
            cache._write_state(None)
        logger.info("validated cache initialized in %s", directory)
        return cache

    @classmethod
    def open(cls, directory) -> "ValidatedCache":
        directory = Path(directory)
        state_path = directory / STATE_FILE
        if not state_path.exists():
            raise PreconditionViolation(f"{directory} is not an initialized validated cache")
        state = load_json_file(state_path)
        return cls(directory, int(state["revision"]), tuple(state.get("checks", CHECKS)))

    def _write_state(self, last_delta_id: Optional[str]) -> None:
        write_json_file(self.directory / STATE_FILE, {
            "revision": self.revision,
            "checks": list(self.checks),
            "last_delta_id": last_delta_id,
        })

    @property
    def last_good_text(self) -> str:
        return (self.directory / LAST_GOOD_FILE).read_text(encoding="utf-8")

    @property
    def last_good(self) -> Model:
        if self._last_good is None:
            self._last_good = parse(self.last_good_text)
        return self._last_good

    def history(self) -> List[Dict[str, Any]]:
        path = self.directory / HISTORY_FILE
        if not path.exists():
            return []
        return [json.loads(line) for line in path.read_text(encoding="utf-8").splitlines() if line.strip()]

    def accepted_deltas(self) -> List[Delta]:
        """Accepted deltas in application order."""
        return [Delta.from_dict(h["delta"]) for h in self.history() if h["outcome"] == ACCEPTED]

    def _append_history(self, record: Dict[str, Any]) -> None:
        line = canonical_json(record) + "\n"
        with open(self.directory / HISTORY_FILE, "a", encoding="utf-8") as f:
            f.write(line)
            f.flush()
            os.fsync(f.fileno())

    def _reload(self) -> None:
        # another handle may have advanced the directory since this one read it
        state = load_json_file(self.directory / STATE_FILE)
        revision = int(state["revision"])
        if revision != self.revision or self._last_good is None:
            self.revision = revision
            self._last_good = None

    def update(self, delta: Delta, store: Optional[SectionStore] = None) -> UpdateOutcome:
        return validated_update(self, delta, store)


def validated_update(cache: ValidatedCache, delta: Delta, store: Optional[SectionStore] = None) -> UpdateOutcome:
    """
    Applies ``delta`` to last_good and keeps the result only if it compiles
    and has no error-severity diagnostics. Rejection is an outcome, not an
    exception; every attempt lands in the history.
    """
    with cache._lock:
        cache._reload()
        base = cache.last_good
        candidate: Optional[Model] = None
        try:
            candidate = apply_delta(base, delta)
            diagnostics = validate(candidate, cache.checks)
        except DeltaError as e:
            diagnostics = [Diagnostic(Severity.ERROR, e.code, str(e))]

        accepted = candidate is not None and not has_errors(diagnostics)
        if accepted:
            cache.revision += 1
            text = serialize(candidate)
            write_text_file(cache.directory / LAST_GOOD_FILE, text)
            cache._last_good = candidate
            cache._write_state(delta.delta_id)
            logger.info("delta %s accepted; last_good is revision %d", delta.delta_id, cache.revision)
        else:
            errors = [str(d) for d in diagnostics if d.is_error]
            logger.warning("delta %s rejected (traced to %s); last_good stays at revision %d: %s",
                           delta.delta_id, list(delta.trace), cache.revision, "; ".join(errors))

        outcome = UpdateOutcome(delta.delta_id, accepted, cache.revision, tuple(diagnostics), delta.trace)
        cache._append_history({
            **outcome.to_dict(),
            "delta": delta.to_dict(),
            "at": datetime.now(timezone.utc).isoformat(),
        })

    if accepted and store is not None:
        store.put_artifact(ArtifactRecord(
            kind="sysml_checkpoint",
            section_id=None,
            producer=fingerprint({"stage": "sysml", "checks": list(cache.checks)}),
            payload={"revision": cache.revision, "model": text, "delta_id": delta.delta_id, "trace": list(delta.trace)},
        ))
    return outcome
