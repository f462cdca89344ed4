"""
Canonical storage for sections and every intermediate pipeline artifact.

A store is a directory holding two JSON-Lines tables, ``sections.jsonl`` and
``artifacts.jsonl``. Both are append-only; the in-memory index is rebuilt on
open. Writers serialize on an advisory lock file inside the directory.
"""
from __future__ import annotations

import json
import logging
import os
import threading
from collections import defaultdict
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Set, Tuple

from filelock import FileLock
from jsonschema import Draft202012Validator

from deltaforge.errors import (
    DuplicateSectionId,
    DuplicateVersion,
    SchemaViolation,
    UnknownSection,
    UnknownVersion,
)
from deltaforge.phase1.sectionizer import Section
from deltaforge.utils import canonical_json

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
SECTIONS_FILE = "sections.jsonl"
ARTIFACTS_FILE = "artifacts.jsonl"
LOCK_FILE = ".store.lock"
ANY_SECTION = object()

_ID_LIST = {"type": "array", "items": {"type": "string"}}
_TUPLE = {
    "type": "object",
    "required": ["ccd", "ev_v1", "ev_v2", "criterion_id", "v2_section_id", "tuple_id"],
    "properties": {
        "ccd": {"type": "string", "minLength": 1},
        "ev_v1": {"type": "string"},
        "ev_v2": {"type": "string"},
        "criterion_id": {"type": "string"},
        "v2_section_id": {"type": "string"},
        "v1_section_ids": _ID_LIST,
        "tuple_id": {"type": "string"},
    },
}

ARTIFACT_SCHEMAS: Dict[str, Dict[str, Any]] = {
    "summary": {
        "type": "object",
        "required": ["summary", "prompt", "backend"],
        "properties": {"summary": {"type": "string"}, "prompt": {"type": "object"}, "backend": {"type": "string"}},
    },
    "retrieval": {
        "type": "object",
        "required": ["proposer", "candidate_ids"],
        "properties": {
            "proposer": {"type": "string"},
            "seed": {"type": ["integer", "null"]},
            "candidate_ids": _ID_LIST,
            "dropped_ids": _ID_LIST,
            "raw_text": {"type": "string"},
            "error": {"type": "object"},
        },
    },
    "consensus": {
        "type": "object",
        "required": ["strategy", "member_ids", "votes", "proposers"],
        "properties": {
            "strategy": {"enum": ["union", "majority"]},
            "member_ids": _ID_LIST,
            "votes": {"type": "object", "additionalProperties": {"type": "integer"}},
            "proposers": _ID_LIST,
            "pruned_ids": _ID_LIST,
        },
    },
    "changes": {
        "type": "object",
        "required": ["criterion_id", "tuples"],
        "properties": {
            "criterion_id": {"type": "string"},
            "tuples": {"type": "array", "items": _TUPLE},
            "rejected": {"type": "array"},
            "error": {"type": "object"},
        },
    },
    "check_report": {
        "type": "object",
        "required": ["subject", "status", "outcomes"],
        "properties": {
            "subject": {"type": "string"},
            "status": {"enum": ["pass", "skip", "warn"]},
            "outcomes": {"type": "array", "items": {"type": "object", "required": ["check_id", "status"]}},
            "warn_count": {"type": "integer"},
        },
    },
    "sysml_checkpoint": {
        "type": "object",
        "required": ["revision", "model"],
        "properties": {"revision": {"type": "integer"}, "model": {"type": "string"}, "delta_id": {"type": ["string", "null"]}},
    },
    "run_config": {
        "type": "object",
        "required": ["config"],
        "properties": {"config": {"type": "object"}},
    },
    "section_failure": {
        "type": "object",
        "required": ["error"],
        "properties": {"error": {"type": "object"}, "stage": {"type": "string"}},
    },
}

_VALIDATORS = {kind: Draft202012Validator(schema) for kind, schema in ARTIFACT_SCHEMAS.items()}


@dataclass(frozen=True)
class ArtifactRecord:
    kind: str
    payload: Dict[str, Any]
    section_id: Optional[str] = None
    producer: str = ""
    revision: int = 0
    created_at: str = ""

    def to_dict(self) -> Dict[str, Any]:
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": self.kind,
            "section_id": self.section_id,
            "payload": self.payload,
            "revision": self.revision,
            "created_at": self.created_at,
            "producer": self.producer,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ArtifactRecord":
        return cls(
            kind=data["kind"],
            payload=data["payload"],
            section_id=data.get("section_id"),
            producer=data.get("producer", ""),
            revision=int(data["revision"]),
            created_at=data.get("created_at", ""),
        )


def validate_payload(kind: str, payload: Any) -> None:
    validator = _VALIDATORS.get(kind)
    if validator is None:
        raise SchemaViolation(kind, [f"unknown artifact kind '{kind}'"])
    problems = [e.message for e in sorted(validator.iter_errors(payload), key=str)]
    if problems:
        raise SchemaViolation(kind, problems)


@dataclass
class SectionStore:
    """Handle on a store directory (the ``StoreHandle`` of the data model)."""

    path: Path
    _sections: Dict[Tuple[str, str], Section] = field(default_factory=dict, repr=False)
    _generation: Dict[str, int] = field(default_factory=dict, repr=False)
    _artifacts: Dict[Tuple[str, Optional[str]], List[ArtifactRecord]] = field(
        default_factory=lambda: defaultdict(list), repr=False
    )
    _mutex: threading.RLock = field(default_factory=threading.RLock, repr=False)
    _stamps: Dict[str, Optional[Tuple[int, int]]] = field(default_factory=dict, repr=False)

    @classmethod
    def open(cls, path) -> "SectionStore":
        store = cls(Path(path))
        store.path.mkdir(parents=True, exist_ok=True)
        store.refresh()
        return store

    @property
    def versions(self) -> Set[str]:
        return set(self._generation)

    @property
    def _lock(self) -> FileLock:
        return FileLock(str(self.path / LOCK_FILE))

    def _stamp(self, name: str) -> Optional[Tuple[int, int]]:
        try:
            st = (self.path / name).stat()
        except FileNotFoundError:
            return None
        return st.st_size, st.st_mtime_ns

    def _current_stamps(self) -> Dict[str, Optional[Tuple[int, int]]]:
        return {name: self._stamp(name) for name in (SECTIONS_FILE, ARTIFACTS_FILE)}

    def refresh(self, force: bool = False) -> None:
        """Rebuilds the index from the JSONL tables when either changed since the last read."""
        with self._mutex:
            stamps = self._current_stamps()
            if not force and stamps == self._stamps:
                return
            rows: List[Dict[str, Any]] = list(self._read_lines(SECTIONS_FILE))
            generation: Dict[str, int] = {}
            for row in rows:
                generation[row["doc_version"]] = max(generation.get(row["doc_version"], 0), row["generation"])
            sections: Dict[Tuple[str, str], Section] = {}
            for row in rows:
                if row["generation"] == generation[row["doc_version"]]:
                    section = Section.from_dict(row["section"])
                    sections[(section.doc_version, section.section_id)] = section
            artifacts: Dict[Tuple[str, Optional[str]], List[ArtifactRecord]] = defaultdict(list)
            for row in self._read_lines(ARTIFACTS_FILE):
                record = ArtifactRecord.from_dict(row)
                artifacts[(record.kind, record.section_id)].append(record)
            for records in artifacts.values():
                records.sort(key=lambda r: r.revision)
            self._sections, self._generation, self._artifacts = sections, generation, artifacts
            self._stamps = stamps

    def _read_lines(self, name: str):
        path = self.path / name
        if not path.exists():
            return
        with open(path, "r", encoding="utf-8") as f:
            for lineno, line in enumerate(f, 1):
                line = line.strip()
                if not line:
                    continue
                try:
                    yield json.loads(line)
                except json.JSONDecodeError:
                    logger.warning("skipping torn record %s:%d", name, lineno)

    def _append(self, name: str, rows: Sequence[Dict[str, Any]]) -> None:
        # one write call per batch; the lines are fully serialized before the file is touched
        blob = "".join(canonical_json(row) + "\n" for row in rows)
        with open(self.path / name, "a", encoding="utf-8") as f:
            f.write(blob)
            f.flush()
            os.fsync(f.fileno())

    # === sections ===

    def put_sections(self, version: str, sections: Sequence[Section], overwrite: bool = False) -> int:
        seen: Set[str] = set()
        for section in sections:
            if section.section_id in seen:
                raise DuplicateSectionId(version, section.section_id)
            seen.add(section.section_id)

        with self._lock, self._mutex:
            self.refresh()
            if version in self._generation and not overwrite:
                raise DuplicateVersion(version)
            generation = self._generation.get(version, 0) + 1
            rows = []
            for section in sections:
                if section.doc_version != version:
                    section = Section(version, section.section_id, section.heading, section.text,
                                      section.order_index, section.parent_id)
                rows.append({
                    "schema_version": SCHEMA_VERSION,
                    "doc_version": version,
                    "generation": generation,
                    "section": section.to_dict(),
                })
            self._append(SECTIONS_FILE, rows)
            self.refresh()
        logger.info("stored %d sections for %s (generation %d)", len(rows), version, generation)
        return len(rows)

    def _require_version(self, version: str) -> None:
        if version not in self._generation:
            raise UnknownVersion(version)

    def sections(self, version: str) -> List[Section]:
        self._require_version(version)
        with self._mutex:
            found = [s for (v, _), s in self._sections.items() if v == version]
        return sorted(found, key=lambda s: s.order_index)

    def list_sections(self, version: str) -> List[Tuple[str, str]]:
        return [(s.section_id, s.heading) for s in self.sections(version)]

    def fetch_section(self, version: str, section_id: str) -> Section:
        self._require_version(version)
        try:
            return self._sections[(version, section_id)]
        except KeyError:
            raise UnknownSection(version, section_id) from None

    def has_section(self, version: str, section_id: str) -> bool:
        return (version, section_id) in self._sections

    # === artifacts ===

    def put_artifact(self, record: ArtifactRecord) -> int:
        validate_payload(record.kind, record.payload)
        with self._lock, self._mutex:
            self.refresh()
            prior = self._artifacts.get((record.kind, record.section_id), [])
            revision = (prior[-1].revision if prior else 0) + 1
            stored = ArtifactRecord(
                kind=record.kind,
                payload=record.payload,
                section_id=record.section_id,
                producer=record.producer,
                revision=revision,
                created_at=datetime.now(timezone.utc).isoformat(),
            )
            self._append(ARTIFACTS_FILE, [stored.to_dict()])
            self._artifacts[(record.kind, record.section_id)].append(stored)
            self._stamps[ARTIFACTS_FILE] = self._stamp(ARTIFACTS_FILE)
        return revision

    def get_artifacts(self, kind: str, section_id: Any = ANY_SECTION) -> List[ArtifactRecord]:
        """Records of ``kind`` sorted by revision; all sections unless one is named."""
        with self._mutex:
            if section_id is ANY_SECTION:
                records = [r for (k, _), rs in self._artifacts.items() if k == kind for r in rs]
                return sorted(records, key=lambda r: (r.created_at, r.revision))
            return list(self._artifacts.get((kind, section_id), []))

    def latest_artifact(self, kind: str, section_id: Optional[str] = None, run: Optional[int] = None) -> Optional[ArtifactRecord]:
        records = self.get_artifacts(kind, section_id)
        if run is not None:
            records = [r for r in records if r.payload.get("run") == run]
        return records[-1] if records else None
