"""Error types raised across the deltaforge phases.

Every error carries the structured context needed to record it as a run
artifact; ``to_dict`` is what ends up in ``section_failure`` records and in
``data/logs/error_log.txt``.
"""
from __future__ import annotations

from typing import Any, Dict, List, Optional, Sequence


class DeltaForgeError(Exception):
    """Base class for every error this package raises on purpose."""

    code = "deltaforge_error"

    def to_dict(self) -> Dict[str, Any]:
        return {"error": self.code, "message": str(self)}


class PreconditionViolation(DeltaForgeError, ValueError):
    code = "precondition_violation"


class ConfigError(DeltaForgeError, ValueError):
    code = "config_error"


# === phase1: sectionizer / store ===

class NoSectionsFound(DeltaForgeError):
    code = "no_sections_found"


class StoreError(DeltaForgeError):
    code = "store_error"


class DuplicateVersion(StoreError):
    code = "duplicate_version"

    def __init__(self, version: str):
        super().__init__(f"version '{version}' already populated (pass overwrite=True to replace)")
        self.version = version


class DuplicateSectionId(StoreError):
    code = "duplicate_section_id"

    def __init__(self, version: str, section_id: str):
        super().__init__(f"section id '{section_id}' appears twice in batch for '{version}'")
        self.version = version
        self.section_id = section_id


class UnknownVersion(StoreError):
    code = "unknown_version"

    def __init__(self, version: str):
        super().__init__(f"no sections stored for version '{version}'")
        self.version = version


class UnknownSection(StoreError):
    code = "unknown_section"

    def __init__(self, version: str, section_id: str):
        super().__init__(f"no section '{section_id}' in version '{version}'")
        self.version = version
        self.section_id = section_id


class SchemaViolation(StoreError):
    code = "schema_violation"

    def __init__(self, kind: str, problems: Sequence[str]):
        super().__init__(f"payload for '{kind}' violates its schema: {'; '.join(problems)}")
        self.kind = kind
        self.problems = list(problems)


# === phase2: similarity / gateway / retrieval / extraction ===

class EmptyCorpus(DeltaForgeError, ValueError):
    code = "empty_corpus"


class GatewayError(DeltaForgeError):
    code = "gateway_error"


class BackendUnreachable(GatewayError):
    code = "backend_unreachable"

    def __init__(self, backend_id: str, attempts: int, cause: Optional[BaseException] = None):
        super().__init__(f"backend '{backend_id}' unreachable after {attempts} attempts: {cause}")
        self.backend_id = backend_id
        self.attempts = attempts


class ToolLoopExceeded(GatewayError):
    code = "tool_loop_exceeded"

    def __init__(self, backend_id: str, rounds: int):
        super().__init__(f"backend '{backend_id}' still requesting tools after {rounds} rounds")
        self.backend_id = backend_id
        self.rounds = rounds


class MalformedResponse(GatewayError):
    code = "malformed_response"


class MissingFixture(GatewayError):
    code = "missing_fixture"

    def __init__(self, backend_id: str, key: str):
        super().__init__(f"mock backend '{backend_id}' has no fixture for key {key[:12]}... and no default")
        self.backend_id = backend_id
        self.key = key


class JsonCoercionFailed(GatewayError):
    code = "json_coercion_failed"

    def __init__(self, message: str, raw_text: str, problems: Sequence[str] = ()):
        super().__init__(message)
        self.raw_text = raw_text
        self.problems = list(problems)

    def to_dict(self) -> Dict[str, Any]:
        return {**super().to_dict(), "raw_text": self.raw_text, "problems": self.problems}


class NliUnreachable(DeltaForgeError):
    """The NLI service could not be reached; the check is skipped, not passed."""

    code = "nli_unreachable"


class EmptyV1(DeltaForgeError):
    code = "empty_v1"


class RetrievalFailed(DeltaForgeError):
    code = "retrieval_failed"

    def __init__(self, v2_section_id: str, failures: List[Dict[str, Any]]):
        super().__init__(f"every retrieval call failed for v2 section {v2_section_id}")
        self.v2_section_id = v2_section_id
        self.failures = failures

    def to_dict(self) -> Dict[str, Any]:
        return {**super().to_dict(), "failures": self.failures}


class MixedSections(DeltaForgeError, ValueError):
    code = "mixed_sections"


class InvalidTuple(DeltaForgeError, ValueError):
    code = "invalid_tuple"


class UnknownSectionInPredictions(DeltaForgeError, ValueError):
    code = "unknown_section_in_predictions"

    def __init__(self, section_ids: Sequence[str]):
        super().__init__(f"predictions reference sections missing from the oracle: {sorted(section_ids)}")
        self.section_ids = list(section_ids)


# === phase3: sysml kernel / testgen ===

class SysmlError(DeltaForgeError):
    code = "sysml_error"


class ParseError(SysmlError):
    code = "parse_error"

    def __init__(self, diagnostics: Sequence[Any]):
        self.diagnostics = list(diagnostics)
        super().__init__("\n".join(str(d) for d in self.diagnostics) or "parse error")

    def to_dict(self) -> Dict[str, Any]:
        return {**super().to_dict(), "diagnostics": [d.to_dict() for d in self.diagnostics]}


class UnknownCheckId(SysmlError, ValueError):
    code = "unknown_check_id"


class DeltaError(SysmlError):
    """Raised by apply_delta; ``model`` is the untouched input model."""

    code = "delta_error"

    def __init__(self, message: str, op_index: int, model: Any = None):
        super().__init__(f"op {op_index}: {message}")
        self.op_index = op_index
        self.model = model


class PathNotFound(DeltaError):
    code = "path_not_found"


class DuplicateName(DeltaError):
    code = "duplicate_name"


class InvalidPath(DeltaError):
    code = "invalid_path"


class InvalidBaseline(SysmlError):
    code = "invalid_baseline"


class TestgenError(DeltaForgeError):
    __test__ = False
    code = "testgen_error"


class UnboundVariable(TestgenError):
    code = "unbound_variable"

    def __init__(self, names: Sequence[str], ambiguous: Sequence[str] = ()):
        detail = f"unbound: {sorted(names)}"
        if ambiguous:
            detail += f"; ambiguous: {sorted(ambiguous)}"
        super().__init__(detail)
        self.names = sorted(names)
        self.ambiguous = sorted(ambiguous)


class UnresolvedFeaturePath(TestgenError):
    code = "unresolved_feature_path"

    def __init__(self, paths: Sequence[str]):
        super().__init__(f"feature paths do not resolve in the model: {sorted(paths)}")
        self.paths = sorted(paths)


class MissingNominalContext(TestgenError):
    code = "missing_nominal_context"

    def __init__(self, paths: Sequence[str]):
        super().__init__(f"no nominal context value for: {sorted(paths)}")
        self.paths = sorted(paths)
