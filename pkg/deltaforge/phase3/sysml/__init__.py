"""Parser, resolver, static checks, deltas and validated caching for a SysML v2 subset."""
from deltaforge.phase3.sysml.cache import UpdateOutcome, ValidatedCache, validated_update
from deltaforge.phase3.sysml.checks import CHECKS, static_check
from deltaforge.phase3.sysml.delta import Delta, DeltaOp, apply_delta, load_delta
from deltaforge.phase3.sysml.expressions import evaluate_expression
from deltaforge.phase3.sysml.parser import parse
from deltaforge.phase3.sysml.resolver import compile
from deltaforge.phase3.sysml.serializer import serialize

__all__ = [
    "CHECKS",
    "Delta",
    "DeltaOp",
    "UpdateOutcome",
    "ValidatedCache",
    "apply_delta",
    "compile",
    "evaluate_expression",
    "load_delta",
    "parse",
    "serialize",
    "static_check",
    "validated_update",
]
