"""
Comparison-chain expressions used by requirement constraints and test
monitors: ``lo <= a.b and a.b < hi and mode == "dry"``.
"""
from __future__ import annotations

from dataclasses import dataclass
from decimal import Decimal, InvalidOperation
from typing import Any, Dict, List, Mapping, Tuple, Union

from deltaforge.errors import PreconditionViolation

COMPARATORS = ("<", "<=", ">", ">=", "==")
# mirror of each comparator when its operands swap sides
FLIPPED = {"<": ">", "<=": ">=", ">": "<", ">=": "<=", "==": "=="}


@dataclass(frozen=True)
class FeatureRef:
    path: Tuple[str, ...]

    @property
    def dotted(self) -> str:
        return ".".join(self.path)


@dataclass(frozen=True)
class Number:
    text: str

    @property
    def value(self) -> Decimal:
        return Decimal(self.text)


@dataclass(frozen=True)
class String:
    value: str


Operand = Union[FeatureRef, Number, String]


@dataclass(frozen=True)
class Comparison:
    operands: Tuple[Operand, ...]
    ops: Tuple[str, ...]

    def __post_init__(self):
        if len(self.operands) != len(self.ops) + 1 or not self.ops:
            raise PreconditionViolation("a comparison chain needs n operands and n-1 >= 1 comparators")
        bad = [op for op in self.ops if op not in COMPARATORS]
        if bad:
            raise PreconditionViolation(f"unknown comparators {bad}")

    def pairs(self) -> List[Tuple[Operand, str, Operand]]:
        return [(self.operands[i], op, self.operands[i + 1]) for i, op in enumerate(self.ops)]


@dataclass(frozen=True)
class Expression:
    terms: Tuple[Comparison, ...]

    def __str__(self) -> str:
        return render(self)


def _render_operand(o: Operand) -> str:
    if isinstance(o, FeatureRef):
        return o.dotted
    if isinstance(o, Number):
        return o.text
    escaped = o.value.replace("\\", "\\\\").replace('"', '\\"').replace("\n", "\\n")
    return f'"{escaped}"'


def render(expr: Expression) -> str:
    parts = []
    for term in expr.terms:
        text = _render_operand(term.operands[0])
        for op, operand in zip(term.ops, term.operands[1:]):
            text += f" {op} {_render_operand(operand)}"
        parts.append(text)
    return " and ".join(parts)


def feature_paths(expr: Expression) -> List[Tuple[str, ...]]:
    """Distinct feature paths in order of first appearance."""
    seen: Dict[Tuple[str, ...], None] = {}
    for term in expr.terms:
        for o in term.operands:
            if isinstance(o, FeatureRef):
                seen.setdefault(o.path, None)
    return list(seen)


def substitute(expr: Expression, mapping: Mapping[str, Tuple[str, ...]]) -> Expression:
    """Rewrites feature references whose dotted form is a key of ``mapping``."""

    def swap(o: Operand) -> Operand:
        if isinstance(o, FeatureRef) and o.dotted in mapping:
            return FeatureRef(tuple(mapping[o.dotted]))
        return o

    return Expression(tuple(Comparison(tuple(swap(o) for o in t.operands), t.ops) for t in expr.terms))


def as_value(v: Any) -> Union[Decimal, str]:
    if isinstance(v, Decimal):
        return v
    if isinstance(v, bool):
        raise PreconditionViolation(f"boolean {v} is not a comparable value")
    if isinstance(v, (int, float)):
        return Decimal(str(v))
    if isinstance(v, str):
        return v
    raise PreconditionViolation(f"unsupported value {v!r}")


def _lookup(o: Operand, env: Mapping[str, Any]) -> Union[Decimal, str]:
    if isinstance(o, Number):
        return o.value
    if isinstance(o, String):
        return o.value
    if o.dotted not in env:
        raise PreconditionViolation(f"no value for feature path '{o.dotted}'")
    return as_value(env[o.dotted])


def _compare(a, op: str, b) -> bool:
    if op == "==":
        return type(a) is type(b) and a == b
    if not (isinstance(a, Decimal) and isinstance(b, Decimal)):
        raise PreconditionViolation(f"'{op}' needs numeric operands, got {a!r} and {b!r}")
    if op == "<":
        return a < b
    if op == "<=":
        return a <= b
    if op == ">":
        return a > b
    return a >= b


def evaluate_expression(expr: Expression, env: Mapping[str, Any]) -> bool:
    """Direct interpreter; ``env`` maps dotted feature paths to numbers or strings."""
    for term in expr.terms:
        for left, op, right in term.pairs():
            if not _compare(_lookup(left, env), op, _lookup(right, env)):
                return False
    return True


def parse_number(text: str) -> Decimal:
    try:
        return Decimal(text)
    except InvalidOperation as e:
        raise PreconditionViolation(f"'{text}' is not a number") from e
