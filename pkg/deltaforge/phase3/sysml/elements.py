"""
Immutable AST of the SysML v2 textual subset, plus the diagnostics every
kernel stage reports.

Elements carry their source span outside structural equality, so a parsed
model equals the model it was serialized from.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Any, Dict, Iterator, Optional, Tuple, Union

from deltaforge.phase3.sysml.expressions import Expression

QPath = Tuple[str, ...]
FPath = Tuple[str, ...]


@dataclass(frozen=True)
class Span:
    line: int
    col: int

    def __str__(self) -> str:
        return f"{self.line}:{self.col}"


class Severity(str, Enum):
    ERROR = "error"
    WARNING = "warning"


@dataclass(frozen=True)
class Diagnostic:
    severity: Severity
    code: str
    message: str
    span: Optional[Span] = None
    suggestion: Optional[str] = None
    element_id: Optional[str] = None

    def __str__(self) -> str:
        loc = f" at {self.span}" if self.span else ""
        hint = f" (hint: {self.suggestion})" if self.suggestion else ""
        return f"[{self.code}] {self.severity.value}{loc}: {self.message}{hint}"

    @property
    def is_error(self) -> bool:
        return self.severity is Severity.ERROR

    def to_dict(self) -> Dict[str, Any]:
        return {
            "severity": self.severity.value,
            "code": self.code,
            "message": self.message,
            "span": {"line": self.span.line, "col": self.span.col} if self.span else None,
            "suggestion": self.suggestion,
            "element_id": self.element_id,
        }


def _span() -> Any:
    return field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class Import:
    path: QPath
    wildcard: bool = False
    visibility: Optional[str] = None
    span: Optional[Span] = _span()

    @property
    def name(self) -> None:
        return None


@dataclass(frozen=True)
class Attribute:
    name: str
    type_name: str
    span: Optional[Span] = _span()


@dataclass(frozen=True)
class PortDef:
    name: str
    attributes: Tuple[Attribute, ...] = ()
    span: Optional[Span] = _span()

    @property
    def members(self) -> Tuple[Attribute, ...]:
        return self.attributes


@dataclass(frozen=True)
class PortUsage:
    name: str
    def_path: QPath
    span: Optional[Span] = _span()


@dataclass(frozen=True)
class Connection:
    source: FPath
    target: FPath
    span: Optional[Span] = _span()

    @property
    def name(self) -> None:
        return None


@dataclass(frozen=True)
class RequirementDef:
    name: str
    doc: Optional[str] = None
    constraints: Tuple[Expression, ...] = ()
    span: Optional[Span] = _span()


@dataclass(frozen=True)
class Satisfy:
    requirement_path: QPath
    by_feature_path: FPath
    span: Optional[Span] = _span()

    @property
    def name(self) -> None:
        return None


@dataclass(frozen=True)
class PartDef:
    name: str
    members: Tuple["Member", ...] = ()
    span: Optional[Span] = _span()


@dataclass(frozen=True)
class PartUsage:
    name: str
    def_path: QPath
    # None is the ``;`` form, () an empty body
    body: Optional[Tuple["Member", ...]] = None
    span: Optional[Span] = _span()

    @property
    def members(self) -> Tuple["Member", ...]:
        return self.body or ()


Member = Union[Import, Attribute, PortDef, PortUsage, Connection, RequirementDef, Satisfy, PartDef, PartUsage]
NAMESPACE_TYPES = (PartDef, PartUsage, PortDef)


@dataclass(frozen=True)
class Package:
    name: str
    members: Tuple[Member, ...] = ()
    span: Optional[Span] = _span()


Element = Union[Package, Member]


@dataclass(frozen=True)
class Model:
    packages: Tuple[Package, ...] = ()

    @cached_property
    def source_map(self) -> Dict[str, Span]:
        """Element id to source span, for every element that came from parsed text."""
        return {eid: el.span for eid, el in walk(self) if el.span is not None}

    def package(self, name: str) -> Optional[Package]:
        return next((p for p in self.packages if p.name == name), None)


def _child_id(owner: str, el: Element, counters: Dict[str, int]) -> str:
    name = getattr(el, "name", None)
    if name is not None:
        return f"{owner}::{name}" if owner else name
    kind = type(el).__name__.lower()
    index = counters.get(kind, 0)
    counters[kind] = index + 1
    return f"{owner}::<{kind}#{index}>"


def children(el: Any) -> Tuple[Element, ...]:
    if isinstance(el, Model):
        return el.packages
    if isinstance(el, (Package, PartDef, PartUsage, PortDef)):
        return el.members
    return ()


def walk(root: Any, owner: str = "") -> Iterator[Tuple[str, Element]]:
    """Pre-order (element id, element) pairs below ``root``."""
    counters: Dict[str, int] = {}
    for child in children(root):
        eid = _child_id(owner, child, counters)
        yield eid, child
        yield from walk(child, eid)


def element_ids(el: Any, owner: str) -> Iterator[Tuple[str, Element]]:
    """Ids of the direct children of ``el`` when it is owned at ``owner``."""
    counters: Dict[str, int] = {}
    for child in children(el):
        yield _child_id(owner, child, counters), child
