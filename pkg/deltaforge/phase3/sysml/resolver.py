"""
Name resolution ("compile") for the SysML subset.

Qualified names (``A::B``) resolve through the enclosing scopes, their
imports, then the root packages. Feature paths (``a.b.c``) start at a usage
visible from the statement's scope and descend through usage bodies and
the members of their definitions.
"""
from __future__ import annotations

import difflib
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

from deltaforge.phase3.sysml.elements import (
    Attribute,
    Connection,
    Diagnostic,
    Element,
    Import,
    Model,
    Package,
    PartDef,
    PartUsage,
    PortDef,
    PortUsage,
    RequirementDef,
    Satisfy,
    Severity,
    Span,
    element_ids,
)

logger = logging.getLogger(__name__)

Hit = Tuple[str, Element]
FEATURE_TYPES = (PartUsage, PortUsage, Attribute)
NAMESPACES = (Package, PartDef, PartUsage, PortDef)


@dataclass
class Scope:
    eid: str
    element: object
    parent: Optional["Scope"]
    named: Dict[str, List[Hit]] = field(default_factory=dict)
    imports: List[Import] = field(default_factory=list)


@dataclass(frozen=True)
class Resolution:
    hits: Tuple[Hit, ...] = ()
    failed_segment: Optional[str] = None
    candidates: Tuple[str, ...] = ()

    @property
    def ok(self) -> bool:
        return self.failed_segment is None and bool(self.hits)

    @property
    def target(self) -> Optional[Hit]:
        return self.hits[-1] if self.ok else None

    def suggestion(self) -> Optional[str]:
        if self.failed_segment is None:
            return None
        close = difflib.get_close_matches(self.failed_segment, self.candidates, n=1)
        return f"did you mean '{close[0]}'?" if close else None


class Resolver:
    def __init__(self, model: Model):
        self.model = model
        self.root = Scope("", model, None)
        self.scopes: Dict[str, Scope] = {"": self.root}
        # (owning scope, element id, element) for every element, pre-order
        self.items: List[Tuple[Scope, str, Element]] = []
        self._build(self.root, model)

    def _build(self, scope: Scope, container) -> None:
        for eid, el in element_ids(container, scope.eid):
            self.items.append((scope, eid, el))
            if isinstance(el, Import):
                scope.imports.append(el)
            name = getattr(el, "name", None)
            if name is not None:
                scope.named.setdefault(name, []).append((eid, el))
            if isinstance(el, NAMESPACES):
                child = Scope(eid, el, scope)
                self.scopes[eid] = child
                self._build(child, el)

    # === qualified names ===

    def resolve_absolute(self, path: Sequence[str]) -> Resolution:
        return self._descend(self.root, path)

    def _descend(self, scope: Optional[Scope], path: Sequence[str], hits: Tuple[Hit, ...] = ()) -> Resolution:
        for segment in path:
            if scope is None:
                return Resolution(hits, segment, ())
            found = scope.named.get(segment)
            if not found:
                return Resolution(hits, segment, tuple(scope.named))
            hit = found[0]
            hits = hits + (hit,)
            scope = self.scopes.get(hit[0])
        return Resolution(hits)

    def _imported(self, scope: Scope, name: str) -> Optional[Hit]:
        for imp in scope.imports:
            target = self.resolve_absolute(imp.path).target
            if target is None:
                continue
            if imp.wildcard:
                inner = self.scopes.get(target[0])
                if inner is not None and inner.named.get(name):
                    return inner.named[name][0]
            elif imp.path[-1] == name:
                return target
        return None

    def lookup(self, scope: Scope, name: str) -> Tuple[Optional[Hit], Tuple[str, ...]]:
        """First visible element called ``name``, plus every visible name for hints."""
        visible: List[str] = []
        s: Optional[Scope] = scope
        while s is not None:
            found = s.named.get(name)
            if found:
                return found[0], ()
            visible.extend(s.named)
            hit = self._imported(s, name)
            if hit is not None:
                return hit, ()
            s = s.parent
        return None, tuple(visible)

    def resolve_qpath(self, scope: Scope, path: Sequence[str]) -> Resolution:
        first, visible = self.lookup(scope, path[0])
        if first is None:
            return Resolution((), path[0], visible)
        return self._descend(self.scopes.get(first[0]), path[1:], (first,))

    # === feature paths ===

    def definition_of(self, eid: str, el: Element) -> Optional[Hit]:
        """The definition a usage is typed by, resolved from the usage's owning scope."""
        if not isinstance(el, (PartUsage, PortUsage)):
            return None
        owner = self.scopes.get(eid.rsplit("::", 1)[0] if "::" in eid else "")
        target = self.resolve_qpath(owner or self.root, el.def_path).target
        expected = PartDef if isinstance(el, PartUsage) else PortDef
        return target if target is not None and isinstance(target[1], expected) else None

    def feature_members(self, eid: str, el: Element) -> Dict[str, Hit]:
        members: Dict[str, Hit] = {}
        if isinstance(el, PartUsage) and el.body is not None:
            for name, hits in self.scopes[eid].named.items():
                members.setdefault(name, hits[0])
        definition = self.definition_of(eid, el)
        if definition is not None:
            for name, hits in self.scopes[definition[0]].named.items():
                members.setdefault(name, hits[0])
        return {n: h for n, h in members.items() if isinstance(h[1], FEATURE_TYPES)}

    def resolve_feature(self, scope: Scope, path: Sequence[str]) -> Resolution:
        first, visible = self.lookup(scope, path[0])
        if first is None or not isinstance(first[1], FEATURE_TYPES):
            return Resolution((), path[0], visible)
        hits: Tuple[Hit, ...] = (first,)
        for segment in path[1:]:
            members = self.feature_members(*hits[-1])
            if segment not in members:
                return Resolution(hits, segment, tuple(members))
            hits = hits + (members[segment],)
        return Resolution(hits)

    def resolve_feature_anywhere(self, path: Sequence[str]) -> Resolution:
        """Feature path starting at a usage owned by any package, in package order."""
        last = Resolution((), path[0] if path else "", ())
        for pkg in self.model.packages:
            res = self.resolve_feature(self.scopes[pkg.name], path)
            if res.ok:
                return res
            last = res
        return last


@dataclass(frozen=True)
class CompileReport:
    resolved_count: int
    diagnostics: Tuple[Diagnostic, ...] = ()

    @property
    def unresolved(self) -> Tuple[Diagnostic, ...]:
        return self.diagnostics

    @property
    def success(self) -> bool:
        return not self.diagnostics

    def to_dict(self):
        return {
            "success": self.success,
            "resolved_count": self.resolved_count,
            "unresolved": [d.to_dict() for d in self.diagnostics],
        }


def _kind_name(expected) -> str:
    return expected.__name__ if isinstance(expected, type) else "namespace"


def _unresolved(kind: str, text: str, res: Resolution, eid: str, span: Optional[Span]) -> Diagnostic:
    return Diagnostic(
        Severity.ERROR,
        "unresolved_reference",
        f"cannot resolve {kind} '{text}' (no '{res.failed_segment}')",
        span,
        res.suggestion(),
        eid,
    )


def compile(model: Model) -> CompileReport:
    """Resolves every reference in ``model``; success iff nothing is left unresolved."""
    resolver = Resolver(model)
    resolved = 0
    diagnostics: List[Diagnostic] = []

    def check(kind: str, text: str, res: Resolution, eid: str, el, expected=None) -> None:
        nonlocal resolved
        if res.ok and (expected is None or isinstance(res.target[1], expected)):
            resolved += 1
            return
        if res.ok:
            diagnostics.append(Diagnostic(
                Severity.ERROR, "unresolved_reference",
                f"{kind} '{text}' names a {type(res.target[1]).__name__}, expected {_kind_name(expected)}",
                el.span, None, eid,
            ))
            return
        diagnostics.append(_unresolved(kind, text, res, eid, el.span))

    for scope, eid, el in resolver.items:
        if isinstance(el, Import):
            res = resolver.resolve_absolute(el.path)
            check("import", "::".join(el.path), res, eid, el, NAMESPACES if el.wildcard else None)
        elif isinstance(el, PartUsage):
            check("part definition", "::".join(el.def_path), resolver.resolve_qpath(scope, el.def_path), eid, el, PartDef)
        elif isinstance(el, PortUsage):
            check("port definition", "::".join(el.def_path), resolver.resolve_qpath(scope, el.def_path), eid, el, PortDef)
        elif isinstance(el, Satisfy):
            check("requirement", "::".join(el.requirement_path),
                  resolver.resolve_qpath(scope, el.requirement_path), eid, el, RequirementDef)
            check("feature", ".".join(el.by_feature_path), resolver.resolve_feature(scope, el.by_feature_path), eid, el)
        elif isinstance(el, Connection):
            check("feature", ".".join(el.source), resolver.resolve_feature(scope, el.source), eid, el)
            check("feature", ".".join(el.target), resolver.resolve_feature(scope, el.target), eid, el)

    if diagnostics:
        logger.debug("compile: %d resolved, %d unresolved", resolved, len(diagnostics))
    return CompileReport(resolved, tuple(diagnostics))


compile_model = compile
