"""
Domain-specific static checks over a compiled model.

Only ``chk_multiple_sources_same_dest`` comes from field practice; the other
three are conservative additions in the same spirit.
"""
from __future__ import annotations

from collections import defaultdict
from typing import Callable, Dict, Iterable, List, Optional, Set, Tuple

from deltaforge.errors import UnknownCheckId
from deltaforge.phase3.sysml.elements import (
    Connection,
    Diagnostic,
    Model,
    PortUsage,
    RequirementDef,
    Satisfy,
    Severity,
)
from deltaforge.phase3.sysml.resolver import Resolver

CheckFn = Callable[[Resolver], List[Diagnostic]]


def chk_multiple_sources_same_dest(r: Resolver) -> List[Diagnostic]:
    """Error: two or more connections drive the same destination feature."""
    by_dest: Dict[Tuple[str, Tuple[str, ...]], List[Tuple[str, Connection]]] = defaultdict(list)
    for scope, eid, el in r.items:
        if isinstance(el, Connection):
            by_dest[(scope.eid, el.target)].append((eid, el))
    out = []
    for (_, target), conns in by_dest.items():
        if len(conns) < 2:
            continue
        sources = ", ".join(".".join(c.source) for _, c in conns)
        eid, second = conns[1]
        out.append(Diagnostic(
            Severity.ERROR, "chk_multiple_sources_same_dest",
            f"destination '{'.'.join(target)}' is driven by {len(conns)} sources: {sources}",
            second.span, "remove or redirect all but one connection", eid,
        ))
    return out


def chk_dangling_port(r: Resolver) -> List[Diagnostic]:
    """Warning: a declared port that no connection reaches."""
    connected: Set[str] = set()
    for scope, _, el in r.items:
        if isinstance(el, Connection):
            for path in (el.source, el.target):
                connected.update(eid for eid, _ in r.resolve_feature(scope, path).hits)
    return [
        Diagnostic(Severity.WARNING, "chk_dangling_port", f"port '{eid}' is never connected", el.span, None, eid)
        for _, eid, el in r.items
        if isinstance(el, PortUsage) and eid not in connected
    ]


def chk_duplicate_definition(r: Resolver) -> List[Diagnostic]:
    """Error: the same name declared twice in one scope."""
    out = []
    for scope in r.scopes.values():
        for name, hits in scope.named.items():
            for eid, el in hits[1:]:
                where = f"'{scope.eid}'" if scope.eid else "the model root"
                out.append(Diagnostic(
                    Severity.ERROR, "chk_duplicate_definition",
                    f"'{name}' is declared {len(hits)} times in {where}", el.span, "rename or remove the duplicate", eid,
                ))
    return out


def chk_unallocated_requirement(r: Resolver) -> List[Diagnostic]:
    """Warning: a requirement no satisfy statement refers to."""
    satisfied: Set[str] = set()
    for scope, _, el in r.items:
        if isinstance(el, Satisfy):
            target = r.resolve_qpath(scope, el.requirement_path).target
            if target is not None:
                satisfied.add(target[0])
    return [
        Diagnostic(Severity.WARNING, "chk_unallocated_requirement",
                   f"requirement '{eid}' is not satisfied by any feature", el.span, None, eid)
        for _, eid, el in r.items
        if isinstance(el, RequirementDef) and eid not in satisfied
    ]


CHECKS: Dict[str, CheckFn] = {
    "chk_multiple_sources_same_dest": chk_multiple_sources_same_dest,
    "chk_dangling_port": chk_dangling_port,
    "chk_duplicate_definition": chk_duplicate_definition,
    "chk_unallocated_requirement": chk_unallocated_requirement,
}


def static_check(model: Model, checks: Optional[Iterable[str]] = None) -> List[Diagnostic]:
    """Runs the enabled checks (all when ``checks`` is None) in registry order."""
    enabled = list(CHECKS) if checks is None else list(checks)
    unknown = [c for c in enabled if c not in CHECKS]
    if unknown:
        raise UnknownCheckId(f"unknown static checks {unknown}; known: {sorted(CHECKS)}")
    resolver = Resolver(model)
    out: List[Diagnostic] = []
    for check_id in CHECKS:
        if check_id in enabled:
            out.extend(CHECKS[check_id](resolver))
    return out


def has_errors(diagnostics: Iterable[Diagnostic]) -> bool:
    return any(d.is_error for d in diagnostics)
