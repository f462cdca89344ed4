"""
Incremental model edits. A Delta is an ordered list of small operations
traced to the change tuples that motivated it; ``apply_delta`` is pure and
atomic: either every op applies or the caller keeps the input model.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Union

from deltaforge.errors import DeltaError, DuplicateName, InvalidPath, ParseError, PathNotFound, PreconditionViolation
from deltaforge.phase3.sysml.elements import (
    Attribute,
    Connection,
    Member,
    Model,
    Package,
    PartDef,
    PartUsage,
    PortDef,
    RequirementDef,
)
from deltaforge.phase3.sysml.expressions import Expression, render
from deltaforge.phase3.sysml.parser import parse, parse_expression, parse_member
from deltaforge.phase3.sysml.serializer import member_text, serialize
from deltaforge.utils import load_json_file

QPATH_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*(::[A-Za-z_][A-Za-z0-9_]*)*$")
OP_KINDS = ("add_element", "remove_element", "replace_element", "add_connection", "remove_connection", "set_requirement")

ElementSpec = Union[Member, Package, str]
_UNSET = object()


@dataclass(frozen=True)
class DeltaOp:
    op: str
    path: str = ""
    element: Optional[ElementSpec] = None
    index: Optional[int] = None
    doc_text: Any = _UNSET
    constraints: Any = _UNSET

    def to_dict(self) -> Dict[str, Any]:
        out: Dict[str, Any] = {"op": self.op}
        if self.op == "add_element":
            out["parent_path"] = self.path
        elif self.op in ("add_connection", "remove_connection"):
            out["pkg_path"] = self.path
        else:
            out["path"] = self.path
        if self.element is not None:
            out["element" if self.op != "add_connection" else "connection"] = (
                self.element if isinstance(self.element, str) else _element_text(self.element)
            )
        if self.index is not None:
            out["index"] = self.index
        if self.doc_text is not _UNSET:
            out["doc_text"] = self.doc_text
        if self.constraints is not _UNSET:
            out["constraints"] = [c if isinstance(c, str) else render(c) for c in self.constraints]
        return out

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "DeltaOp":
        op = data.get("op")
        if op not in OP_KINDS:
            raise PreconditionViolation(f"unknown delta op '{op}'; expected one of {OP_KINDS}")
        path = data.get("parent_path", data.get("pkg_path", data.get("path", "")))
        constraints: Any = _UNSET
        if "constraints" in data:
            constraints = tuple(data["constraints"] or ())
        elif "constraint" in data:
            constraints = () if data["constraint"] is None else (data["constraint"],)
        return cls(
            op=op,
            path=path or "",
            element=data.get("element", data.get("connection")),
            index=data.get("index"),
            doc_text=data["doc_text"] if "doc_text" in data else _UNSET,
            constraints=constraints,
        )


def _element_text(el) -> str:
    if isinstance(el, Package):
        return serialize(Model((el,))).rstrip("\n")
    return member_text(el)


@dataclass(frozen=True)
class Delta:
    delta_id: str
    ops: Tuple[DeltaOp, ...]
    trace: Tuple[str, ...] = ()

    def __post_init__(self):
        if not self.ops:
            raise PreconditionViolation(f"delta '{self.delta_id}' has no ops")

    def to_dict(self) -> Dict[str, Any]:
        return {"delta_id": self.delta_id, "trace": list(self.trace), "ops": [o.to_dict() for o in self.ops]}

    @classmethod
    def from_dict(cls, data: Any, delta_id: Optional[str] = None) -> "Delta":
        """Accepts {"delta_id", "trace", "ops"} or a bare array of op records each carrying its own ``trace``."""
        if isinstance(data, list):
            trace: List[str] = []
            for record in data:
                for t in record.get("trace", ()):
                    if t not in trace:
                        trace.append(t)
            data = {"delta_id": delta_id, "trace": trace, "ops": data}
        if not isinstance(data, dict):
            raise PreconditionViolation("a delta is a JSON object or an array of op records")
        did = data.get("delta_id") or delta_id
        if not did:
            raise PreconditionViolation("delta has no delta_id")
        return cls(str(did), tuple(DeltaOp.from_dict(o) for o in data.get("ops", ())), tuple(data.get("trace", ())))


def load_delta(path) -> Delta:
    path = Path(path)
    stem = path.name.split(".")[0]
    return Delta.from_dict(load_json_file(path), delta_id=stem)


# === application ===

def _split(path: str, index: int, model: Model, allow_empty: bool = False) -> Tuple[str, ...]:
    if path == "" and allow_empty:
        return ()
    if not QPATH_RE.match(path or ""):
        raise InvalidPath(f"'{path}' is not a qualified name (NAME ('::' NAME)*)", index, model)
    return tuple(path.split("::"))


def _materialize(spec: ElementSpec, index: int, model: Model, connection: bool = False):
    if isinstance(spec, str):
        try:
            if spec.lstrip().startswith("package"):
                parsed = parse(spec)
                if len(parsed.packages) != 1:
                    raise InvalidPath("element text must hold exactly one package", index, model)
                return parsed.packages[0]
            el = parse_member(spec)
        except ParseError as e:
            raise DeltaError(f"element text does not parse: {e}", index, model) from e
    else:
        el = spec
    if el is None:
        raise DeltaError("op needs an element", index, model)
    if connection and not isinstance(el, Connection):
        raise DeltaError(f"add_connection needs a connection, got {type(el).__name__}", index, model)
    return el


def _members_of(container) -> Tuple:
    if isinstance(container, Model):
        return container.packages
    if isinstance(container, PortDef):
        return container.attributes
    if isinstance(container, (Package, PartDef, PartUsage)):
        return container.members
    return None


def _with_members(container, members: Tuple):
    if isinstance(container, Model):
        return replace(container, packages=members)
    if isinstance(container, PortDef):
        return replace(container, attributes=members)
    if isinstance(container, PartUsage):
        return replace(container, body=members)
    return replace(container, members=members)


def _edit(container, path: Sequence[str], fn: Callable, index: int, model: Model, full: str):
    """Rebuilds ``container`` with ``fn`` applied to the members of the element at ``path``."""
    if not path:
        members = _members_of(container)
        if members is None:
            raise PathNotFound(f"'{full}' does not own members", index, model)
        return _with_members(container, tuple(fn(members)))
    members = _members_of(container)
    if members is None:
        raise PathNotFound(f"'{full}' not found", index, model)
    for i, m in enumerate(members):
        if getattr(m, "name", None) == path[0]:
            updated = _edit(m, path[1:], fn, index, model, full)
            return _with_members(container, members[:i] + (updated,) + members[i + 1:])
    raise PathNotFound(f"'{full}' not found (no '{path[0]}')", index, model)


def _find(container, path: Sequence[str]):
    for segment in path:
        members = _members_of(container) or ()
        container = next((m for m in members if getattr(m, "name", None) == segment), None)
        if container is None:
            return None
    return container


def _check_fits(parent, el, index: int, model: Model, full: str) -> None:
    if isinstance(parent, Model) and not isinstance(el, Package):
        raise DeltaError(f"only packages can be added at the model root, got {type(el).__name__}", index, model)
    if isinstance(el, Package) and not isinstance(parent, Model):
        raise DeltaError(f"packages can only be added at the model root, not under '{full}'", index, model)
    if isinstance(parent, PortDef) and not isinstance(el, Attribute):
        raise DeltaError(f"port definition '{full}' only holds attributes", index, model)


def _apply_op(model: Model, op: DeltaOp, index: int, original: Model) -> Model:
    if op.op == "add_element":
        parent_path = _split(op.path, index, original, allow_empty=True)
        el = _materialize(op.element, index, original)
        parent = _find(model, parent_path)
        if parent is None:
            raise PathNotFound(f"'{op.path}' not found", index, original)
        _check_fits(parent, el, index, original, op.path)

        def add(members):
            if el.name is not None and any(getattr(m, "name", None) == el.name for m in members):
                raise DuplicateName(f"'{el.name}' already exists in '{op.path or '<root>'}'", index, original)
            return members + (el,)

        return _edit(model, parent_path, add, index, original, op.path)

    if op.op in ("remove_element", "replace_element"):
        path = _split(op.path, index, original)
        el = _materialize(op.element, index, original) if op.op == "replace_element" else None
        if el is not None:
            _check_fits(_find(model, path[:-1]) if len(path) > 1 else model, el, index, original, op.path)

        def swap(members):
            for i, m in enumerate(members):
                if getattr(m, "name", None) == path[-1]:
                    if el is None:
                        return members[:i] + members[i + 1:]
                    clash = el.name != path[-1] and any(getattr(o, "name", None) == el.name for o in members)
                    if clash:
                        raise DuplicateName(f"'{el.name}' already exists next to '{op.path}'", index, original)
                    return members[:i] + (el,) + members[i + 1:]
            raise PathNotFound(f"'{op.path}' not found", index, original)

        return _edit(model, path[:-1], swap, index, original, op.path)

    if op.op == "add_connection":
        path = _split(op.path, index, original)
        conn = _materialize(op.element, index, original, connection=True)
        return _edit(model, path, lambda members: members + (conn,), index, original, op.path)

    if op.op == "remove_connection":
        path = _split(op.path, index, original)

        def drop(members):
            positions = [i for i, m in enumerate(members) if isinstance(m, Connection)]
            if op.index is None or not 0 <= op.index < len(positions):
                raise PathNotFound(f"no connection #{op.index} in '{op.path}' ({len(positions)} present)", index, original)
            at = positions[op.index]
            return members[:at] + members[at + 1:]

        return _edit(model, path, drop, index, original, op.path)

    # set_requirement
    path = _split(op.path, index, original)
    target = _find(model, path)
    if not isinstance(target, RequirementDef):
        raise PathNotFound(f"'{op.path}' is not a requirement", index, original)
    changes: Dict[str, Any] = {}
    if op.doc_text is not _UNSET:
        changes["doc"] = op.doc_text
    if op.constraints is not _UNSET:
        try:
            changes["constraints"] = tuple(
                c if isinstance(c, Expression) else parse_expression(c) for c in op.constraints
            )
        except ParseError as e:
            raise DeltaError(f"constraint does not parse: {e}", index, original) from e
    updated = replace(target, **changes)

    def put(members):
        return tuple(updated if getattr(m, "name", None) == path[-1] else m for m in members)

    return _edit(model, path[:-1], put, index, original, op.path)


def apply_delta(model: Model, delta: Delta) -> Model:
    """
    New model with every op applied in order. Raises a DeltaError subclass
    carrying the op index and the untouched input model on the first failure.
    """
    for i, op in enumerate(delta.ops):
        if op.op not in OP_KINDS:
            raise InvalidPath(f"unknown op '{op.op}'", i, model)
        _split(op.path, i, model, allow_empty=op.op == "add_element")
    current = model
    for i, op in enumerate(delta.ops):
        current = _apply_op(current, op, i, model)
    try:
        # normalize spans against the text the result serializes to
        return parse(serialize(current))
    except ParseError as e:
        raise DeltaError(f"result does not re-parse: {e}", len(delta.ops) - 1, model) from e
