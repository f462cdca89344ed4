"""Pretty printer; ``parse(serialize(m)) == m`` for every model."""
from __future__ import annotations

from typing import List

from deltaforge.phase3.sysml.elements import (
    Attribute,
    Connection,
    Import,
    Member,
    Model,
    Package,
    PartDef,
    PartUsage,
    PortDef,
    PortUsage,
    RequirementDef,
    Satisfy,
)
from deltaforge.phase3.sysml.expressions import render

INDENT = "    "


def _quote(text: str) -> str:
    return '"' + text.replace("\\", "\\\\").replace('"', '\\"').replace("\n", "\\n") + '"'


def _block(head: str, members, depth: int) -> List[str]:
    pad = INDENT * depth
    if not members:
        return [f"{pad}{head} {{}}"]
    lines = [f"{pad}{head} {{"]
    for m in members:
        lines.extend(serialize_member(m, depth + 1))
    lines.append(f"{pad}}}")
    return lines


def serialize_member(m: Member, depth: int = 0) -> List[str]:
    pad = INDENT * depth
    if isinstance(m, Import):
        vis = f"{m.visibility} " if m.visibility else ""
        star = "::*" if m.wildcard else ""
        return [f"{pad}{vis}import {'::'.join(m.path)}{star};"]
    if isinstance(m, Attribute):
        return [f"{pad}attribute {m.name} : {m.type_name};"]
    if isinstance(m, PortDef):
        return _block(f"port def {m.name}", m.attributes, depth)
    if isinstance(m, PortUsage):
        return [f"{pad}port {m.name} : {'::'.join(m.def_path)};"]
    if isinstance(m, PartDef):
        return _block(f"part def {m.name}", m.members, depth)
    if isinstance(m, PartUsage):
        head = f"part {m.name} : {'::'.join(m.def_path)}"
        if m.body is None:
            return [f"{pad}{head};"]
        return _block(head, m.body, depth)
    if isinstance(m, Connection):
        return [f"{pad}connect {'.'.join(m.source)} to {'.'.join(m.target)};"]
    if isinstance(m, Satisfy):
        return [f"{pad}satisfy {'::'.join(m.requirement_path)} by {'.'.join(m.by_feature_path)};"]
    if isinstance(m, RequirementDef):
        inner = []
        if m.doc is not None:
            inner.append(f"{pad}{INDENT}doc {_quote(m.doc)};")
        inner.extend(f"{pad}{INDENT}constraint {render(c)};" for c in m.constraints)
        if not inner:
            return [f"{pad}require def {m.name} {{}}"]
        return [f"{pad}require def {m.name} {{", *inner, f"{pad}}}"]
    raise TypeError(f"cannot serialize {type(m).__name__}")


def member_text(m: Member) -> str:
    return "\n".join(serialize_member(m))


def serialize(model: Model) -> str:
    if not model.packages:
        return ""
    chunks = ["\n".join(_block(f"package {p.name}", p.members, 0)) for p in model.packages]
    return "\n\n".join(chunks) + "\n"

