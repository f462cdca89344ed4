"""
Classical sectionization of pre-extracted document text.

A document version becomes an ordered list of ``Section`` records keyed by
their dotted numbering ("3.1.2"). Alignment between versions is not the
sectionizer's job: ids are only unique inside one version.
"""
from __future__ import annotations

import json
import logging
import re
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

from deltaforge.errors import NoSectionsFound, PreconditionViolation

logger = logging.getLogger(__name__)

DEFAULT_HEADING_PATTERN = r"^\s*(?P<id>\d+(?:\.\d+)*)\.?\s+(?P<heading>\S.*?)\s*$"
MARKDOWN_HEADING_PATTERN = r"^\s*(?P<hashes>#{1,6})\s+(?P<heading>\S.*?)\s*#*\s*$"
PAGE_NUMBER_PATTERN = re.compile(r"^\d{1,4}$")
MAX_HEADING_TOKENS = 15
PREAMBLE_ID = "0"

_TRAILING_SENTENCE_PUNCT = (".", ",", ";", ":")
_WS_RE = re.compile(r"\s+")


@dataclass(frozen=True)
class Section:
    doc_version: str
    section_id: str
    heading: str
    text: str
    order_index: int
    parent_id: Optional[str] = None

    @property
    def heading_line(self) -> str:
        if self.section_id == PREAMBLE_ID and not self.heading:
            return ""
        return f"{self.section_id} {self.heading}".strip()

    def to_dict(self) -> Dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict) -> "Section":
        return cls(
            doc_version=data["doc_version"],
            section_id=data["section_id"],
            heading=data["heading"],
            text=data["text"],
            order_index=int(data["order_index"]),
            parent_id=data.get("parent_id"),
        )


@dataclass(frozen=True)
class SectionizerRules:
    heading_patterns: Tuple[str, ...] = (DEFAULT_HEADING_PATTERN,)
    max_depth: int = 6
    strip_page_numbers: bool = True
    markdown: bool = False
    max_heading_tokens: int = MAX_HEADING_TOKENS
    _compiled: Tuple[re.Pattern, ...] = field(default=(), init=False, repr=False, compare=False)

    def __post_init__(self):
        patterns = self.heading_patterns
        if self.markdown and patterns == (DEFAULT_HEADING_PATTERN,):
            patterns = (MARKDOWN_HEADING_PATTERN,)
        object.__setattr__(self, "_compiled", tuple(re.compile(p) for p in patterns))

    @classmethod
    def from_dict(cls, data: Dict) -> "SectionizerRules":
        markdown = bool(data.get("markdown", False))
        patterns = data.get("heading_patterns")
        if not patterns:
            patterns = [MARKDOWN_HEADING_PATTERN if markdown else DEFAULT_HEADING_PATTERN]
        return cls(
            heading_patterns=tuple(patterns),
            max_depth=int(data.get("max_depth", 6)),
            strip_page_numbers=bool(data.get("strip_page_numbers", True)),
            markdown=markdown,
            max_heading_tokens=int(data.get("max_heading_tokens", MAX_HEADING_TOKENS)),
        )

    @classmethod
    def from_file(cls, path) -> "SectionizerRules":
        with open(path, "r", encoding="utf-8") as f:
            return cls.from_dict(json.load(f))


def _clean(line: str) -> str:
    return _WS_RE.sub(" ", line).strip()


def _is_heading_shaped(heading: str, rules: SectionizerRules, number_tokens: int = 1) -> bool:
    tokens = heading.split()
    if not tokens or not re.match(r"[^\W\d_]", tokens[0]):
        return False
    if len(tokens) + number_tokens > rules.max_heading_tokens:
        return False
    return not heading.endswith(_TRAILING_SENTENCE_PUNCT)


def heading_of(line: str, rules: SectionizerRules = SectionizerRules()) -> Optional[Tuple[str, str]]:
    """
    Returns (section_id, heading) when ``line`` is a numbered heading.

    Markdown headings carry no numbering; they return ("#"*level, heading)
    and ``sectionize`` assigns dotted ids from the heading hierarchy.
    """
    for pattern in rules._compiled:
        m = pattern.match(line)
        if not m:
            continue
        heading = _clean(m.group("heading"))
        groups = m.groupdict()
        if groups.get("hashes"):
            if heading:
                return groups["hashes"], heading
            continue
        section_id = groups.get("id")
        if not section_id:
            continue
        if len(section_id.split(".")) > rules.max_depth:
            continue
        if _is_heading_shaped(heading, rules):
            return section_id, heading
    return None


def _parent_of(section_id: str, known: Dict[str, int]) -> Optional[str]:
    if "." not in section_id:
        return None
    parent = section_id.rsplit(".", 1)[0]
    return parent if parent in known else None


def sectionize(text: str, rules: SectionizerRules = SectionizerRules(), version: str = "v1") -> List[Section]:
    """
    Splits ``text`` into sections in document order. Lines before the first
    heading go to a preamble section "0"; blank and page-number-only lines
    are dropped; every other line lands in exactly one section's text.
    """
    if not text or not text.strip():
        raise PreconditionViolation("sectionize needs non-empty text")

    entries: List[Dict] = []
    current: Optional[Dict] = None
    preamble: List[str] = []
    md_counters: List[int] = []

    for raw in text.splitlines():
        line = _clean(raw)
        if not line:
            continue
        if rules.strip_page_numbers and PAGE_NUMBER_PATTERN.match(line):
            continue

        parsed = heading_of(line, rules)
        if parsed is not None:
            section_id, heading = parsed
            if section_id.startswith("#"):
                level = min(len(section_id), rules.max_depth)
                md_counters = (md_counters + [0] * level)[:level]
                md_counters[-1] += 1
                # skipped levels stay 0 so a later heading at that level cannot reuse the id
                section_id = ".".join(str(c) for c in md_counters)
            if any(e["section_id"] == section_id for e in entries):
                logger.warning("duplicate heading id %s in %s kept as body text: %r", section_id, version, line)
                parsed = None
            else:
                current = {"section_id": section_id, "heading": heading, "lines": []}
                entries.append(current)
                continue

        if current is None:
            preamble.append(line)
        else:
            current["lines"].append(line)

    if not entries:
        raise NoSectionsFound(f"no line of the {version} document matches a heading rule")

    sections: List[Section] = []
    known: Dict[str, int] = {}
    if preamble:
        sections.append(Section(version, PREAMBLE_ID, "", "\n".join(preamble), 0, None))
        known[PREAMBLE_ID] = 0
    for entry in entries:
        order = len(sections)
        sid = entry["section_id"]
        sections.append(Section(
            doc_version=version,
            section_id=sid,
            heading=entry["heading"],
            text="\n".join(entry["lines"]),
            order_index=order,
            parent_id=_parent_of(sid, known),
        ))
        known[sid] = order

    logger.info("sectionized %s into %d sections", version, len(sections))
    return sections


def sectionize_file(path, rules: SectionizerRules = SectionizerRules(), version: str = "v1") -> List[Section]:
    with open(path, "r", encoding="utf-8") as f:
        return sectionize(f.read(), rules, version)


def _markdown_heading_line(section: Section) -> str:
    if section.section_id == PREAMBLE_ID and not section.heading:
        return ""
    hashes = "#" * len(section.section_id.split("."))
    return f"{hashes} {section.heading}"


def reconstruct(sections: Sequence[Section], rules: SectionizerRules = SectionizerRules()) -> str:
    """
    Heading lines and texts in order; equals the input modulo whitespace.
    Pass the rules the sections were cut with so markdown headings come back
    as ``#`` lines.
    """
    parts: List[str] = []
    for section in sorted(sections, key=lambda s: s.order_index):
        heading_line = _markdown_heading_line(section) if rules.markdown else section.heading_line
        if heading_line:
            parts.append(heading_line)
        if section.text:
            parts.append(section.text)
    return "\n".join(parts)
