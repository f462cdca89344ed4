"""Regex tokenizer for the SysML subset."""
from __future__ import annotations

import re
from dataclasses import dataclass
from typing import List, Tuple

from deltaforge.phase3.sysml.elements import Diagnostic, Severity, Span

NAME = "NAME"
NUMBER = "NUMBER"
STRING = "STRING"
SYMBOL = "SYMBOL"
EOF = "EOF"

KEYWORDS = frozenset({
    "package", "import", "private", "public", "part", "def", "port", "attribute",
    "connect", "to", "require", "doc", "constraint", "satisfy", "by", "and",
})

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r\n]+)
  | (?P<comment>//[^\n]*)
  | (?P<STRING>"(?:[^"\\\n]|\\.)*")
  | (?P<NUMBER>-?\d+(?:\.\d+)?)
  | (?P<NAME>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<SYMBOL>::|<=|>=|==|[{};:.*<>])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class Token:
    kind: str
    text: str
    line: int
    col: int

    @property
    def span(self) -> Span:
        return Span(self.line, self.col)

    def is_(self, kind: str, text: str = None) -> bool:
        return self.kind == kind and (text is None or self.text == text)

    def __str__(self) -> str:
        return "end of input" if self.kind == EOF else f"'{self.text}'"


def unescape(literal: str) -> str:
    return re.sub(r"\\(.)", lambda m: "\n" if m.group(1) == "n" else m.group(1), literal[1:-1])


def tokenize(source: str) -> Tuple[List[Token], List[Diagnostic]]:
    """Tokens ending in EOF; unknown characters become error diagnostics and are skipped."""
    tokens: List[Token] = []
    diagnostics: List[Diagnostic] = []
    line, line_start, pos = 1, 0, 0
    while pos < len(source):
        m = _TOKEN_RE.match(source, pos)
        if m is None:
            diagnostics.append(Diagnostic(
                Severity.ERROR, "unexpected_character",
                f"unexpected character {source[pos]!r}", Span(line, pos - line_start + 1),
            ))
            pos += 1
            continue
        kind = m.lastgroup
        text = m.group()
        if kind not in ("ws", "comment"):
            tokens.append(Token(kind, text, line, pos - line_start + 1))
        newlines = text.count("\n")
        if newlines:
            line += newlines
            line_start = pos + text.rfind("\n") + 1
        pos = m.end()
    tokens.append(Token(EOF, "", line, pos - line_start + 1))
    return tokens, diagnostics
