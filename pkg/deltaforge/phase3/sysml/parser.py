"""
Recursive-descent parser for the SysML subset.

The parser records diagnostics and resynchronizes at the next member
boundary instead of stopping at the first problem, so one ``ParseError``
carries everything wrong with the text. An import written with ``.``
where ``::`` belongs gets its own diagnostic with the corrected line.
"""
from __future__ import annotations

import logging
from typing import List, Optional, Tuple

from deltaforge.errors import ParseError
from deltaforge.phase3.sysml import lexer
from deltaforge.phase3.sysml.elements import (
    Attribute,
    Connection,
    Diagnostic,
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
    Severity,
)
from deltaforge.phase3.sysml.expressions import COMPARATORS, Comparison, Expression, FeatureRef, Number, String
from deltaforge.phase3.sysml.lexer import EOF, NAME, NUMBER, STRING, SYMBOL, Token

logger = logging.getLogger(__name__)

DRIFT_CODE = "import_path_separator"
DRIFT_MESSAGE = "expected '::' in import path"


class _Resync(Exception):
    """Unwinds to the nearest member boundary after a diagnostic was recorded."""


class Parser:
    def __init__(self, source: str):
        self.tokens, self.diagnostics = lexer.tokenize(source)
        self.pos = 0

    # === token stream ===

    @property
    def current(self) -> Token:
        return self.tokens[self.pos]

    def peek(self, offset: int = 1) -> Token:
        return self.tokens[min(self.pos + offset, len(self.tokens) - 1)]

    def consume(self) -> Token:
        token = self.current
        if token.kind != EOF:
            self.pos += 1
        return token

    def accept(self, kind: str, text: Optional[str] = None) -> Optional[Token]:
        if self.current.is_(kind, text):
            return self.consume()
        return None

    def expect(self, kind: str, text: Optional[str] = None, what: Optional[str] = None) -> Token:
        token = self.accept(kind, text)
        if token is None:
            expected = what or (repr(text) if text else kind.lower())
            raise self.make_error(f"expected {expected}, found {self.current}")
        return token

    def expect_name(self, what: str = "a name") -> Token:
        if self.current.kind == NAME and self.current.text not in lexer.KEYWORDS:
            return self.consume()
        raise self.make_error(f"expected {what}, found {self.current}")

    def make_error(self, message: str, suggestion: Optional[str] = None, code: str = "syntax_error",
                   token: Optional[Token] = None) -> _Resync:
        token = token or self.current
        self.diagnostics.append(Diagnostic(Severity.ERROR, code, message, token.span, suggestion))
        return _Resync()

    def synchronize(self) -> None:
        """Skips past the next ``;`` or a balanced ``{...}`` block, stopping before a closing ``}``."""
        depth = 0
        while self.current.kind != EOF:
            token = self.current
            if token.is_(SYMBOL, "{"):
                depth += 1
            elif token.is_(SYMBOL, "}"):
                if depth == 0:
                    return
                depth -= 1
                if depth == 0:
                    self.consume()
                    return
            elif token.is_(SYMBOL, ";") and depth == 0:
                self.consume()
                return
            self.consume()

    # === grammar ===

    def parse_model(self) -> Model:
        packages: List[Package] = []
        while self.current.kind != EOF:
            start = self.pos
            try:
                packages.append(self.parse_package())
            except _Resync:
                self.synchronize()
                if self.pos == start:
                    self.consume()
        return Model(tuple(packages))

    def parse_package(self) -> Package:
        head = self.expect(NAME, "package", "'package'")
        name = self.expect_name("a package name").text
        members = self.parse_body()
        return Package(name, members, span=head.span)

    def parse_body(self) -> Tuple[Member, ...]:
        self.expect(SYMBOL, "{", "'{'")
        members: List[Member] = []
        while not self.current.is_(SYMBOL, "}"):
            if self.current.kind == EOF:
                raise self.make_error("expected '}' before end of input")
            start = self.pos
            try:
                members.append(self.parse_member())
            except _Resync:
                self.synchronize()
                if self.pos == start:
                    self.consume()
        self.consume()
        return tuple(members)

    def parse_member(self) -> Member:
        token = self.current
        if token.kind != NAME:
            raise self.make_error(f"expected a member declaration, found {token}")
        keyword = token.text
        if keyword in ("private", "public", "import"):
            return self.parse_import()
        if keyword == "part":
            return self.parse_part_def() if self.peek().is_(NAME, "def") else self.parse_part_usage()
        if keyword == "port":
            return self.parse_port_def() if self.peek().is_(NAME, "def") else self.parse_port_usage()
        if keyword == "attribute":
            return self.parse_attribute()
        if keyword == "connect":
            return self.parse_connection()
        if keyword == "require":
            return self.parse_requirement()
        if keyword == "satisfy":
            return self.parse_satisfy()
        raise self.make_error(f"expected a member declaration, found {token}")

    def parse_import(self) -> Import:
        head = self.current
        visibility = None
        if self.current.text in ("private", "public"):
            visibility = self.consume().text
        self.expect(NAME, "import", "'import'")
        path = [self.expect_name("an import path").text]
        wildcard = False
        drift: Optional[Token] = None
        while True:
            sep = self.accept(SYMBOL, "::")
            if sep is None and self.current.is_(SYMBOL, "."):
                sep = self.consume()
                drift = drift or sep
            if sep is None:
                break
            if self.accept(SYMBOL, "*"):
                wildcard = True
                break
            path.append(self.expect_name("a name or '*' after '::'").text)
        if drift is not None:
            fixed = f"{visibility + ' ' if visibility else ''}import {'::'.join(path)}{'::*' if wildcard else ''};"
            self.make_error(DRIFT_MESSAGE, suggestion=f"write '{fixed}'", code=DRIFT_CODE, token=drift)
        self.expect(SYMBOL, ";", "';'")
        return Import(tuple(path), wildcard, visibility, span=head.span)

    def parse_qpath(self, what: str = "a qualified name") -> Tuple[str, ...]:
        path = [self.expect_name(what).text]
        while self.accept(SYMBOL, "::"):
            path.append(self.expect_name("a name after '::'").text)
        if self.current.is_(SYMBOL, ".") and self.peek().kind == NAME:
            raise self.make_error("expected '::' in qualified name", suggestion="use '::' between namespace names")
        return tuple(path)

    def parse_fpath(self, what: str = "a feature path") -> Tuple[str, ...]:
        path = [self.expect_name(what).text]
        while True:
            if self.accept(SYMBOL, "."):
                path.append(self.expect_name("a feature name after '.'").text)
            elif self.current.is_(SYMBOL, "::"):
                raise self.make_error("expected '.' in feature path", suggestion="use '.' between feature names")
            else:
                return tuple(path)

    def parse_part_def(self) -> PartDef:
        head = self.consume()
        self.consume()
        name = self.expect_name("a part definition name").text
        return PartDef(name, self.parse_body(), span=head.span)

    def parse_part_usage(self) -> PartUsage:
        head = self.consume()
        name = self.expect_name("a part name").text
        self.expect(SYMBOL, ":", "':'")
        def_path = self.parse_qpath("a part definition")
        if self.accept(SYMBOL, ";"):
            return PartUsage(name, def_path, None, span=head.span)
        return PartUsage(name, def_path, self.parse_body(), span=head.span)

    def parse_port_def(self) -> PortDef:
        head = self.consume()
        self.consume()
        name = self.expect_name("a port definition name").text
        self.expect(SYMBOL, "{", "'{'")
        attributes: List[Attribute] = []
        while not self.accept(SYMBOL, "}"):
            if not self.current.is_(NAME, "attribute"):
                raise self.make_error(f"expected 'attribute' or '}}' in port definition, found {self.current}")
            attributes.append(self.parse_attribute())
        return PortDef(name, tuple(attributes), span=head.span)

    def parse_port_usage(self) -> PortUsage:
        head = self.consume()
        name = self.expect_name("a port name").text
        self.expect(SYMBOL, ":", "':'")
        def_path = self.parse_qpath("a port definition")
        self.expect(SYMBOL, ";", "';'")
        return PortUsage(name, def_path, span=head.span)

    def parse_attribute(self) -> Attribute:
        head = self.consume()
        name = self.expect_name("an attribute name").text
        self.expect(SYMBOL, ":", "':'")
        type_name = self.expect_name("an attribute type").text
        self.expect(SYMBOL, ";", "';'")
        return Attribute(name, type_name, span=head.span)

    def parse_connection(self) -> Connection:
        head = self.consume()
        source = self.parse_fpath("a source feature path")
        self.expect(NAME, "to", "'to'")
        target = self.parse_fpath("a target feature path")
        self.expect(SYMBOL, ";", "';'")
        return Connection(source, target, span=head.span)

    def parse_requirement(self) -> RequirementDef:
        head = self.consume()
        self.expect(NAME, "def", "'def'")
        name = self.expect_name("a requirement name").text
        self.expect(SYMBOL, "{", "'{'")
        doc = None
        constraints: List[Expression] = []
        if self.accept(NAME, "doc"):
            doc = lexer.unescape(self.expect(STRING, what="a doc string").text)
            self.expect(SYMBOL, ";", "';'")
        while self.accept(NAME, "constraint"):
            constraints.append(self.parse_expression())
            self.expect(SYMBOL, ";", "';'")
        self.expect(SYMBOL, "}", "'constraint' or '}'")
        return RequirementDef(name, doc, tuple(constraints), span=head.span)

    def parse_satisfy(self) -> Satisfy:
        head = self.consume()
        requirement = self.parse_qpath("a requirement path")
        self.expect(NAME, "by", "'by'")
        feature = self.parse_fpath("a feature path")
        self.expect(SYMBOL, ";", "';'")
        return Satisfy(requirement, feature, span=head.span)

    def parse_expression(self) -> Expression:
        terms = [self.parse_comparison()]
        while self.accept(NAME, "and"):
            terms.append(self.parse_comparison())
        return Expression(tuple(terms))

    def parse_comparison(self) -> Comparison:
        operands = [self.parse_operand()]
        ops: List[str] = []
        while self.current.kind == SYMBOL and self.current.text in COMPARATORS:
            ops.append(self.consume().text)
            operands.append(self.parse_operand())
        if not ops:
            raise self.make_error(f"expected a comparison operator, found {self.current}")
        return Comparison(tuple(operands), tuple(ops))

    def parse_operand(self):
        token = self.current
        if token.kind == NUMBER:
            return Number(self.consume().text)
        if token.kind == STRING:
            return String(lexer.unescape(self.consume().text))
        if token.kind == NAME and token.text not in lexer.KEYWORDS:
            return FeatureRef(self.parse_fpath())
        raise self.make_error(f"expected a number, string or feature path, found {token}")

    def finish(self, what: str) -> None:
        if self.current.kind != EOF:
            self.make_error(f"unexpected {self.current} after {what}")
        if any(d.is_error for d in self.diagnostics):
            raise ParseError(self.diagnostics)


def parse(source: str) -> Model:
    """Model of ``source``; raises ParseError with every diagnostic found."""
    parser = Parser(source)
    model = parser.parse_model()
    parser.finish("the last package")
    return model


def parse_member(source: str) -> Member:
    """One member declaration, e.g. ``port def WeatherIn { attribute v : Real; }``."""
    parser = Parser(source)
    try:
        member = parser.parse_member()
    except _Resync:
        raise ParseError(parser.diagnostics) from None
    parser.finish("the member")
    return member


def parse_expression(source: str) -> Expression:
    parser = Parser(source)
    try:
        expr = parser.parse_expression()
    except _Resync:
        raise ParseError(parser.diagnostics) from None
    parser.finish("the expression")
    return expr
