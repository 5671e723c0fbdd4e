"""Recursive-descent parser for the expression grammar.

::

    expr   := term (('+' | '-') term)*
    term   := '-' term | factor (('*' | '/') factor)*
    factor := base ('^' exponent)?
    exponent := int | '(' '-'? int ('/' int)? ')'
    base   := number | ident | '(' expr ')' | func '(' expr ')' | '-' factor

A leading minus applies to the whole product that follows it, so
``-k2/y^(2/3)`` is ``neg(div(k2, pow(y, 2/3)))``.  A minus sign directly in
front of a numeric literal produces a negative constant.
"""

from __future__ import annotations

import re
from typing import Iterable

from .tree import UNARY_FUNCS, Expr, ExprError, const, param, var

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<ident>[A-Za-z_][A-Za-z0-9_]*)"
    r"|(?P<op>[-+*/^()]))"
)


class ExprSyntaxError(ExprError, SyntaxError):
    """Malformed expression text; ``offset`` is the 0-based byte offset."""

    def __init__(self, message: str, text: str, offset: int):
        super().__init__(f"{message} at offset {offset}: {text!r}")
        self.text = text
        self.offset = offset


class UnknownIdentifierError(ExprError, NameError):
    def __init__(self, name: str, offset: int):
        super().__init__(f"unknown identifier {name!r} at offset {offset}")
        self.name = name
        self.offset = offset


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    n = len(text)
    while pos < n:
        if text[pos].isspace():
            pos += 1
            continue
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            raise ExprSyntaxError(f"unexpected character {text[pos]!r}", text, pos)
        kind = m.lastgroup
        start = m.start(kind)
        tokens.append((kind, m.group(kind), start))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str, coords: Iterable[str], params: Iterable[str]):
        self.text = text
        self.coords = set(coords)
        self.params = set(params)
        clash = self.coords & self.params
        if clash:
            raise ValueError(f"names used both as coordinate and parameter: {sorted(clash)}")
        self.tokens = _tokenize(text)
        self.i = 0

    @property
    def tok(self):
        return self.tokens[self.i]

    def error(self, message: str):
        raise ExprSyntaxError(message, self.text, self.tok[2])

    def accept(self, op: str) -> bool:
        if self.tok[0] == "op" and self.tok[1] == op:
            self.i += 1
            return True
        return False

    def expect(self, op: str):
        if not self.accept(op):
            found = self.tok[1] or "end of input"
            self.error(f"expected {op!r}, found {found!r}")

    def parse(self) -> Expr:
        e = self.expr()
        if self.tok[0] != "end":
            self.error(f"unexpected token {self.tok[1]!r}")
        return e

    def expr(self) -> Expr:
        e = self.term()
        while self.tok[0] == "op" and self.tok[1] in "+-":
            op = self.tok[1]
            self.i += 1
            rhs = self.term()
            e = Expr("add" if op == "+" else "sub", None, (e, rhs))
        return e

    def term(self) -> Expr:
        if self.accept("-"):
            literal = self.tok[0] == "num"
            inner = self.term()
            return _negate(inner, literal)
        e = self.factor()
        while self.tok[0] == "op" and self.tok[1] in "*/":
            op = self.tok[1]
            self.i += 1
            rhs = self.factor()
            e = Expr("mul" if op == "*" else "div", None, (e, rhs))
        return e

    def factor(self) -> Expr:
        base = self.base()
        if self.accept("^"):
            p, q = self.exponent()
            if q == 0:
                self.error("zero denominator in exponent")
            return Expr("pow", (p, q), (base,))
        return base

    def exponent(self) -> tuple[int, int]:
        if self.tok[0] == "num":
            return (self.integer(), 1)
        self.expect("(")
        sign = -1 if self.accept("-") else 1
        p = sign * self.integer()
        q = 1
        if self.accept("/"):
            q = self.integer()
        self.expect(")")
        return (p, q)

    def integer(self) -> int:
        kind, text, _ = self.tok
        if kind != "num" or not text.isdigit():
            self.error("expected an integer exponent")
        self.i += 1
        return int(text)

    def base(self) -> Expr:
        kind, text, offset = self.tok
        if kind == "num":
            self.i += 1
            return const(float(text))
        if kind == "ident":
            self.i += 1
            if text in UNARY_FUNCS and self.tok[0] == "op" and self.tok[1] == "(":
                self.i += 1
                arg = self.expr()
                self.expect(")")
                return Expr(text, None, (arg,))
            if text in self.coords:
                return var(text)
            if text in self.params:
                return param(text)
            raise UnknownIdentifierError(text, offset)
        if self.accept("("):
            e = self.expr()
            self.expect(")")
            return e
        if self.accept("-"):
            literal = self.tok[0] == "num"
            return _negate(self.factor(), literal)
        if kind == "end":
            self.error("unexpected end of input")
        self.error(f"unexpected token {text!r}")


def _negate(e: Expr, literal: bool) -> Expr:
    if literal and e.kind == "const":
        return const(-e.value)
    return Expr("neg", None, (e,))


def parse(text: str, coords: Iterable[str] = (), params: Iterable[str] = ()) -> Expr:
    """Parse ``text`` into an :class:`Expr`.

    Identifiers must be listed in ``coords`` (become ``var`` nodes) or in
    ``params``; function names are ``sqrt exp log sin cos``.
    """
    return _Parser(text, coords, params).parse()
