"""Immutable expression trees over coordinates and parameters."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Iterator

UNARY_FUNCS = ("sqrt", "exp", "log", "sin", "cos")
BINARY_OPS = {"add": "+", "sub": "-", "mul": "*", "div": "/"}

# printing precedence; higher binds tighter
_PREC = {"add": 1, "sub": 1, "neg": 2, "mul": 3, "div": 3, "pow": 4}
_ATOM = 5


class ExprError(Exception):
    """Base class for expression errors."""


class DomainError(ExprError, ArithmeticError):
    """An expression was evaluated outside its domain of definition.

    ``subexpr`` is the offending subexpression, ``value`` the value of its
    argument that violated the domain (a float, or the worst entry of an
    array for vectorised evaluation).
    """

    def __init__(self, message: str, subexpr: "Expr | None" = None, value=None):
        if subexpr is not None:
            message = f"{message} in '{to_string(subexpr)}'"
        super().__init__(message)
        self.subexpr = subexpr
        self.value = value


@dataclass(frozen=True, eq=False)
class Expr:
    """A node of an expression tree.

    ``kind`` is one of ``const``, ``var``, ``param``, ``neg``, ``pow``,
    ``sqrt``, ``exp``, ``log``, ``sin``, ``cos``, ``add``, ``sub``, ``mul``,
    ``div``.  ``value`` holds the payload of leaves (a float for constants, a
    name for variables and parameters) and the reduced exponent ``(p, q)`` of
    ``pow`` nodes.
    """

    kind: str
    value: object = None
    args: tuple["Expr", ...] = ()

    def __post_init__(self):
        if self.kind == "pow":
            p, q = self.value
            fr = Fraction(p, q)
            object.__setattr__(self, "value", (fr.numerator, fr.denominator))
        object.__setattr__(self, "_hash", hash((self.kind, self.value, self.args)))

    def __hash__(self):
        return self._hash

    def __eq__(self, other):
        if self is other:
            return True
        if not isinstance(other, Expr) or self._hash != other._hash:
            return False
        return self.kind == other.kind and self.value == other.value and self.args == other.args

    # construction sugar; no simplification happens here
    def __add__(self, other):
        return Expr("add", None, (self, as_expr(other)))

    def __radd__(self, other):
        return Expr("add", None, (as_expr(other), self))

    def __sub__(self, other):
        return Expr("sub", None, (self, as_expr(other)))

    def __rsub__(self, other):
        return Expr("sub", None, (as_expr(other), self))

    def __mul__(self, other):
        return Expr("mul", None, (self, as_expr(other)))

    def __rmul__(self, other):
        return Expr("mul", None, (as_expr(other), self))

    def __truediv__(self, other):
        return Expr("div", None, (self, as_expr(other)))

    def __rtruediv__(self, other):
        return Expr("div", None, (as_expr(other), self))

    def __neg__(self):
        return Expr("neg", None, (self,))

    def __pow__(self, exponent):
        return power(self, exponent)

    def __str__(self):
        return to_string(self)

    @property
    def is_const(self) -> bool:
        return self.kind == "const"

    def walk(self) -> Iterator["Expr"]:
        yield self
        for a in self.args:
            yield from a.walk()

    def names(self, kind: str) -> set[str]:
        return {e.value for e in self.walk() if e.kind == kind}


def const(v) -> Expr:
    return Expr("const", float(v))


def var(name: str) -> Expr:
    return Expr("var", name)


def param(name: str) -> Expr:
    return Expr("param", name)


def power(base: Expr, exponent) -> Expr:
    fr = Fraction(exponent).limit_denominator(10**6) if isinstance(exponent, float) else Fraction(exponent)
    return Expr("pow", (fr.numerator, fr.denominator), (as_expr(base),))


def func(name: str, arg: Expr) -> Expr:
    if name not in UNARY_FUNCS:
        raise ValueError(f"unknown function {name!r}")
    return Expr(name, None, (as_expr(arg),))


def as_expr(obj) -> Expr:
    if isinstance(obj, Expr):
        return obj
    if isinstance(obj, (int, float, Fraction)):
        return const(obj)
    raise TypeError(f"cannot convert {type(obj).__name__} to Expr")


ZERO = const(0.0)
ONE = const(1.0)


def _prec(e: Expr) -> int:
    if e.kind == "const" and e.value < 0:
        return _PREC["neg"]
    return _PREC.get(e.kind, _ATOM)


def _fmt_const(v: float) -> str:
    if v == int(v) and abs(v) < 1e15:
        return f"{int(v)}.0" if v >= 0 else f"-{int(-v)}.0"
    return repr(v)


def to_string(e: Expr) -> str:
    """Serialise ``e`` in the grammar accepted by :func:`parse`.

    The output reparses to a structurally equal tree.
    """
    k = e.kind
    if k == "const":
        return _fmt_const(e.value)
    if k in ("var", "param"):
        return e.value
    if k in UNARY_FUNCS:
        return f"{k}({to_string(e.args[0])})"
    if k == "neg":
        (a,) = e.args
        s = to_string(a)
        # a bare literal after '-' would reparse as a negative constant
        return f"-{s}" if _prec(a) >= _PREC["mul"] and a.kind != "const" else f"-({s})"
    if k == "pow":
        (a,) = e.args
        s = to_string(a)
        if _prec(a) < _ATOM:
            s = f"({s})"
        p, q = e.value
        if q == 1 and p >= 0:
            return f"{s}^{p}"
        if q == 1:
            return f"{s}^({p})"
        return f"{s}^({p}/{q})"
    a, b = e.args
    op = BINARY_OPS[k]
    pa, pb = _prec(a), _prec(b)
    sa, sb = to_string(a), to_string(b)
    if k in ("add", "sub"):
        # a leading negation reads back the same way; only wrap sums on the right
        if pb <= _PREC["add"] or pb == _PREC["neg"]:
            sb = f"({sb})"
        return f"{sa} {op} {sb}"
    if pa < _PREC["mul"] or pa == _PREC["neg"]:
        sa = f"({sa})"
    if pb <= _PREC["mul"]:
        sb = f"({sb})"
    return f"{sa}{op}{sb}"
