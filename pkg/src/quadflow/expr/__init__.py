"""Expression language: parse, print, evaluate, differentiate, simplify."""

from .calculus import differentiate, simplify
from .evaluate import compile_exprs, evaluate
from .parser import ExprSyntaxError, UnknownIdentifierError, parse
from .tree import (
    ONE,
    ZERO,
    DomainError,
    Expr,
    ExprError,
    as_expr,
    const,
    func,
    param,
    power,
    to_string,
    var,
)

__all__ = [
    "Expr",
    "ExprError",
    "ExprSyntaxError",
    "UnknownIdentifierError",
    "DomainError",
    "parse",
    "to_string",
    "evaluate",
    "compile_exprs",
    "differentiate",
    "simplify",
    "const",
    "var",
    "param",
    "power",
    "func",
    "as_expr",
    "ZERO",
    "ONE",
]
