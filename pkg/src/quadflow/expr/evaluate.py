"""Evaluation of expression trees.

Expressions are compiled to Python source once and cached.  Two flavours are
generated: a scalar one built on :mod:`math` (used inside ODE right-hand sides
where per-call overhead dominates) and a vectorised one built on numpy that
evaluates over arrays of points of shape ``(..., n)``.

Every partial operation (division, rational powers, ``sqrt``, ``log``)
checks its argument and raises :class:`DomainError` naming the offending
subexpression instead of returning NaN.
"""

from __future__ import annotations

import math
from functools import lru_cache
from typing import Callable, Mapping, Sequence

import numpy as np

from .tree import Expr, DomainError


class _Checks:
    """Domain-checked primitives shared by the generated code."""

    def __init__(self, nodes: list[Expr]):
        self.nodes = nodes

    # scalar flavour
    def div(self, a, b, i):
        if b == 0.0:
            raise DomainError("division by zero", self.nodes[i], b)
        return a / b

    def rpow(self, a, e, i):
        if not a > 0.0:
            raise DomainError("rational power of a non-positive base", self.nodes[i], a)
        return a**e

    def ipow(self, a, e, i):
        if e < 0 and a == 0.0:
            raise DomainError("negative power of zero", self.nodes[i], a)
        return a**e

    def sqrt(self, a, i):
        if not a >= 0.0:
            raise DomainError("sqrt of a negative number", self.nodes[i], a)
        return math.sqrt(a)

    def log(self, a, i):
        if not a > 0.0:
            raise DomainError("log of a non-positive number", self.nodes[i], a)
        return math.log(a)

    def exp(self, a, i):
        try:
            return math.exp(a)
        except OverflowError:
            raise DomainError("exp overflow", self.nodes[i], a) from None

    # vectorised flavour
    def vdiv(self, a, b, i):
        b = np.asarray(b, dtype=float)
        if np.any(b == 0.0):
            raise DomainError("division by zero", self.nodes[i], 0.0)
        return a / b

    def vrpow(self, a, e, i):
        a = np.asarray(a, dtype=float)
        if not np.all(a > 0.0):
            raise DomainError("rational power of a non-positive base", self.nodes[i], float(np.min(a)))
        return a**e

    def vipow(self, a, e, i):
        a = np.asarray(a, dtype=float)
        if e < 0 and np.any(a == 0.0):
            raise DomainError("negative power of zero", self.nodes[i], 0.0)
        return a**e

    def vsqrt(self, a, i):
        a = np.asarray(a, dtype=float)
        if not np.all(a >= 0.0):
            raise DomainError("sqrt of a negative number", self.nodes[i], float(np.min(a)))
        return np.sqrt(a)

    def vlog(self, a, i):
        a = np.asarray(a, dtype=float)
        if not np.all(a > 0.0):
            raise DomainError("log of a non-positive number", self.nodes[i], float(np.min(a)))
        return np.log(a)

    def vexp(self, a, i):
        with np.errstate(over="ignore"):
            r = np.exp(a)
        if not np.all(np.isfinite(r)):
            raise DomainError("exp overflow", self.nodes[i], float(np.max(a)))
        return r


def _codegen(e: Expr, coords: dict[str, int], params: Mapping[str, float], vec: bool, nodes: list[Expr]) -> str:
    k = e.kind
    pre = "C.v" if vec else "C."

    def sub(a):
        return _codegen(a, coords, params, vec, nodes)

    def tag():
        nodes.append(e)
        return len(nodes) - 1

    if k == "const":
        return repr(e.value)
    if k == "var":
        return f"x{coords[e.value]}"
    if k == "param":
        try:
            return repr(float(params[e.value]))
        except KeyError:
            raise KeyError(f"parameter {e.value!r} is not bound") from None
    if k == "neg":
        return f"(-{sub(e.args[0])})"
    if k == "add":
        return f"({sub(e.args[0])} + {sub(e.args[1])})"
    if k == "sub":
        return f"({sub(e.args[0])} - {sub(e.args[1])})"
    if k == "mul":
        return f"({sub(e.args[0])} * {sub(e.args[1])})"
    if k == "div":
        return f"{pre}div({sub(e.args[0])}, {sub(e.args[1])}, {tag()})"
    if k == "pow":
        p, q = e.value
        if q == 1:
            if p == 1:
                return sub(e.args[0])
            if p == 2:
                s = sub(e.args[0])
                return f"({s} * {s})" if e.args[0].kind in ("var", "const", "param") else f"{pre}ipow({s}, 2, {tag()})"
            return f"{pre}ipow({sub(e.args[0])}, {p}, {tag()})"
        return f"{pre}rpow({sub(e.args[0])}, {p / q!r}, {tag()})"
    if k in ("sqrt", "log", "exp"):
        return f"{pre}{k}({sub(e.args[0])}, {tag()})"
    if k in ("sin", "cos"):
        mod = "np" if vec else "math"
        return f"{mod}.{k}({sub(e.args[0])})"
    raise ValueError(f"unknown node kind {k!r}")


def compile_exprs(
    exprs: Sequence[Expr],
    coords: Sequence[str],
    params: Mapping[str, float] | None = None,
    vectorized: bool = False,
) -> Callable:
    """Compile a tuple of expressions into one callable.

    The scalar flavour maps a length-``n`` sequence to a tuple of floats.
    The vectorised flavour maps an array of shape ``(..., n)`` to an array of
    shape ``(len(exprs), ...)``.
    """
    key = (tuple(exprs), tuple(coords), tuple(sorted((params or {}).items())), vectorized)
    return _compile_cached(key)


@lru_cache(maxsize=4096)
def _compile_cached(key):
    exprs, coords, params, vec = key
    params = dict(params)
    index = {c: i for i, c in enumerate(coords)}
    nodes: list[Expr] = []
    bodies = [_codegen(e, index, params, vec, nodes) for e in exprs]
    if vec:
        unpack = "".join(f"    x{i} = X[..., {i}]\n" for i in range(len(coords)))
        ret = (
            "    _out = (" + "".join(f"{b}, " for b in bodies) + ")\n"
            "    return np.stack([np.broadcast_to(np.asarray(o, dtype=float), X.shape[:-1]) for o in _out])\n"
            if bodies
            else "    return np.zeros((0,) + X.shape[:-1])\n"
        )
        src = "def _f(X):\n    X = np.asarray(X, dtype=float)\n" + unpack + ret
    else:
        unpack = "".join(f"    x{i} = float(X[{i}])\n" for i in range(len(coords)))
        src = "def _f(X):\n" + unpack + "    return (" + "".join(f"{b}, " for b in bodies) + ")\n"
    ns = {"C": _Checks(nodes), "np": np, "math": math}
    exec(compile(src, "<quadflow-expr>", "exec"), ns)
    return ns["_f"]


def evaluate(e: Expr, point, params: Mapping[str, float] | None = None, coords: Sequence[str] | None = None):
    """Evaluate ``e`` at ``point``.

    ``point`` is either a mapping from coordinate name to value or a sequence
    aligned with ``coords``.  Arrays of points (shape ``(..., n)``) evaluate
    elementwise and return an array of shape ``(...)``.
    """
    if isinstance(point, Mapping):
        coords = tuple(point)
        point = [point[c] for c in coords]
    if coords is None:
        coords = tuple(sorted(e.names("var")))
    arr = np.asarray(point, dtype=float)
    if arr.ndim <= 1:
        f = compile_exprs((e,), tuple(coords), params, vectorized=False)
        try:
            (v,) = f(arr)
        except ZeroDivisionError as exc:
            raise DomainError(str(exc), e) from None
        if not math.isfinite(v):
            raise DomainError("non-finite value", e, v)
        return v
    f = compile_exprs((e,), tuple(coords), params, vectorized=True)
    with np.errstate(invalid="ignore", over="ignore", divide="ignore"):
        v = f(arr)[0]
    if not np.all(np.isfinite(v)):
        raise DomainError("non-finite value", e)
    return v
