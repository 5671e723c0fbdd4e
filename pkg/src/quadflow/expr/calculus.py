"""Symbolic differentiation and best-effort simplification.

Simplification is judged by value, never by canonical form: the result
evaluates to the same number as the input at every admissible point.  It does
constant folding, drops 0/1 identities, collects like terms whose non-constant
part is an identical subtree, and merges powers of identical bases.
"""

from __future__ import annotations

import math
from fractions import Fraction
from functools import lru_cache

from .tree import ONE, ZERO, Expr, const, to_string


# smart constructors; fold only the cheap cases


def add(a: Expr, b: Expr) -> Expr:
    if a.is_const and b.is_const:
        return const(a.value + b.value)
    if a.is_const and a.value == 0.0:
        return b
    if b.is_const and b.value == 0.0:
        return a
    return Expr("add", None, (a, b))


def sub(a: Expr, b: Expr) -> Expr:
    if a.is_const and b.is_const:
        return const(a.value - b.value)
    if b.is_const and b.value == 0.0:
        return a
    if a.is_const and a.value == 0.0:
        return neg(b)
    return Expr("sub", None, (a, b))


def neg(a: Expr) -> Expr:
    if a.is_const:
        return const(-a.value)
    if a.kind == "neg":
        return a.args[0]
    return Expr("neg", None, (a,))


def mul(a: Expr, b: Expr) -> Expr:
    if a.is_const and b.is_const:
        return const(a.value * b.value)
    for x, y in ((a, b), (b, a)):
        if x.is_const:
            if x.value == 0.0:
                return ZERO
            if x.value == 1.0:
                return y
            if x.value == -1.0:
                return neg(y)
    return Expr("mul", None, (a, b))


def div(a: Expr, b: Expr) -> Expr:
    if b.is_const and b.value != 0.0:
        if a.is_const:
            return const(a.value / b.value)
        if b.value == 1.0:
            return a
    if a.is_const and a.value == 0.0:
        return ZERO
    return Expr("div", None, (a, b))


def pow_(a: Expr, p: int, q: int = 1) -> Expr:
    fr = Fraction(p, q)
    if fr == 0:
        return ONE
    if fr == 1:
        return a
    if a.is_const and fr.denominator == 1 and (a.value != 0.0 or fr > 0):
        return const(a.value ** fr.numerator)
    if a.kind == "pow" and fr.denominator == 1 and a.value[1] != 1:
        # (b^(r/s))^n = b^(rn/s); base positivity is already required
        r, s = a.value
        return pow_(a.args[0], r * fr.numerator, s)
    return Expr("pow", (fr.numerator, fr.denominator), (a,))


def differentiate(e: Expr, v: str) -> Expr:
    """Exact partial derivative of ``e`` with respect to coordinate ``v``."""
    return _diff(e, v)


@lru_cache(maxsize=65536)
def _diff(e: Expr, v: str) -> Expr:
    k = e.kind
    if k in ("const", "param"):
        return ZERO
    if k == "var":
        return ONE if e.value == v else ZERO
    if v not in _free_vars(e):
        return ZERO
    if k == "neg":
        return neg(_diff(e.args[0], v))
    if k in ("add", "sub"):
        da, db = _diff(e.args[0], v), _diff(e.args[1], v)
        return add(da, db) if k == "add" else sub(da, db)
    if k == "mul":
        a, b = e.args
        return add(mul(_diff(a, v), b), mul(a, _diff(b, v)))
    if k == "div":
        a, b = e.args
        da, db = _diff(a, v), _diff(b, v)
        if db.is_const and db.value == 0.0:
            return div(da, b)
        return div(sub(mul(da, b), mul(a, db)), pow_(b, 2))
    (a,) = e.args
    da = _diff(a, v)
    if k == "pow":
        p, q = e.value
        outer = mul(const(p / q), pow_(a, p - q, q))
    elif k == "sqrt":
        outer = div(const(0.5), e)
    elif k == "exp":
        outer = e
    elif k == "log":
        outer = div(ONE, a)
    elif k == "sin":
        outer = Expr("cos", None, (a,))
    elif k == "cos":
        outer = neg(Expr("sin", None, (a,)))
    else:
        raise ValueError(f"unknown node kind {k!r}")
    return mul(outer, da)


@lru_cache(maxsize=65536)
def _free_vars(e: Expr) -> frozenset:
    if e.kind == "var":
        return frozenset((e.value,))
    out = frozenset()
    for a in e.args:
        out |= _free_vars(a)
    return out


# simplification ---------------------------------------------------------------
#
# A sum is held as {monomial_key: (coefficient, monomial)}, a monomial as a
# product of factors {factor_key: (base, exponent)}.  Keys are the printed form
# of the simplified subtree, so identical subtrees collect.


def simplify(e: Expr) -> Expr:
    """Value-preserving simplification of ``e``."""
    return _simplify(e)


@lru_cache(maxsize=65536)
def _simplify(e: Expr) -> Expr:
    k = e.kind
    if k in ("const", "var", "param"):
        return e
    if k in ("add", "sub", "neg", "mul", "div", "pow"):
        return _rebuild_sum(_as_sum(e))
    (a,) = e.args
    a = _simplify(a)
    if a.is_const:
        folded = _fold_unary(k, a.value)
        if folded is not None:
            return const(folded)
    return Expr(k, None, (a,))


def _fold_unary(k: str, x: float):
    try:
        if k == "sqrt" and x >= 0:
            return math.sqrt(x)
        if k == "exp":
            return math.exp(x)
        if k == "log" and x > 0:
            return math.log(x)
        if k == "sin":
            return math.sin(x)
        if k == "cos":
            return math.cos(x)
    except OverflowError:
        return None
    return None


def _as_sum(e: Expr) -> dict:
    """Linear combination of monomials: key -> (coef, factors)."""
    k = e.kind
    if k == "add" or k == "sub":
        left = _as_sum(e.args[0])
        right = _as_sum(e.args[1])
        sign = 1.0 if k == "add" else -1.0
        out = dict(left)
        for key, (c, f) in right.items():
            if key in out:
                out[key] = (out[key][0] + sign * c, f)
            else:
                out[key] = (sign * c, f)
        return out
    if k == "neg":
        return {key: (-c, f) for key, (c, f) in _as_sum(e.args[0]).items()}
    c, factors = _as_product(e)
    if c == 0.0:
        return {}
    return {_mono_key(factors): (c, factors)}


def _as_product(e: Expr) -> tuple[float, dict]:
    """Coefficient and factors {key: (base, Fraction exponent)} of a product."""
    k = e.kind
    if k == "const":
        return e.value, {}
    if k == "neg":
        c, f = _as_product(e.args[0])
        return -c, f
    if k == "mul" or k == "div":
        ca, fa = _as_product(e.args[0])
        cb, fb = _as_product(e.args[1])
        if k == "div":
            if cb == 0.0:
                e = Expr("div", None, (_rebuild_sum(_as_sum(e.args[0])), ZERO))
                return 1.0, {_key(e): (e, Fraction(1))}
            cb = 1.0 / cb
            fb = {key: (b, -x) for key, (b, x) in fb.items()}
        return ca * cb, _merge(fa, fb)
    if k == "pow":
        p, q = e.value
        fr = Fraction(p, q)
        base = e.args[0]
        if fr.denominator == 1:
            c, f = _as_product(base)
            if c != 0.0 or fr > 0:
                # (c * prod b_i^x_i)^n distributes exactly for integer n
                return c ** fr.numerator, {key: (b, x * fr) for key, (b, x) in f.items()}
            e = Expr("pow", e.value, (ZERO,))
            return 1.0, {_key(e): (e, Fraction(1))}
        sb = _simplify(base)
        if sb.is_const:
            if sb.value > 0:
                return sb.value ** (p / q), {}
        if sb.kind == "pow":
            # (b^r)^s = b^(rs) is valid for positive b, which the outer
            # rational power already requires
            inner = Fraction(*sb.value)
            return 1.0, {_key(sb.args[0]): (sb.args[0], inner * fr)}
        return 1.0, {_key(sb): (sb, fr)}
    s = _simplify(e)
    if s.is_const:
        return s.value, {}
    if s.kind in ("add", "sub", "neg", "mul", "div", "pow"):
        terms = _as_sum(s) if s.kind in ("add", "sub") else None
        if terms is not None and len(terms) == 1:
            ((c, f),) = terms.values()
            return c, dict(f)
    return 1.0, {_key(s): (s, Fraction(1))}


def _merge(fa: dict, fb: dict) -> dict:
    out = dict(fa)
    for key, (b, x) in fb.items():
        if key in out:
            x = out[key][1] + x
            if x == 0:
                del out[key]
            else:
                out[key] = (b, x)
        else:
            out[key] = (b, x)
    return out


def _singular(e: Expr) -> bool:
    """True for a literal division by zero or negative power of zero."""
    if e.kind == "div":
        return e.args[1].is_const and e.args[1].value == 0.0
    return e.args[0].is_const and e.args[0].value == 0.0 and e.value[0] < 0


def _key(e: Expr) -> str:
    return to_string(e)


def _mono_key(factors: dict) -> str:
    return "*".join(f"{key}^{x}" for key, (_, x) in sorted(factors.items()))


def _factor_expr(b: Expr, x: Fraction) -> Expr:
    return pow_(b, x.numerator, x.denominator)


def _rebuild_product(c: float, factors: dict) -> Expr:
    # sum factors that were opaque get simplified recursively
    num = [(key, b, x) for key, (b, x) in sorted(factors.items()) if x > 0]
    den = [(key, b, -x) for key, (b, x) in sorted(factors.items()) if x < 0]
    top = None
    for _, b, x in num:
        f = _factor_expr(_inner(b), x)
        top = f if top is None else mul(top, f)
    bottom = None
    for _, b, x in den:
        f = _factor_expr(_inner(b), x)
        bottom = f if bottom is None else mul(bottom, f)
    sign = 1.0
    if c < 0:
        sign, c = -1.0, -c
    if top is None:
        top = const(c)
    elif c != 1.0:
        top = mul(const(c), top)
    out = top if bottom is None else div(top, bottom)
    return neg(out) if sign < 0 else out


def _inner(b: Expr) -> Expr:
    if b.kind in ("var", "param", "const"):
        return b
    if b.kind in ("div", "pow") and _singular(b):
        return b
    return _simplify(b) if b.kind not in ("add", "sub") else _rebuild_sum(_as_sum(b))


def _rebuild_sum(terms: dict) -> Expr:
    items = [(key, c, f) for key, (c, f) in sorted(terms.items()) if c != 0.0]
    if not items:
        return ZERO
    # constants last so that printed sums read naturally
    items.sort(key=lambda t: (t[0] == "", t[0]))
    out = None
    for _, c, f in items:
        term = _rebuild_product(c, f)
        if out is None:
            out = term
        elif term.kind == "neg":
            out = sub(out, term.args[0])
        elif term.is_const and term.value < 0:
            out = sub(out, const(-term.value))
        else:
            out = add(out, term)
    return out
