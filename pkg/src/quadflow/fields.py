"""Vector fields, frames, Lie brackets and pointwise frame linear algebra."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .expr import Expr, compile_exprs, differentiate, simplify, to_string
from .expr.calculus import add, mul, sub
from .sampling import ADMISSIBLE_MARGIN, sample_box

ZERO_FIELD_TOL = 1e-9
SINGULAR_COND = 1e12
REGULARITY_RATIO = 1e-8


class DimensionMismatchError(ValueError):
    pass


class SingularFrameError(np.linalg.LinAlgError):
    """The frame matrix is (numerically) singular at a requested point."""

    def __init__(self, message: str, point=None, cond: float | None = None):
        super().__init__(message)
        self.point = None if point is None else np.asarray(point, dtype=float)
        self.cond = cond


@dataclass(frozen=True)
class Domain:
    """Coordinates, parameter bindings, positivity constraints and a sampling box."""

    coords: tuple[str, ...]
    params: Mapping[str, float] = field(default_factory=dict)
    constraints: tuple[Expr, ...] = ()
    box: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "coords", tuple(self.coords))
        object.__setattr__(self, "params", dict(self.params))
        object.__setattr__(self, "constraints", tuple(self.constraints))
        if self.box is not None:
            box = np.array(self.box, dtype=float)
            if box.shape != (len(self.coords), 2) or np.any(box[:, 0] >= box[:, 1]):
                raise ValueError("box must hold one increasing interval per coordinate")
            object.__setattr__(self, "box", box)

    @property
    def n(self) -> int:
        return len(self.coords)

    def constraint_values(self, points) -> np.ndarray:
        """Constraint expressions at ``points``; shape ``(len(constraints), ...)``."""
        f = compile_exprs(self.constraints, self.coords, self.params, vectorized=True)
        with np.errstate(all="ignore"):
            return f(np.asarray(points, dtype=float))

    def admissible(self, points, margin: float = ADMISSIBLE_MARGIN) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        ok = np.all(np.isfinite(pts), axis=-1)
        if self.box is not None:
            ok &= np.all((pts >= self.box[:, 0]) & (pts <= self.box[:, 1]), axis=-1)
        if self.constraints:
            try:
                vals = self.constraint_values(pts)
            except ArithmeticError:
                vals = np.stack([self._pointwise_constraint(pts, c) for c in self.constraints])
            ok &= np.all(np.nan_to_num(vals, nan=-np.inf) > margin, axis=0)
        return ok

    def _pointwise_constraint(self, pts, c):
        f = compile_exprs((c,), self.coords, self.params, vectorized=False)
        flat = pts.reshape(-1, self.n)
        out = np.empty(len(flat))
        for i, p in enumerate(flat):
            try:
                out[i] = f(p)[0]
            except ArithmeticError:
                out[i] = -np.inf
        return out.reshape(pts.shape[:-1])

    def sample(self, count: int, seed: int | None = None, shrink: float = 0.0) -> np.ndarray:
        if self.box is None:
            raise ValueError("domain has no sampling box")
        return sample_box(self.box, count, seed=seed, admissible=self.admissible, shrink=shrink)


@dataclass(frozen=True)
class VectorField:
    """``sum_i coeffs[i] * d/dx^i`` over the coordinates of ``domain``."""

    coeffs: tuple[Expr, ...]
    domain: Domain
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "coeffs", tuple(self.coeffs))
        if len(self.coeffs) != self.domain.n:
            raise DimensionMismatchError(f"field {self.name!r} has {len(self.coeffs)} components, expected {self.domain.n}")

    @property
    def n(self) -> int:
        return self.domain.n

    def __call__(self, points) -> np.ndarray:
        """Components at ``points``; shape ``(..., n)``."""
        f = compile_exprs(self.coeffs, self.domain.coords, self.domain.params, vectorized=True)
        return np.moveaxis(f(np.asarray(points, dtype=float)), 0, -1)

    def scalar(self):
        """Fast scalar evaluator ``x -> tuple`` for ODE right-hand sides."""
        return compile_exprs(self.coeffs, self.domain.coords, self.domain.params, vectorized=False)

    def scaled(self, f: Expr, name: str = "") -> "VectorField":
        return VectorField(tuple(simplify(mul(f, c)) for c in self.coeffs), self.domain, name or f"({to_string(f)})*{self.name}")

    def to_strings(self) -> list[str]:
        return [to_string(c) for c in self.coeffs]

    def is_zero(self, points, tol: float = ZERO_FIELD_TOL) -> bool:
        return bool(np.max(np.abs(self(points)), initial=0.0) <= tol)


def linear_combination(weights: Sequence[float], fields: Sequence[VectorField], name: str = "") -> VectorField:
    """Constant-coefficient combination ``sum_i w_i X_i``."""
    if not fields:
        raise ValueError("empty field list")
    dom = fields[0].domain
    comps = []
    for k in range(dom.n):
        acc = None
        for w, X in zip(weights, fields):
            if w == 0.0:
                continue
            term = mul(Expr("const", float(w)), X.coeffs[k])
            acc = term if acc is None else add(acc, term)
        comps.append(simplify(acc) if acc is not None else Expr("const", 0.0))
    return VectorField(tuple(comps), dom, name)


def lie_bracket(X: VectorField, Y: VectorField, name: str = "") -> VectorField:
    """``[X, Y]^k = sum_i X^i d_i Y^k - Y^i d_i X^k``, simplified."""
    if X.n != Y.n:
        raise DimensionMismatchError(f"cannot bracket fields of dimension {X.n} and {Y.n}")
    coords = X.domain.coords
    comps = []
    for k in range(X.n):
        acc = Expr("const", 0.0)
        for i, c in enumerate(coords):
            acc = add(acc, mul(X.coeffs[i], differentiate(Y.coeffs[k], c)))
            acc = sub(acc, mul(Y.coeffs[i], differentiate(X.coeffs[k], c)))
        comps.append(simplify(acc))
    return VectorField(tuple(comps), X.domain, name or f"[{X.name},{Y.name}]")


@dataclass(frozen=True)
class Frame:
    """An ordered family of vector fields on a common domain.

    Usually ``len(fields) == n`` (a frame in the strict sense); families of
    fewer fields are allowed for stage subframes.
    """

    fields: tuple[VectorField, ...]
    domain: Domain

    def __post_init__(self):
        object.__setattr__(self, "fields", tuple(self.fields))
        for X in self.fields:
            if X.n != self.domain.n:
                raise DimensionMismatchError(f"field {X.name!r} does not match the frame dimension {self.domain.n}")

    @classmethod
    def coordinate(cls, domain: Domain) -> "Frame":
        n = domain.n
        fields = []
        for i in range(n):
            comps = tuple(Expr("const", 1.0 if k == i else 0.0) for k in range(n))
            fields.append(VectorField(comps, domain, f"d_{domain.coords[i]}"))
        return cls(tuple(fields), domain)

    @property
    def n(self) -> int:
        return self.domain.n

    @property
    def names(self) -> list[str]:
        return [X.name for X in self.fields]

    def __len__(self):
        return len(self.fields)

    def __getitem__(self, i):
        return self.fields[i]

    def matrix(self, points) -> np.ndarray:
        """Frame matrices ``A`` with ``A[..., i, :] = X_i(x)``."""
        exprs = tuple(c for X in self.fields for c in X.coeffs)
        f = compile_exprs(exprs, self.domain.coords, self.domain.params, vectorized=True)
        pts = np.asarray(points, dtype=float)
        vals = f(pts)  # (m*n, ...)
        vals = vals.reshape((len(self.fields), self.n) + pts.shape[:-1])
        return np.moveaxis(np.moveaxis(vals, 0, -1), 0, -1)

    def scalar_matrix(self):
        """Fast evaluator ``x -> A(x)`` for single points."""
        exprs = tuple(c for X in self.fields for c in X.coeffs)
        f = compile_exprs(exprs, self.domain.coords, self.domain.params, vectorized=False)
        m, n = len(self.fields), self.n
        return lambda x: np.array(f(x), dtype=float).reshape(m, n)


@dataclass(frozen=True)
class FrameMatrix:
    """Frame matrix at one point; row ``i`` holds ``X_i(x)``."""

    A: np.ndarray
    x: np.ndarray
    cond: float

    @property
    def singular(self) -> bool:
        return not np.isfinite(self.cond) or self.cond > SINGULAR_COND

    @property
    def det(self) -> float:
        return float(np.linalg.det(self.A))

    def coframe(self) -> np.ndarray:
        """Rows ``theta^i`` with ``theta^i . X_j(x) = delta_ij``."""
        if self.singular:
            raise SingularFrameError(f"frame matrix is singular (cond={self.cond:.3g})", self.x, self.cond)
        return np.linalg.inv(self.A).T


def frame_matrix(F: Frame, x) -> FrameMatrix:
    x = np.asarray(x, dtype=float)
    if x.shape != (F.n,):
        raise DimensionMismatchError(f"point has shape {x.shape}, expected ({F.n},)")
    A = F.scalar_matrix()(x)
    cond = float(np.linalg.cond(A)) if A.shape[0] == A.shape[1] else float("inf")
    return FrameMatrix(A, x, cond)


def decompose_in_frame(Z: VectorField, F: Frame, x, tol: float = 1e-10) -> np.ndarray:
    """Coefficients ``c`` with ``A(x)^T c = Z(x)``."""
    fm = frame_matrix(F, x)
    if fm.singular:
        raise SingularFrameError(f"frame matrix is singular at {fm.x.tolist()} (cond={fm.cond:.3g})", fm.x, fm.cond)
    z = np.array(Z.scalar()(fm.x), dtype=float)
    c = np.linalg.solve(fm.A.T, z)
    res = np.max(np.abs(fm.A.T @ c - z), initial=0.0)
    if res > tol * (1.0 + np.max(np.abs(z), initial=0.0)):
        raise SingularFrameError(f"decomposition residual {res:.3g} exceeds tolerance", fm.x, fm.cond)
    return c


def decompose_many(Z: VectorField, F: Frame, points) -> np.ndarray:
    """Vectorised :func:`decompose_in_frame` over an ``(m, n)`` array of points."""
    A = F.matrix(points)
    z = Z(points)
    return np.linalg.solve(np.swapaxes(A, -1, -2), z[..., None])[..., 0]


@dataclass(frozen=True)
class RegularityReport:
    passed: bool
    min_abs_det: float
    min_ratio: float
    worst_point: list[float]
    samples: int
    seed: int | None
    sign_change: bool = False

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "min_abs_det": self.min_abs_det,
            "min_ratio": self.min_ratio,
            "worst_point": self.worst_point,
            "samples": self.samples,
            "seed": self.seed,
            "sign_change": self.sign_change,
        }


def check_complete_regularity(F: Frame, samples: int = 200, seed: int | None = None, points=None) -> RegularityReport:
    """Sweep ``|det A(x)| >= 1e-8 * ||A(x)||^n`` over quasi-random admissible points.

    A determinant that changes sign between two samples joined by an
    admissible segment must vanish on it; the zero is located by bisection
    and reported as the worst point.
    """
    if len(F) != F.n:
        raise DimensionMismatchError(f"a frame needs {F.n} fields, got {len(F)}")
    pts = F.domain.sample(samples, seed=seed) if points is None else np.asarray(points, dtype=float)
    A = F.matrix(pts)
    det = np.linalg.det(A)
    smax = np.linalg.norm(A, ord=2, axis=(-2, -1))
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(smax > 0, np.abs(det) / smax**F.n, 0.0)
    i = int(np.argmin(ratio))
    worst, min_ratio = pts[i], float(ratio[i])
    passed = min_ratio >= REGULARITY_RATIO
    sign_change = False
    if passed:
        zero = _det_sign_change(F, pts, det)
        if zero is not None:
            sign_change, passed, worst, min_ratio = True, False, zero, 0.0
    return RegularityReport(
        passed=bool(passed),
        min_abs_det=float(np.min(np.abs(det))),
        min_ratio=min_ratio,
        worst_point=[float(v) for v in worst],
        samples=len(pts),
        seed=seed,
        sign_change=sign_change,
    )


def _det_sign_change(F: Frame, pts, det):
    pos, neg = pts[det > 0], pts[det < 0]
    if len(pos) == 0 or len(neg) == 0:
        return None
    # closest opposite-sign pair
    d2 = np.sum((pos[:, None, :] - neg[None, :, :]) ** 2, axis=-1)
    a, b = np.unravel_index(np.argmin(d2), d2.shape)
    p, q = pos[a], neg[b]
    seg = p + np.linspace(0.0, 1.0, 33)[:, None] * (q - p)
    if not np.all(F.domain.admissible(seg, margin=0.0)):
        return None
    detf = lambda x: np.linalg.det(F.scalar_matrix()(x))
    for _ in range(60):
        m = 0.5 * (p + q)
        if detf(m) > 0:
            p = m
        else:
            q = m
    return 0.5 * (p + q)
