"""Structure constants, derived and lower central series, and the Gamma-sequence."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .fields import (
    Frame,
    SingularFrameError,
    VectorField,
    check_complete_regularity,
    lie_bracket,
)
from .linalg import Subspace

CONSTANCY_TOL = 1e-7
FIT_RTOL = 1e-9
MIN_SAMPLES = 50


class NotInSpanError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class LieStructure:
    """Structure constants ``c[i, j, k]`` with ``[X_i, X_j] = c_ij^k X_k``.

    ``method`` is ``"pointwise"`` when the frame is completely regular and the
    coefficients come from pointwise decompositions, or ``"joint-fit"`` when
    the frame matrix is singular and a single constant tensor was fitted to
    all sampled brackets at once.  ``residual`` is the coefficient spread
    (pointwise) or the relative fit residual (joint fit).
    """

    basis: Frame
    c: np.ndarray
    closes: bool
    residual: float
    method: str
    regular: bool
    worst_pair: tuple[int, int] | None = None
    seed: int | None = None
    samples: int = 0

    @property
    def n(self) -> int:
        return self.c.shape[0]

    def nonzero(self, tol: float = 1e-7) -> list[tuple[int, int, int, float]]:
        """Entries with ``i < j`` and ``|c| > tol``, 0-based."""
        out = []
        for i in range(self.n):
            for j in range(i + 1, self.n):
                for k in range(self.n):
                    if abs(self.c[i, j, k]) > tol:
                        out.append((i, j, k, float(self.c[i, j, k])))
        return out

    def bracket(self, u, v) -> np.ndarray:
        return np.einsum("i,j,ijk->k", np.asarray(u, float), np.asarray(v, float), self.c)

    def bracket_subspaces(self, U: Subspace, W: Subspace) -> Subspace:
        if U.dim == 0 or W.dim == 0:
            return Subspace.zero(self.n)
        vecs = np.einsum("ai,bj,ijk->abk", U.basis, W.basis, self.c).reshape(-1, self.n)
        return Subspace.span(vecs, self.n, atol=_atol(self.c))

    def is_abelian(self, W: Subspace) -> bool:
        return self.bracket_subspaces(W, W).is_zero()

    def jacobi_defect(self) -> float:
        c = self.c
        t = (
            np.einsum("ijm,mkl->ijkl", c, c)
            + np.einsum("jkm,mil->ijkl", c, c)
            + np.einsum("kim,mjl->ijkl", c, c)
        )
        return float(np.max(np.abs(t), initial=0.0))


def _atol(c: np.ndarray) -> float:
    # brackets of unit vectors smaller than this are fit noise
    return 1e-9 * max(1.0, float(np.max(np.abs(c), initial=0.0)))


def from_constants(c, basis: Frame | None = None) -> LieStructure:
    """Wrap an abstract structure-constant tensor (antisymmetrised)."""
    c = np.asarray(c, dtype=float)
    c = 0.5 * (c - np.swapaxes(c, 0, 1))
    return LieStructure(basis, c, True, 0.0, "given", True)


def structure_constants(
    F: Frame,
    samples: int = 64,
    seed: int | None = None,
    tol: float = CONSTANCY_TOL,
    fit_rtol: float = FIT_RTOL,
) -> LieStructure:
    """Decide whether the frame closes on a real Lie algebra and extract ``c``.

    For a completely regular frame every bracket is decomposed at ``samples``
    quasi-random points; the frame closes iff each coefficient spreads by at
    most ``tol``.  When the frame matrix is singular no pointwise decomposition
    exists, and the constants are instead fitted jointly over all samples:
    the frame closes iff the constant tensor reproduces every sampled bracket
    to relative accuracy ``fit_rtol``.
    """
    samples = max(samples, MIN_SAMPLES)
    n, m = F.n, len(F)
    pts = F.domain.sample(samples, seed=seed)
    reg = check_complete_regularity(F, points=pts) if m == n else None
    regular = reg is not None and reg.passed
    pairs = [(i, j) for i in range(m) for j in range(i + 1, m)]
    brackets = {p: lie_bracket(F[p[0]], F[p[1]]) for p in pairs}
    c = np.zeros((m, m, m))
    worst, worst_pair = 0.0, None
    if regular:
        At = np.swapaxes(F.matrix(pts), -1, -2)
        for p in pairs:
            coef = np.linalg.solve(At, brackets[p](pts)[..., None])[..., 0]
            spread = float(np.max(np.ptp(coef, axis=0), initial=0.0))
            c[p[0], p[1]] = coef.mean(axis=0)
            if spread > worst or worst_pair is None:
                worst, worst_pair = spread, p
        closes = worst <= tol
        method = "pointwise"
    else:
        # columns: X_k sampled at all points, stacked
        M = np.moveaxis(F.matrix(pts), -2, -1).reshape(-1, m)
        if np.linalg.matrix_rank(M) < m:
            raise SingularFrameError("frame fields are linearly dependent over the reals on the sample set")
        for p in pairs:
            z = brackets[p](pts).reshape(-1)
            coef, *_ = np.linalg.lstsq(M, z, rcond=None)
            res = float(np.max(np.abs(M @ coef - z), initial=0.0) / (1.0 + np.max(np.abs(z), initial=0.0)))
            c[p[0], p[1]] = coef
            if res > worst or worst_pair is None:
                worst, worst_pair = res, p
        closes = worst <= fit_rtol
        method = "joint-fit"
    c = c - np.swapaxes(c, 0, 1)
    return LieStructure(F, c, bool(closes), worst, method, regular, worst_pair, seed, len(pts))


def derived_series(S: LieStructure, max_len: int = 64) -> tuple[list[Subspace], int | None]:
    """``L_(0) = L``, ``L_(i+1) = [L_(i), L_(i)]`` and the solvability index."""
    series = [Subspace.full(S.n)]
    while len(series) < max_len:
        nxt = S.bracket_subspaces(series[-1], series[-1])
        if nxt.is_zero():
            series.append(nxt)
            return series, len(series) - 1
        if nxt.dim == series[-1].dim:
            return series, None
        series.append(nxt)
    return series, None


def lower_central_series(S: LieStructure, max_len: int = 64) -> tuple[list[Subspace], int | None]:
    """``L^(0) = L``, ``L^(i+1) = [L, L^(i)]`` and the nilpotency index."""
    full = Subspace.full(S.n)
    series = [full]
    while len(series) < max_len:
        nxt = S.bracket_subspaces(full, series[-1])
        if nxt.is_zero():
            series.append(nxt)
            return series, len(series) - 1
        if nxt.dim == series[-1].dim:
            return series, None
        series.append(nxt)
    return series, None


@dataclass(frozen=True, eq=False)
class GammaSequence:
    stages: list[Subspace]
    gamma: np.ndarray
    order: int | None
    gamma_index: int | None = None

    @property
    def integrable(self) -> bool:
        return self.order is not None

    @property
    def dims(self) -> list[int]:
        return [W.dim for W in self.stages]


def gamma_vector(n: int, gamma) -> tuple[np.ndarray, int | None]:
    if isinstance(gamma, (int, np.integer)):
        if not 0 <= gamma < n:
            raise NotInSpanError(f"basis index {gamma} out of range")
        v = np.zeros(n)
        v[gamma] = 1.0
        return v, int(gamma)
    v = np.asarray(gamma, dtype=float)
    if v.shape != (n,):
        raise NotInSpanError(f"coefficient vector must have length {n}")
    if not np.any(v):
        raise NotInSpanError("the dynamical field must be nonzero")
    return v, None


def gamma_sequence(S: LieStructure, gamma, ideal: Subspace | None = None, max_len: int = 64) -> GammaSequence:
    """``L_{G,0} = L`` (or ``ideal``), ``L_{G,k} = <G> + [L_{G,k-1}, L_{G,k-1}]``.

    Stops at the first abelian stage (order ``k + 1``) or when two
    consecutive stages coincide without being abelian (not integrable).
    """
    g, gi = gamma_vector(S.n, gamma)
    start = ideal if ideal is not None else Subspace.full(S.n)
    if not start.contains(g):
        raise NotInSpanError("the dynamical field is not in the starting subspace")
    stages = [start]
    line = Subspace.span(g[None, :], S.n)
    while len(stages) < max_len:
        cur = stages[-1]
        if S.is_abelian(cur):
            return GammaSequence(stages, g, len(stages), gi)
        nxt = line + S.bracket_subspaces(cur, cur)
        if nxt.dim >= cur.dim:
            return GammaSequence(stages, g, None, gi)
        stages.append(nxt)
    return GammaSequence(stages, g, None, gi)


@dataclass(frozen=True)
class CorollaryReport:
    order: int | None
    r_s: int | None
    r_n: int | None
    lower_ok: bool | None
    upper_ok: bool | None

    @property
    def holds(self) -> bool:
        return bool(self.lower_ok) and self.upper_ok is not False

    def to_dict(self) -> dict:
        return {
            "order": self.order,
            "r_s": self.r_s,
            "r_n": self.r_n,
            "lower_ok": self.lower_ok,
            "upper_ok": self.upper_ok,
            "holds": self.holds,
        }


def check_corollary_bounds(S: LieStructure, gamma) -> CorollaryReport:
    """``r >= r_s`` always, and ``r <= r_n`` when the algebra is nilpotent."""
    seq = gamma_sequence(S, gamma)
    _, r_s = derived_series(S)
    _, r_n = lower_central_series(S)
    r = seq.order
    lower = None if r is None or r_s is None else r >= r_s
    upper = None if r is None or r_n is None else r <= r_n
    return CorollaryReport(r, r_s, r_n, lower, upper)


def cocycle_check(S: LieStructure, h, tol: float = 1e-7) -> bool:
    """True iff the constant cochain ``h`` vanishes on ``[L, L]``."""
    v = np.einsum("ijk,k->ij", S.c, np.asarray(h, dtype=float))
    scale = max(1.0, float(np.max(np.abs(S.c), initial=0.0)))
    return bool(np.max(np.abs(v), initial=0.0) <= tol * scale)


@dataclass
class CandidateIntegral:
    i: int
    j: int
    k: int
    mean: float
    spread: float
    gamma_derivative: float
    constant_along_gamma: bool

    def to_dict(self) -> dict:
        return dict(self.__dict__)


class SymmetryError(ValueError):
    pass


def symmetry_constants_of_motion(
    F: Frame,
    gamma: VectorField,
    samples: int = 24,
    seed: int | None = None,
    h: float = 1e-4,
    tol: float = 1e-6,
    symmetry_tol: float = 1e-8,
) -> list[CandidateIntegral]:
    """Coefficient functions ``f_ij^k`` of ``[X_i, X_j] = f_ij^k X_k``.

    Each ``X_i`` must commute with ``gamma``.  The derivative of ``f_ij^k``
    along ``gamma`` is estimated by central differences along oracle
    trajectories through each sample point.
    """
    from .oracle import integrate_flow

    pts = F.domain.sample(samples, seed=seed, shrink=0.05)
    for X in F.fields:
        d = lie_bracket(X, gamma)(pts)
        scale = 1.0 + float(np.max(np.abs(gamma(pts))) * np.max(np.abs(X(pts))))
        if np.max(np.abs(d)) > symmetry_tol * scale:
            raise SymmetryError(f"[{X.name}, {gamma.name}] does not vanish")
    m = len(F)
    reg = check_complete_regularity(F, points=pts) if m == F.n else None
    out = []
    pairs = [(i, j) for i in range(m) for j in range(i + 1, m)]
    if reg is None or not reg.passed:
        # singular frame: only a constant decomposition is meaningful
        S = structure_constants(F, seed=seed)
        if not S.closes:
            raise SingularFrameError("frame is singular and its brackets are not constant combinations")
        for i, j in pairs:
            for k in range(m):
                if abs(S.c[i, j, k]) > 1e-7:
                    out.append(CandidateIntegral(i, j, k, float(S.c[i, j, k]), S.residual, 0.0, True))
        return out
    fwd = np.array([integrate_flow(gamma, p, h) for p in pts])
    bwd = np.array([integrate_flow(gamma, p, -h) for p in pts])
    At = lambda P: np.swapaxes(F.matrix(P), -1, -2)
    for i, j in pairs:
        b = lie_bracket(F[i], F[j])
        f0 = np.linalg.solve(At(pts), b(pts)[..., None])[..., 0]
        fp = np.linalg.solve(At(fwd), b(fwd)[..., None])[..., 0]
        fm = np.linalg.solve(At(bwd), b(bwd)[..., None])[..., 0]
        dg = np.abs(fp - fm) / (2 * h)
        for k in range(m):
            if np.max(np.abs(f0[:, k])) <= 1e-9:
                continue
            gd = float(np.max(dg[:, k]))
            out.append(
                CandidateIntegral(
                    i, j, k, float(np.mean(f0[:, k])), float(np.ptp(f0[:, k])), gd, gd <= tol * (1 + np.max(np.abs(f0[:, k])))
                )
            )
    return out


@dataclass
class LieReport:
    closes: bool
    c_nonzero: list
    r_s: int | None
    r_n: int | None
    gamma_orders: dict
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = {
            "closes": self.closes,
            "c_nonzero": self.c_nonzero,
            "r_s": self.r_s,
            "r_n": self.r_n,
            "gamma_orders": self.gamma_orders,
        }
        d.update(self.extra)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=False)


def lie_report(S: LieStructure, digits: int = 9) -> LieReport:
    """Summary with 1-based indices; ``gamma_orders`` maps basis names to orders."""
    names = S.basis.names if S.basis is not None else [f"X{i + 1}" for i in range(S.n)]
    nz = [[i + 1, j + 1, k + 1, round(v, digits)] for i, j, k, v in S.nonzero()] if S.closes else []
    if not S.closes:
        return LieReport(False, nz, None, None, {}, {"method": S.method, "residual": S.residual})
    _, r_s = derived_series(S)
    _, r_n = lower_central_series(S)
    orders = {names[i]: gamma_sequence(S, i).order for i in range(S.n)}
    return LieReport(True, nz, r_s, r_n, orders, {"method": S.method, "regular": S.regular})
