"""Closed 1-forms, path quadratures and flow reconstruction from a quadrature chart.

Given a completely regular frame ``X_1..X_n`` and a nested chain of subspaces
``R^n = W_0 ⊋ W_1 ⊋ ... ⊋ W_k`` of its coefficient space (with ``W_k``
abelian and the dynamical field in every ``W_m``), the chart is assembled in
``k + 1`` stages.  Stage ``m`` (1-based) uses the dual vectors of
``W_{m-1} ∩ W_m^⊥`` (``W_{k+1} = 0``); the 1-form ``α_ζ`` with
``α_ζ(X_i) = ζ_i`` is closed on the leaves of ``W_{m-1}``, and its integral
from a reference point on each leaf is the chart function ``Q_ζ``.

Stage 1 integrates along straight segments from the base point.  Later stages
find the reference point by flowing from the base point along the fields of
earlier dual vectors (the transversal curve), then integrate along a curve
that stays inside the leaf.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import quad_vec, solve_ivp

from .expr import DomainError
from .fields import Frame, SingularFrameError, check_complete_regularity
from .linalg import Subspace, annihilator

QUAD_TOL = 1e-10
ODE_RTOL = 1e-12
ODE_ATOL = 1e-14


class QuadratureError(RuntimeError):
    pass


class PathDomainError(QuadratureError):
    """A path left the admissible domain."""


class LeafPathError(QuadratureError):
    pass


class NotIntegrableError(ValueError):
    pass


class FlowInversionError(QuadratureError):
    pass


# one-forms ------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class OneFormField:
    """Forms ``β_r(x)`` with ``β_r(x) · X_i(x) = h[r, i]`` for each row ``r`` of ``h``.

    ``h`` is a single dual vector or a stack of them; evaluation returns
    shape ``(..., n)`` or ``(..., r, n)`` accordingly.
    """

    frame: Frame
    h: np.ndarray
    stage: int = 1

    def __call__(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        A = self.frame.matrix(pts)
        H = np.atleast_2d(self.h)
        rhs = np.broadcast_to(H.T, A.shape[:-2] + H.T.shape)
        beta = np.swapaxes(np.linalg.solve(A, rhs), -1, -2)
        return beta[..., 0, :] if self.h.ndim == 1 else beta


def build_one_form(F: Frame, zeta, stage: int = 1, x=None) -> OneFormField:
    """1-form dual to ``zeta`` over the frame; checks the frame matrix at ``x`` if given."""
    zeta = np.asarray(zeta, dtype=float)
    if zeta.shape[-1] != len(F):
        raise ValueError(f"dual vector has {zeta.shape[-1]} entries for {len(F)} fields")
    if x is not None:
        A = F.scalar_matrix()(np.asarray(x, float))
        if np.linalg.cond(A) > 1e12:
            raise SingularFrameError("frame matrix is singular at the requested point", x)
    return OneFormField(F, zeta, stage)


def check_closed(beta: Callable, points, h: float = 1e-5, tangent: Callable | None = None) -> float:
    """Max ``|∂_a β_b − ∂_b β_a|`` over ``points`` by central differences.

    With ``tangent`` (``x -> (n, d)`` basis of a distribution) the exterior
    derivative is evaluated on pairs of tangent vectors only.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    n = pts.shape[-1]
    eye = np.eye(n)
    D = np.stack([(beta(pts + h * eye[a]) - beta(pts - h * eye[a])) / (2 * h) for a in range(n)], axis=-2)
    # D[..., a, b] = ∂_a β_b; stacked forms carry an extra axis before (a, b)
    curl = D - np.swapaxes(D, -1, -2)
    if tangent is not None:
        T = np.stack([tangent(p) for p in pts])
        if curl.ndim == 4:
            T = T[:, None]
        curl = np.swapaxes(T, -1, -2) @ curl @ T
    return float(np.max(np.abs(curl), initial=0.0))


# paths and quadrature ---------------------------------------------------------


class Path:
    """A parametrised curve on ``[0, 1]``."""

    start: np.ndarray
    end: np.ndarray

    def point(self, s):
        raise NotImplementedError

    def velocity(self, s):
        raise NotImplementedError


@dataclass(eq=False)
class StraightPath(Path):
    start: np.ndarray
    end: np.ndarray

    def __post_init__(self):
        self.start = np.asarray(self.start, dtype=float)
        self.end = np.asarray(self.end, dtype=float)

    def point(self, s):
        s = np.asarray(s, dtype=float)[..., None]
        return self.start + s * (self.end - self.start)

    def velocity(self, s):
        s = np.asarray(s, dtype=float)
        return np.broadcast_to(self.end - self.start, s.shape + self.start.shape)


@dataclass(eq=False)
class PolylinePath(Path):
    """Piecewise-linear path through ``nodes`` at equally spaced parameters."""

    nodes: np.ndarray

    def __post_init__(self):
        self.nodes = np.asarray(self.nodes, dtype=float)
        self.start, self.end = self.nodes[0], self.nodes[-1]

    def _seg(self, s):
        m = len(self.nodes) - 1
        s = np.clip(np.asarray(s, dtype=float), 0.0, 1.0)
        i = np.minimum((s * m).astype(int), m - 1)
        return i, s * m - i, m

    def point(self, s):
        i, u, _ = self._seg(s)
        return self.nodes[i] + u[..., None] * (self.nodes[i + 1] - self.nodes[i])

    def velocity(self, s):
        i, _, m = self._seg(s)
        return m * (self.nodes[i + 1] - self.nodes[i])


def _gauss_composite(g: Callable, panels: int, order: int = 8):
    x, w = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(0.0, 1.0, panels + 1)
    mid, half = 0.5 * (edges[1:] + edges[:-1]), 0.5 * np.diff(edges)
    s = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    ws = (half[:, None] * w[None, :]).ravel()
    vals = g(s)  # (nodes, ...)
    return np.tensordot(ws, vals, axes=(0, 0))


def quadrature_along(
    beta: Callable,
    path: Path,
    rule: str | int = "adaptive",
    tol: float = QUAD_TOL,
    limit: int = 200,
):
    """``∫_0^1 β(γ(s)) · γ'(s) ds``.

    ``rule="adaptive"`` uses globally adaptive Gauss-Kronrod (21 points) to
    absolute tolerance ``tol``; an integer rule uses that many
    Gauss-Legendre nodes in 8-point panels.
    """

    def integrand(s):
        s = np.atleast_1d(s)
        try:
            b = beta(path.point(s))
        except DomainError as exc:
            raise PathDomainError(f"path leaves the domain: {exc}") from exc
        v = path.velocity(s)
        if b.ndim == v.ndim + 1:
            v = v[:, None, :]
        return np.sum(b * v, axis=-1)

    if isinstance(rule, (int, np.integer)):
        return _gauss_composite(integrand, max(1, int(rule) // 8))
    if np.allclose(path.start, path.end, rtol=0.0, atol=0.0):
        return np.squeeze(integrand(0.0) * 0.0, axis=0)
    val, err, info = quad_vec(lambda s: integrand(s)[0], 0.0, 1.0, epsabs=tol, epsrel=0.0, limit=limit, full_output=True)
    if not info.success:
        raise QuadratureError(f"quadrature tolerance {tol:g} not reached (error estimate {err:.3g})")
    return val


# leaf machinery -------------------------------------------------------------


def _field_flow(F: Frame, A_of: Callable, w: np.ndarray, x, s: float) -> np.ndarray:
    """Flow of ``sum_i w_i X_i`` for time ``s``; numerical bookkeeping, not a quadrature."""
    x = np.asarray(x, dtype=float)
    if s == 0.0:
        return x.copy()

    def rhs(_, y):
        return w @ A_of(y)

    try:
        sol = solve_ivp(rhs, (0.0, s), x, method="DOP853", rtol=ODE_RTOL, atol=ODE_ATOL)
    except DomainError as exc:
        raise PathDomainError(f"transversal curve leaves the domain: {exc}") from exc
    if not sol.success:
        raise QuadratureError(f"transversal flow failed: {sol.message}")
    return sol.y[:, -1]


@dataclass(eq=False)
class LeafPath(Path):
    """Curve from ``start`` to ``end`` tangent to the distribution of ``W``.

    Writing the chord as ``start + s (end - start)``, the curve is the chord
    pushed onto the leaf along a fixed complement ``N`` of the leaf's tangent
    space at ``start``: ``γ' = T(γ) a`` with ``[T(γ) | N] [a; μ] = end - start``.
    """

    frame: Frame
    W: Subspace
    start: np.ndarray
    end: np.ndarray
    A_of: Callable = None
    endpoint_tol: float = 1e-9

    def __post_init__(self):
        self.start = np.asarray(self.start, dtype=float)
        self.end = np.asarray(self.end, dtype=float)
        if self.A_of is None:
            self.A_of = self.frame.scalar_matrix()
        self.d = self.end - self.start
        T0 = self.tangent(self.start)
        q, _ = np.linalg.qr(T0, mode="complete")
        self.N = q[:, T0.shape[1] :]
        self._sol = None
        if np.any(self.d):
            self._trace()

    def tangent(self, x) -> np.ndarray:
        return self.A_of(x).T @ self.W.basis.T

    def _coeffs(self, x):
        T = self.tangent(x)
        M = np.hstack([T, self.N])
        return np.linalg.solve(M, self.d)[: T.shape[1]], T

    def _rhs(self, _, y):
        a, T = self._coeffs(y)
        return T @ a

    def _trace(self):
        try:
            sol = solve_ivp(self._rhs, (0.0, 1.0), self.start, method="DOP853", rtol=ODE_RTOL, atol=ODE_ATOL, dense_output=True)
        except DomainError as exc:
            raise PathDomainError(f"leaf path leaves the domain: {exc}") from exc
        except np.linalg.LinAlgError as exc:
            raise LeafPathError("leaf is not transversal to the chord complement") from exc
        if not sol.success:
            raise LeafPathError(f"leaf path tracing failed: {sol.message}")
        miss = float(np.max(np.abs(sol.y[:, -1] - self.end)))
        if miss > self.endpoint_tol * (1.0 + float(np.max(np.abs(self.end)))):
            raise LeafPathError(f"endpoints are not on a common leaf (miss {miss:.3g})")
        self._sol = sol.sol

    def point(self, s):
        s = np.asarray(s, dtype=float)
        if self._sol is None:
            return np.broadcast_to(self.start, s.shape + self.start.shape).copy()
        return np.moveaxis(self._sol(s), 0, -1)

    def velocity(self, s):
        s = np.asarray(s, dtype=float)
        if self._sol is None:
            return np.zeros(s.shape + self.start.shape)
        P = self.point(s).reshape(-1, len(self.start))
        return np.array([self._rhs(0.0, p) for p in P]).reshape(s.shape + self.start.shape)


def leaf_path(frame: Frame, W: Subspace, ref, x, endpoint_tol: float = 1e-9) -> LeafPath:
    """Curve inside the leaf of ``W`` (a distribution of frame combinations) from ``ref`` to ``x``."""
    return LeafPath(frame, W, ref, x, endpoint_tol=endpoint_tol)


# the chart --------------------------------------------------------------------


@dataclass(eq=False)
class QuadratureChart:
    """Chart ``Q = (Q_ξ1, ..., Q_ξn)`` with ``Q(Φ_t(x)) = Q(x) + t v``.

    ``blocks[m]`` holds the orthonormal dual vectors of stage ``m + 1``;
    stacked they form the ξ basis ``E``.
    """

    frame: Frame
    x0: np.ndarray
    stages: list[Subspace]
    blocks: list[np.ndarray]
    gamma: np.ndarray
    rule: str | int = "adaptive"
    box_shrink_events: list = field(default_factory=list)

    def __post_init__(self):
        self.x0 = np.asarray(self.x0, dtype=float)
        self.E = np.vstack(self.blocks)
        self.velocities = self.E @ self.gamma
        self._A = self.frame.scalar_matrix()
        self.forms = [build_one_form(self.frame, Z, stage=m + 1) for m, Z in enumerate(self.blocks)]

    @property
    def n(self) -> int:
        return self.frame.n

    @property
    def quadrature_count(self) -> int:
        return len(self.blocks)

    @property
    def stage_dims(self) -> list[int]:
        return [W.dim for W in self.stages]

    def _slices(self):
        out, i = [], 0
        for Z in self.blocks:
            out.append(slice(i, i + len(Z)))
            i += len(Z)
        return out

    def transversal_point(self, values: Sequence[np.ndarray], upto: int) -> np.ndarray:
        """Point reached from ``x0`` by flowing the dual-vector fields of blocks ``< upto``."""
        y = self.x0.copy()
        for m in range(upto):
            for w, s in zip(self.blocks[m], values[m]):
                y = _field_flow(self.frame, self._A, w, y, float(s))
        return y

    def stage_value(self, m: int, x, ref) -> np.ndarray:
        """Stage ``m`` (0-based) chart values at ``x`` given the leaf reference ``ref``."""
        x = np.asarray(x, dtype=float)
        if m == 0:
            path = StraightPath(self.x0, x)
        else:
            path = LeafPath(self.frame, self.stages[m], ref, x, A_of=self._A)
        return np.atleast_1d(quadrature_along(self.forms[m], path, rule=self.rule))

    def evaluate(self, x, with_refs: bool = False, stages: int | None = None):
        """``Q(x)`` (the first ``stages`` blocks only, if given); optionally the reference points.

        With ``with_refs`` the reference point of every evaluated stage and of
        the stage after it is returned as well.
        """
        x = np.asarray(x, dtype=float)
        vals, refs = [], [self.x0.copy()]
        ref = self.x0.copy()
        count = len(self.blocks) if stages is None else stages
        for m in range(count):
            if m > 0:
                for w, s in zip(self.blocks[m - 1], vals[m - 1]):
                    ref = _field_flow(self.frame, self._A, w, ref, float(s))
                refs.append(ref.copy())
            vals.append(self.stage_value(m, x, ref))
        if with_refs and count < len(self.blocks) and count > 0:
            for w, s in zip(self.blocks[count - 1], vals[count - 1]):
                ref = _field_flow(self.frame, self._A, w, ref, float(s))
            refs.append(ref.copy())
        q = np.concatenate(vals) if vals else np.zeros(0)
        return (q, refs) if with_refs else q

    __call__ = evaluate

    def jacobian(self, x) -> np.ndarray:
        """``E A(x)^{-T}``: the rows are the forms ``α_ξj`` at ``x``."""
        A = self._A(np.asarray(x, float))
        return np.linalg.solve(A, self.E.T).T

    def newton_step(self, y, r) -> np.ndarray:
        # J^{-1} r with J = E A^{-T} and E orthogonal
        return self._A(y).T @ (self.E.T @ r)

    def to_dict(self) -> dict:
        return {
            "x0": self.x0.tolist(),
            "xi_basis": self.E.tolist(),
            "velocities": [float(v) for v in self.velocities],
            "quadrature_count": self.quadrature_count,
            "stage_dims": self.stage_dims,
            "box_shrink_events": list(self.box_shrink_events),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def stage_blocks(stages: Sequence[Subspace]) -> list[np.ndarray]:
    """Orthonormal bases of ``W_{m-1} ∩ W_m^⊥`` for ``m = 1..k+1``."""
    n = stages[0].ambient
    chain = list(stages) + [Subspace.zero(n)]
    blocks = []
    for outer, inner in zip(chain[:-1], chain[1:]):
        B = outer.relative_complement(inner).basis
        if len(B) != outer.dim - inner.dim:
            raise NotIntegrableError("stage subspaces are not nested")
        blocks.append(B)
    return blocks


def build_chart_from_stages(
    frame: Frame,
    stages: Sequence[Subspace],
    gamma,
    x0,
    rule: str | int = "adaptive",
    check_regular: bool = True,
    seed: int | None = None,
) -> QuadratureChart:
    """Chart for a nested chain ``stages[0] = R^n ⊋ ... ⊋ stages[-1]`` (last abelian)."""
    n = frame.n
    if len(frame) != n:
        raise SingularFrameError(f"a chart needs a frame of {n} fields, got {len(frame)}")
    x0 = np.asarray(x0, dtype=float)
    if check_regular:
        rep = check_complete_regularity(frame, seed=seed)
        if not rep.passed:
            raise SingularFrameError(
                f"frame is not completely regular (min |det|/||A||^n = {rep.min_ratio:.3g} at {rep.worst_point})",
                rep.worst_point,
            )
    A0 = frame.scalar_matrix()(x0)
    if np.linalg.cond(A0) > 1e12:
        raise SingularFrameError("frame matrix is singular at the base point; move x0 or shrink the box", x0)
    gamma = np.asarray(gamma, dtype=float)
    for W in stages:
        if not W.contains(gamma):
            raise NotIntegrableError("the dynamical field leaves a stage subspace")
    return QuadratureChart(frame, x0, list(stages), stage_blocks(stages), gamma, rule)


def build_chart(S, gamma, x0, rule: str | int = "adaptive", seed: int | None = None) -> QuadratureChart:
    """Chart from a Lie structure and the Gamma-sequence of ``gamma``."""
    from .liealg import gamma_sequence

    if not S.closes:
        raise NotIntegrableError("the frame does not close on a Lie algebra")
    seq = gamma_sequence(S, gamma)
    if not seq.integrable:
        raise NotIntegrableError("the Gamma-sequence stabilises without becoming abelian")
    return build_chart_from_stages(S.basis, seq.stages, seq.gamma, x0, rule=rule, seed=seed)


def leaf_reference(chart: QuadratureChart, x, stage: int) -> np.ndarray:
    """Transversal point sharing the chart values of stages ``< stage`` (1-based) with ``x``."""
    if stage < 2:
        return chart.x0.copy()
    _, refs = chart.evaluate(x, with_refs=True, stages=stage - 1)
    return refs[-1]


# flow reconstruction ----------------------------------------------------------


@dataclass
class FlowResult:
    point: np.ndarray
    residual: float
    iterations: int
    substeps: int


def _box_distance(frame: Frame, y) -> float:
    box = frame.domain.box
    if box is None:
        return np.inf
    return float(np.min(np.minimum(y - box[:, 0], box[:, 1] - y)))


def _invert(chart: QuadratureChart, target, guess, tol: float, max_iter: int):
    y = np.array(guess, dtype=float)
    dom = chart.frame.domain
    r = chart(y) - target
    nr = float(np.max(np.abs(r)))
    for it in range(1, max_iter + 1):
        if nr <= tol:
            return y, nr, it - 1
        step = chart.newton_step(y, r)
        lam = 1.0
        while True:
            cand = y - lam * step
            ok = bool(dom.admissible(cand[None, :], margin=0.0)[0])
            if ok:
                try:
                    rc = chart(cand) - target
                    nc = float(np.max(np.abs(rc)))
                except (QuadratureError, np.linalg.LinAlgError, DomainError):
                    ok = False
            # the quasi-Newton error is nilpotent, so tolerate moderate growth
            if ok and np.isfinite(nc) and nc < max(10.0 * nr, 1e-8):
                break
            lam *= 0.5
            if lam < 1e-6:
                raise FlowInversionError(f"line search failed at residual {nr:.3g}; the target may lie outside the domain")
        y, r, nr = cand, rc, nc
    if nr <= tol:
        return y, nr, max_iter
    raise FlowInversionError(f"Newton did not converge in {max_iter} iterations (residual {nr:.3g})")


def reconstruct_flow(
    chart: QuadratureChart,
    x,
    t: float,
    tol: float = 1e-10,
    max_iter: int = 50,
    max_substeps: int = 1000,
) -> FlowResult:
    """Solve ``Q(y) = Q(x) + t v`` by damped quasi-Newton iteration.

    Long times are split so that each step's chart increment stays below half
    a validity radius estimated from the distance to the box boundary and the
    conditioning of the chart Jacobian.
    """
    x = np.asarray(x, dtype=float)
    if t == 0.0:
        return FlowResult(x.copy(), 0.0, 0, 0)
    q0 = chart(x)
    A_of = chart._A
    g = chart.gamma
    y, done, steps, iters, res = x.copy(), 0.0, 0, 0, 0.0
    speed = float(np.max(np.abs(chart.velocities)))
    while done < abs(t):
        if steps >= max_substeps:
            raise FlowInversionError("too many substeps")
        Ay = A_of(y)
        radius = _box_distance(chart.frame, y) / max(np.linalg.norm(Ay.T @ chart.E.T, 2), 1e-300)
        dt = abs(t) - done
        if speed > 0 and np.isfinite(radius):
            dt = min(dt, max(0.5 * radius / speed, 1e-3 * abs(t)))
        done_next = min(abs(t), done + dt)
        tau = np.copysign(done_next, t)
        guess = y + (tau - np.copysign(done, t)) * (g @ Ay)
        if not chart.frame.domain.admissible(guess[None, :], margin=0.0)[0]:
            guess = y
        y, res, k = _invert(chart, q0 + tau * chart.velocities, guess, tol, max_iter)
        iters += k
        steps += 1
        done = done_next
    return FlowResult(y, res, iters, steps)


def flow_csv(coords: Sequence[str], rows: Sequence[tuple[float, np.ndarray, float]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", *coords, "residual"])
    for t, y, r in rows:
        w.writerow([repr(float(t)), *(repr(float(v)) for v in y), repr(float(r))])
    return buf.getvalue()


__all__ = [
    "OneFormField",
    "build_one_form",
    "check_closed",
    "StraightPath",
    "PolylinePath",
    "LeafPath",
    "quadrature_along",
    "leaf_path",
    "leaf_reference",
    "QuadratureChart",
    "build_chart",
    "build_chart_from_stages",
    "stage_blocks",
    "reconstruct_flow",
    "flow_csv",
    "annihilator",
    "QuadratureError",
    "PathDomainError",
    "LeafPathError",
    "NotIntegrableError",
    "FlowInversionError",
]
