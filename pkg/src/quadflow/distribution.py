"""Cores of sets of vector fields, the V-sequence and distributional integrability."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .expr import Expr, compile_exprs
from .fields import (
    Frame,
    SingularFrameError,
    VectorField,
    check_complete_regularity,
    lie_bracket,
)
from .linalg import Subspace
from .liealg import gamma_vector
from .quadrature import (
    QuadratureChart,
    QuadratureError,
    build_chart_from_stages,
    build_one_form,
    check_closed,
    stage_blocks,
)

CORE_RTOL = 1e-8
CORE_SAMPLES = 100
ZERO_FIELD_TOL = 1e-9


class VanishingFactorError(ValueError):
    pass


def coefficient_samples(fields, V: Frame, points) -> np.ndarray:
    """Coefficients ``f(x)`` with ``A(x)^T f(x) = s(x)``; shape ``(len(fields), m, n)``."""
    At = np.swapaxes(V.matrix(points), -1, -2)
    out = []
    for s in fields:
        z = s(points)
        f = np.linalg.solve(At, z[..., None])[..., 0]
        res = np.max(np.abs(np.einsum("mij,mj->mi", At, f) - z), initial=0.0)
        if res > 1e-10 * (1.0 + np.max(np.abs(z), initial=0.0)):
            raise SingularFrameError(f"coefficient solve residual {res:.3g}")
        out.append(f)
    return np.array(out)


def _require_regular(V: Frame, seed):
    rep = check_complete_regularity(V, seed=seed)
    if not rep.passed:
        raise SingularFrameError(
            f"V is not completely regular (min |det|/||A||^n = {rep.min_ratio:.3g} at {rep.worst_point})", rep.worst_point
        )


def _span_of_rows(rows: np.ndarray, n: int, rtol: float) -> Subspace:
    rows = rows.reshape(-1, n)
    if rows.size == 0 or not np.any(np.abs(rows) > ZERO_FIELD_TOL):
        return Subspace.zero(n)
    return Subspace.span(rows, n, rtol=rtol, atol=ZERO_FIELD_TOL)


def _sampled_core(coeffs_at, V: Frame, samples: int, seed, rtol: float) -> Subspace:
    """Span of sampled coefficient rows, doubling the sample count until the rank is stable."""
    count = max(samples, CORE_SAMPLES)
    prev = None
    stable = 0
    while True:
        pts = V.domain.sample(count, seed=seed)
        W = _span_of_rows(coeffs_at(pts), V.n, rtol)
        if prev is not None and W.dim == prev.dim:
            stable += 1
            if stable >= 1:
                return W
        prev = W
        count *= 2
        if count > 64 * max(samples, CORE_SAMPLES):
            return W


def core(S, V: Frame, samples: int = CORE_SAMPLES, seed: int | None = None, rtol: float = CORE_RTOL) -> Subspace:
    """Smallest subspace ``W`` of ``V`` with every field of ``S`` in the module of ``W``."""
    _require_regular(V, seed)
    S = list(S)
    if not S:
        return Subspace.zero(V.n)
    return _sampled_core(lambda pts: coefficient_samples(S, V, pts), V, samples, seed, rtol)


@dataclass(frozen=True, eq=False)
class VSequence:
    stages: list[Subspace]
    gamma: np.ndarray
    order: int | None
    cores: list[Subspace] = field(default_factory=list)

    @property
    def integrable(self) -> bool:
        return self.order is not None

    @property
    def dims(self) -> list[int]:
        return [W.dim for W in self.stages]


class _BracketTable:
    """Pairwise brackets of the frame and their sampled coefficients in the frame."""

    def __init__(self, V: Frame):
        self.V = V
        m = len(V)
        self.brackets = {}
        for i in range(m):
            for j in range(i + 1, m):
                self.brackets[i, j] = lie_bracket(V[i], V[j])

    def values(self, pts) -> np.ndarray:
        m, n = len(self.V), self.V.n
        B = np.zeros((m, m, len(pts), n))
        for (i, j), b in self.brackets.items():
            B[i, j] = b(pts)
            B[j, i] = -B[i, j]
        return B

    def coefficients(self, pts) -> np.ndarray:
        At = np.swapaxes(self.V.matrix(pts), -1, -2)
        B = self.values(pts)
        return np.linalg.solve(At[None, None], B[..., None])[..., 0]


def stage_basis(W: Subspace, gamma: np.ndarray) -> np.ndarray:
    """Rows spanning ``W``: the dynamical field first, then an orthonormal complement."""
    g = gamma / np.linalg.norm(gamma)
    rest = W.relative_complement(Subspace.span(g[None, :], W.ambient)).basis
    return np.vstack([gamma[None, :], rest])


def _is_abelian(table: _BracketTable, rows: np.ndarray, pts) -> bool:
    B = table.values(pts)
    vals = np.einsum("ai,bj,ijpk->abpk", rows, rows, B)
    return bool(np.max(np.abs(vals), initial=0.0) <= ZERO_FIELD_TOL)


def v_sequence(
    V: Frame,
    gamma,
    samples: int = CORE_SAMPLES,
    seed: int | None = None,
    rtol: float = CORE_RTOL,
    max_len: int = 64,
) -> VSequence:
    """``V_0 = V``, ``V_m = <Γ> + core([V_{m-1}, V_{m-1}])`` up to the first abelian stage."""
    _require_regular(V, seed)
    n = V.n
    g, _ = gamma_vector(len(V), gamma)
    table = _BracketTable(V)
    test_pts = V.domain.sample(max(samples, CORE_SAMPLES), seed=seed)
    line = Subspace.span(g[None, :], n)
    stages = [Subspace.full(n)]
    cores = []
    while len(stages) < max_len:
        rows = stage_basis(stages[-1], g)
        if _is_abelian(table, rows, test_pts):
            return VSequence(stages, g, len(stages), cores)

        def coeffs_at(pts, rows=rows):
            C = table.coefficients(pts)
            return np.einsum("ai,bj,ijpk->abpk", rows, rows, C)

        K = _sampled_core(coeffs_at, V, samples, seed, rtol)
        cores.append(K)
        nxt = line + K
        if nxt.dim >= stages[-1].dim:
            return VSequence(stages, g, None, cores)
        stages.append(nxt)
    return VSequence(stages, g, None, cores)


@dataclass
class RescaleReport:
    r: int | None
    r_prime: int | None
    factor: str
    stage_dims: list[int]
    stage_dims_prime: list[int]

    @property
    def holds(self) -> bool:
        return self.r is not None and self.r_prime is not None and abs(self.r_prime - self.r) <= 1

    def to_dict(self) -> dict:
        return {
            "r": self.r,
            "r_prime": self.r_prime,
            "factor": self.factor,
            "holds": self.holds,
            "stage_dims": self.stage_dims,
            "stage_dims_prime": self.stage_dims_prime,
        }


def check_nowhere_zero(f: Expr, V: Frame, samples: int = 400, seed: int | None = None, margin: float = 1e-6) -> None:
    pts = V.domain.sample(samples, seed=seed)
    vals = compile_exprs((f,), V.domain.coords, V.domain.params, vectorized=True)(pts)[0]
    vals = np.broadcast_to(vals, (len(pts),))
    if np.min(np.abs(vals)) <= margin or (np.any(vals > 0) and np.any(vals < 0)):
        raise VanishingFactorError("the rescaling factor vanishes in the box")


def rescaled_frame(V: Frame, index: int, f: Expr) -> Frame:
    fields = list(V.fields)
    fields[index] = V[index].scaled(f, name=f"f*{V[index].name}")
    return Frame(tuple(fields), V.domain)


def rescale_dynamics(V: Frame, gamma_index: int, f: Expr, samples: int = CORE_SAMPLES, seed: int | None = None) -> RescaleReport:
    """Orders of ``(V, Γ)`` and ``(V', fΓ)`` with ``V' = {fΓ, X_2, ..., X_n}``."""
    from .expr import to_string

    check_nowhere_zero(f, V, seed=seed)
    a = v_sequence(V, gamma_index, samples, seed)
    b = v_sequence(rescaled_frame(V, gamma_index, f), gamma_index, samples, seed)
    return RescaleReport(a.order, b.order, to_string(f), a.dims, b.dims)


@dataclass
class DistributionalFlow:
    chart: QuadratureChart | None
    sequence: VSequence
    closedness: list[float]
    diagnostic: str | None = None

    @property
    def ok(self) -> bool:
        return self.chart is not None


def distributional_flow(
    V: Frame,
    gamma,
    x0,
    samples: int = 32,
    seed: int | None = None,
    closed_tol: float = 1e-6,
    rule: str | int = "adaptive",
) -> DistributionalFlow:
    """Chart on the V-sequence after checking each stage form is closed on its leaves."""
    seq = v_sequence(V, gamma, seed=seed)
    if not seq.integrable:
        return DistributionalFlow(None, seq, [], "not distributionally integrable")
    pts = V.domain.sample(samples, seed=seed, shrink=0.02)
    A_of = V.scalar_matrix()
    closedness = []
    for m, (Z, W) in enumerate(zip(stage_blocks(seq.stages), seq.stages)):
        beta = build_one_form(V, Z, stage=m + 1)
        tangent = (lambda x, W=W: A_of(x).T @ W.basis.T) if m > 0 else None
        dev = check_closed(beta, pts, tangent=tangent)
        closedness.append(dev)
        if dev > closed_tol:
            return DistributionalFlow(None, seq, closedness, f"stage {m + 1} forms are not closed on the leaves (deviation {dev:.3g})")
    try:
        chart = build_chart_from_stages(V, seq.stages, seq.gamma, x0, rule=rule, seed=seed)
    except (SingularFrameError, QuadratureError, ValueError) as exc:
        return DistributionalFlow(None, seq, closedness, f"chart construction failed: {exc}")
    return DistributionalFlow(chart, seq, closedness)


def distribution_report(seq: VSequence, rescale: RescaleReport | None = None) -> dict:
    d = {
        "stage_dims": seq.dims,
        "order": seq.order,
        "core_bases": [K.to_list() for K in seq.cores],
    }
    if rescale is not None:
        d["rescale"] = {"r": rescale.r, "r_prime": rescale.r_prime}
    return d


def distribution_json(seq: VSequence, rescale: RescaleReport | None = None) -> str:
    return json.dumps(distribution_report(seq, rescale), indent=2)
