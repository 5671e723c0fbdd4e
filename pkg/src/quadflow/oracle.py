"""Independent flow oracle: an embedded Runge-Kutta-Fehlberg 4(5) integrator.

Nothing here touches the quadrature engine; the oracle is the ground truth
against which reconstructed flows are compared.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .fields import Domain, VectorField

# Fehlberg's coefficients
_A = [
    [],
    [1 / 4],
    [3 / 32, 9 / 32],
    [1932 / 2197, -7200 / 2197, 7296 / 2197],
    [439 / 216, -8.0, 3680 / 513, -845 / 4104],
    [-8 / 27, 2.0, -3544 / 2565, 1859 / 4104, -11 / 40],
]
_B4 = np.array([25 / 216, 0.0, 1408 / 2565, 2197 / 4104, -1 / 5, 0.0])
_B5 = np.array([16 / 135, 0.0, 6656 / 12825, 28561 / 56430, -9 / 50, 2 / 55])
_E = _B5 - _B4


class OracleError(RuntimeError):
    pass


class DomainExitError(OracleError):
    def __init__(self, message: str, time: float, state):
        super().__init__(message)
        self.time = time
        self.state = np.asarray(state, dtype=float)


class StepUnderflowError(OracleError):
    pass


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    errors: np.ndarray
    evaluations: int

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]

    def to_csv(self, coords: Sequence[str]) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", *coords])
        for t, x in zip(self.times, self.states):
            w.writerow([repr(float(t)), *(repr(float(v)) for v in x)])
        return buf.getvalue()


@dataclass
class _Counter:
    rhs: Callable
    calls: int = 0

    def __call__(self, x):
        self.calls += 1
        return np.array(self.rhs(x), dtype=float)


def _rkf_step(f, x, h):
    k = np.empty((6, len(x)))
    k[0] = f(x)
    for i in range(1, 6):
        k[i] = f(x + h * np.dot(_A[i], k[:i]))
    x4 = x + h * (_B4 @ k)
    err = h * (_E @ k)
    return x4, err


def _rhs_of(X) -> tuple[Callable, Domain | None]:
    if isinstance(X, VectorField):
        return X.scalar(), X.domain
    return X, None


def integrate_trajectory(
    X,
    x,
    t: float,
    atol: float = 1e-10,
    rtol: float = 1e-10,
    domain: Domain | None = None,
    h0: float | None = None,
    hmin: float = 1e-14,
    max_steps: int = 1_000_000,
) -> Trajectory:
    """Adaptive RKF45 trajectory of ``X`` from ``x`` over time ``t`` (either sign).

    ``X`` is a :class:`VectorField` (its domain constraints are monitored
    after every step) or a plain callable ``x -> dx/dt``.
    """
    rhs, dom = _rhs_of(X)
    dom = domain if domain is not None else dom
    f = _Counter(rhs)
    x = np.array(x, dtype=float)
    times, states, errors = [0.0], [x.copy()], [0.0]
    if t == 0.0:
        return Trajectory(np.array(times), np.array(states), np.array(errors), 0)
    direction = math.copysign(1.0, t)
    T = abs(t)
    s = 0.0
    h = min(T, h0 if h0 is not None else 1e-2 * max(1.0, T))
    prev_err = 1.0
    for _ in range(max_steps):
        if s >= T:
            break
        h = min(h, T - s)
        try:
            xn, e = _rkf_step(f, x, direction * h)
            ok_domain = dom is None or bool(dom.admissible(xn[None, :], margin=0.0)[0])
        except ArithmeticError:
            ok_domain = False
        if not ok_domain:
            h *= 0.5
            if h < hmin:
                raise DomainExitError(f"trajectory leaves the domain at t={direction * s:.6g}", direction * s, x)
            continue
        # error per unit time, so the global error stays near the tolerance
        scale = h * (atol + rtol * np.maximum(np.abs(x), np.abs(xn)))
        err = float(np.max(np.abs(e) / scale))
        if err <= 1.0 or h <= hmin:
            if h <= hmin and err > 1.0:
                raise StepUnderflowError(f"step size underflow at t={direction * s:.6g}")
            s = T if h >= T - s else s + h
            x = xn
            times.append(direction * s)
            states.append(x.copy())
            errors.append(err)
            # PI controller on the fourth-order estimate
            err = max(err, 1e-10)
            fac = 0.9 * err ** (-0.7 / 4) * prev_err ** (0.4 / 4)
            prev_err = err
            h *= min(5.0, max(0.2, fac))
        else:
            h *= max(0.1, 0.9 * err ** (-1 / 4))
    else:
        raise StepUnderflowError("maximum number of steps exceeded")
    return Trajectory(np.array(times), np.array(states), np.array(errors), f.calls)


def integrate_flow(X, x, t: float, tol: float = 1e-10, domain: Domain | None = None) -> np.ndarray:
    """State at time ``t`` of the flow of ``X`` through ``x``."""
    return integrate_trajectory(X, x, t, atol=tol, rtol=tol, domain=domain).final


def integrate_fixed(X, x, t: float, steps: int) -> np.ndarray:
    """Fixed-step integration with the fourth-order member of the pair."""
    rhs, _ = _rhs_of(X)
    f = _Counter(rhs)
    x = np.array(x, dtype=float)
    h = t / steps
    for _ in range(steps):
        x, _ = _rkf_step(f, x, h)
    return x


def convergence_order(X, x, t: float, steps: int = 8, levels: int = 4) -> float:
    """Observed order from successive step halvings (error ratios vs the finest run)."""
    sols = [integrate_fixed(X, x, t, steps * 2**i) for i in range(levels + 1)]
    errs = [np.max(np.abs(sols[i] - sols[i + 1])) for i in range(levels)]
    orders = [math.log2(errs[i] / errs[i + 1]) for i in range(levels - 1) if errs[i + 1] > 0]
    return float(np.median(orders))


@dataclass
class ProbeResult:
    point: list[float]
    time: float
    error: float | None
    per_coordinate: list[float] | None
    failure: str | None = None


@dataclass
class ComparisonReport:
    tolerance: float
    probes: list[ProbeResult] = field(default_factory=list)

    @property
    def sup_error(self) -> float:
        errs = [p.error for p in self.probes if p.error is not None]
        return max(errs, default=0.0)

    @property
    def per_coordinate_max(self) -> list[float]:
        rows = [p.per_coordinate for p in self.probes if p.per_coordinate is not None]
        return np.max(np.array(rows), axis=0).tolist() if rows else []

    @property
    def failures(self) -> list[ProbeResult]:
        return [p for p in self.probes if p.failure is not None]

    @property
    def passed(self) -> bool:
        return not self.failures and self.sup_error <= self.tolerance

    def to_dict(self) -> dict:
        return {
            "tolerance": self.tolerance,
            "sup_error": self.sup_error,
            "per_coordinate_max": self.per_coordinate_max,
            "passed": self.passed,
            "probes": [
                {"point": p.point, "t": p.time, "error": p.error, **({"failure": p.failure} if p.failure else {})}
                for p in self.probes
            ],
        }


def compare_flows(a: Callable, b: Callable, points, times, tolerance: float = 1e-6) -> ComparisonReport:
    """Sup-norm comparison of two flow functions ``(x, t) -> x_t`` on a probe set.

    Exceptions raised by either flow are recorded as per-probe failures.
    """
    rep = ComparisonReport(tolerance)
    for x in np.atleast_2d(np.asarray(points, dtype=float)):
        for t in times:
            try:
                ya = np.asarray(a(x, float(t)), dtype=float)
                yb = np.asarray(b(x, float(t)), dtype=float)
                d = np.abs(ya - yb)
                rep.probes.append(ProbeResult(x.tolist(), float(t), float(np.max(d)), d.tolist()))
            except Exception as exc:  # noqa: BLE001 - recorded, not raised
                rep.probes.append(ProbeResult(x.tolist(), float(t), None, None, f"{type(exc).__name__}: {exc}"))
    return rep
