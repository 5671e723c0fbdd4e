"""Reproducible quasi-random sampling of admissible points."""

from __future__ import annotations

import os

import numpy as np
from scipy.stats import qmc

DEFAULT_SEED = 20170
SEED_ENV = "QUADFLOW_SEED"
ADMISSIBLE_MARGIN = 1e-6


class NoAdmissiblePointsError(ValueError):
    pass


def default_seed() -> int:
    """Sampling seed, overridable through ``QUADFLOW_SEED``."""
    raw = os.environ.get(SEED_ENV)
    return int(raw) if raw not in (None, "") else DEFAULT_SEED


def sample_box(
    box,
    count: int,
    seed: int | None = None,
    admissible=None,
    shrink: float = 0.0,
    max_rounds: int = 20,
) -> np.ndarray:
    """Draw ``count`` scrambled-Halton points from ``box`` that pass ``admissible``.

    ``box`` is an ``(n, 2)`` array of intervals; ``shrink`` pulls the points
    towards the box centre by that fraction, which leaves room for finite
    difference stencils.  ``admissible`` maps an ``(m, n)`` array to a
    boolean mask.
    """
    box = np.asarray(box, dtype=float)
    seed = default_seed() if seed is None else seed
    lo, hi = box[:, 0], box[:, 1]
    mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo) * (1.0 - shrink)
    sampler = qmc.Halton(d=len(box), scramble=True, seed=seed)
    kept = []
    total = 0
    for _ in range(max_rounds):
        need = max(count - total, 16)
        u = sampler.random(2 * need)
        pts = mid + (2.0 * u - 1.0) * half
        if admissible is not None:
            pts = pts[admissible(pts)]
        kept.append(pts)
        total += len(pts)
        if total >= count:
            break
    pts = np.concatenate(kept)[:count] if kept else np.empty((0, len(box)))
    if len(pts) < count:
        if len(pts) == 0:
            raise NoAdmissiblePointsError("no admissible points found in the sampling box")
        raise NoAdmissiblePointsError(f"only {len(pts)} of {count} admissible points found in the sampling box")
    return pts
