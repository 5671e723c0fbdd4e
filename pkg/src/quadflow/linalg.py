"""Subspaces of a coefficient space R^n with SVD rank decisions."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

RANK_RTOL = 1e-9


def _rank_basis(M: np.ndarray, rtol: float, atol: float) -> np.ndarray:
    if M.size == 0:
        return np.zeros((0, M.shape[1]))
    _, s, vt = np.linalg.svd(M, full_matrices=False)
    if len(s) == 0 or s[0] <= atol:
        return np.zeros((0, M.shape[1]))
    r = int(np.sum(s > max(rtol * s[0], atol)))
    return vt[:r]


@dataclass(frozen=True, eq=False)
class Subspace:
    """Row space of ``basis`` (orthonormal rows) inside R^ambient."""

    basis: np.ndarray
    ambient: int

    @classmethod
    def span(cls, vectors, ambient: int | None = None, rtol: float = RANK_RTOL, atol: float = 0.0) -> "Subspace":
        M = np.asarray(vectors, dtype=float)
        if M.ndim == 1:
            M = M[None, :] if M.size else M.reshape(0, ambient or 0)
        if ambient is None:
            ambient = M.shape[1]
        M = M.reshape(-1, ambient)
        return cls(_rank_basis(M, rtol, atol), ambient)

    @classmethod
    def full(cls, n: int) -> "Subspace":
        return cls(np.eye(n), n)

    @classmethod
    def zero(cls, n: int) -> "Subspace":
        return cls(np.zeros((0, n)), n)

    @property
    def dim(self) -> int:
        return self.basis.shape[0]

    def is_zero(self) -> bool:
        return self.dim == 0

    def project(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        return (v @ self.basis.T) @ self.basis

    def distance(self, v) -> float:
        """Euclidean distance from ``v`` (or max over rows of ``v``) to the subspace."""
        v = np.atleast_2d(np.asarray(v, dtype=float))
        return float(np.max(np.linalg.norm(v - self.project(v), axis=-1), initial=0.0))

    def contains(self, other, tol: float = 1e-8) -> bool:
        """Vector or subspace containment, tolerance relative to the vector norm."""
        if isinstance(other, Subspace):
            return other.dim == 0 or self.distance(other.basis) <= tol
        v = np.atleast_2d(np.asarray(other, dtype=float))
        scale = np.max(np.linalg.norm(v, axis=-1), initial=0.0)
        return self.distance(v) <= tol * max(scale, 1.0)

    def equals(self, other: "Subspace", tol: float = 1e-8) -> bool:
        return self.dim == other.dim and self.contains(other, tol) and other.contains(self, tol)

    def __add__(self, other: "Subspace") -> "Subspace":
        return Subspace.span(np.vstack([self.basis, other.basis]), self.ambient)

    def complement(self) -> "Subspace":
        """Orthogonal complement; rows orthonormal."""
        if self.dim == 0:
            return Subspace.full(self.ambient)
        _, _, vt = np.linalg.svd(self.basis, full_matrices=True)
        return Subspace(vt[self.dim :], self.ambient)

    def intersect(self, other: "Subspace") -> "Subspace":
        return (self.complement() + other.complement()).complement()

    def relative_complement(self, inner: "Subspace") -> "Subspace":
        """Orthonormal basis of ``self`` ∩ ``inner``^⊥ (``inner`` ⊆ ``self``)."""
        if inner.dim == 0:
            return Subspace(self.basis.copy(), self.ambient)
        P = self.basis - (self.basis @ inner.basis.T) @ inner.basis
        return Subspace.span(P, self.ambient, rtol=1e-6)

    def to_list(self) -> list[list[float]]:
        return [[float(v) for v in row] for row in self.basis]

    def __repr__(self):
        return f"Subspace(dim={self.dim}, ambient={self.ambient})"


def annihilator(ambient_dim: int, W: Subspace) -> Subspace:
    """Dual vectors killing ``W``, identified with ``W``'s orthogonal complement."""
    if W.ambient != ambient_dim:
        raise ValueError(f"subspace lives in R^{W.ambient}, not R^{ambient_dim}")
    return W.complement()
