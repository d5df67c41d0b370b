"""Subspace algebra on orthonormal bases.

Every subspace is stored as an ``n x d`` matrix with orthonormal columns.
A zero-dimensional subspace is an ``n x 0`` array and is a perfectly valid
value for all operations below.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import subspace_angles

DEFAULT_ANGLE_TOL = 1e-8

# Relative rank tolerance used by the decomposition pipeline.  Products of
# computed projectors carry round-off around 1e-15, far above the plain
# ``max(m, n) * eps * sigma_max`` cut-off when the exact matrix is zero.
PIPELINE_TOL = 1e-10


class DimensionError(ValueError):
    pass


def _as_matrix(M) -> np.ndarray:
    M = np.asarray(M, dtype=float)
    if M.ndim == 1:
        M = M.reshape(-1, 1)
    if M.ndim != 2:
        raise DimensionError(f"expected a matrix, got array of shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ValueError("matrix has non-finite entries")
    return M


def default_tol(M: np.ndarray, smax: float) -> float:
    """Numerical-rank threshold ``max(m, n) * eps * sigma_max``."""
    return max(M.shape) * np.finfo(float).eps * smax


def _rank_split(M: np.ndarray, tol: float | None):
    U, s, Vt = np.linalg.svd(M, full_matrices=True)
    smax = s[0] if s.size else 0.0
    thr = default_tol(M, smax) if tol is None else tol * max(smax, 1.0)
    rank = int(np.sum(s > thr))
    return U, s, Vt, rank, thr


class Subspace:
    """Linear subspace of R^n given by an orthonormal basis.

    Instances are immutable; all operations return new objects.
    """

    __slots__ = ("_basis", "tol")

    def __init__(self, basis: np.ndarray, tol: float = 0.0):
        basis = np.asarray(basis, dtype=float)
        if basis.ndim != 2:
            raise DimensionError("basis must be a 2-d array")
        basis = basis.copy()
        basis.setflags(write=False)
        self._basis = basis
        self.tol = tol

    # construction helpers
    @classmethod
    def full(cls, n: int) -> Subspace:
        return cls(np.eye(n))

    @classmethod
    def zero(cls, n: int) -> Subspace:
        return cls(np.zeros((n, 0)))

    @property
    def basis(self) -> np.ndarray:
        return self._basis

    @property
    def ambient_dim(self) -> int:
        return self._basis.shape[0]

    @property
    def dim(self) -> int:
        return self._basis.shape[1]

    @property
    def is_zero(self) -> bool:
        return self.dim == 0

    @property
    def is_full(self) -> bool:
        return self.dim == self.ambient_dim

    def projector(self) -> np.ndarray:
        """Orthogonal projector onto the subspace."""
        return self._basis @ self._basis.T

    def project(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        return self._basis @ (self._basis.T @ v)

    def __repr__(self) -> str:
        return f"Subspace(dim={self.dim}, ambient_dim={self.ambient_dim})"

    # algebra as methods, mirroring the module-level functions
    def __and__(self, other: Subspace) -> Subspace:
        return intersect(self, other)

    def __add__(self, other: Subspace) -> Subspace:
        return sum_(self, other)

    def complement(self) -> Subspace:
        return complement(self)

    def contains(self, v, tol: float = 1e-9) -> bool:
        return contains(self, v, tol)

    def equals(self, other: Subspace, angle_tol: float = DEFAULT_ANGLE_TOL) -> bool:
        return equals(self, other, angle_tol)

    def contains_subspace(self, other: Subspace, tol: float = 1e-9) -> bool:
        _check_same(self, other)
        if other.dim == 0:
            return True
        resid = other.basis - self.project(other.basis)
        return float(np.linalg.norm(resid, 2)) <= tol


def _check_same(S1: Subspace, S2: Subspace) -> None:
    if S1.ambient_dim != S2.ambient_dim:
        raise DimensionError(
            f"ambient dimensions differ: {S1.ambient_dim} vs {S2.ambient_dim}"
        )


def column_space(M, tol: float | None = None) -> Subspace:
    """Orthonormal basis of ``im M``.

    ``tol`` is a relative threshold on singular values (scaled by
    ``max(1, sigma_max)``); by default the standard numerical-rank cut-off
    ``max(m, n) * eps * sigma_max`` is used.
    """
    M = _as_matrix(M)
    m, n = M.shape
    if n == 0 or m == 0:
        return Subspace(np.zeros((m, 0)), 0.0)
    U, s, Vt, rank, thr = _rank_split(M, tol)
    return Subspace(U[:, :rank], thr)


def kernel(M, tol: float | None = None) -> Subspace:
    """Orthonormal basis of ``{x : M x = 0}``."""
    M = _as_matrix(M)
    m, n = M.shape
    if m == 0 or n == 0:
        return Subspace(np.eye(n), 0.0)
    U, s, Vt, rank, thr = _rank_split(M, tol)
    return Subspace(Vt[rank:].T, thr)


def complement(S: Subspace) -> Subspace:
    """Orthogonal complement within the ambient space."""
    n = S.ambient_dim
    if S.dim == 0:
        return Subspace.full(n)
    if S.dim == n:
        return Subspace.zero(n)
    return kernel(S.basis.T)


def sum_(S1: Subspace, S2: Subspace, tol: float | None = None) -> Subspace:
    _check_same(S1, S2)
    return column_space(np.hstack([S1.basis, S2.basis]), tol)


def intersect(S1: Subspace, S2: Subspace, tol: float | None = None) -> Subspace:
    """Intersection, as the kernel of the stacked complement projections."""
    _check_same(S1, S2)
    n = S1.ambient_dim
    if S1.dim == 0 or S2.dim == 0:
        return Subspace.zero(n)
    if S1.is_full:
        return S2
    if S2.is_full:
        return S1
    C = np.vstack([complement(S1).basis.T, complement(S2).basis.T])
    return kernel(C, tol)


def image(M, S: Subspace, tol: float | None = None) -> Subspace:
    """``M S = {M x : x in S}``."""
    M = _as_matrix(M)
    if M.shape[1] != S.ambient_dim:
        raise DimensionError("matrix columns do not match subspace dimension")
    if S.dim == 0:
        return Subspace.zero(M.shape[0])
    return column_space(M @ S.basis, tol)


def preimage(M, S: Subspace, tol: float | None = None) -> Subspace:
    """Set-valued preimage ``M^{-1} S = {x : M x in S}``."""
    M = _as_matrix(M)
    if M.shape[0] != S.ambient_dim:
        raise DimensionError("matrix rows do not match subspace dimension")
    if S.is_full:
        return Subspace.full(M.shape[1])
    Bperp = complement(S).basis
    return kernel(Bperp.T @ M, tol)


def principal_angles(S1: Subspace, S2: Subspace) -> np.ndarray:
    _check_same(S1, S2)
    if S1.dim == 0 or S2.dim == 0:
        return np.zeros(0)
    return subspace_angles(S1.basis, S2.basis)


def equals(S1: Subspace, S2: Subspace, angle_tol: float = DEFAULT_ANGLE_TOL) -> bool:
    """Equality up to the largest principal angle."""
    _check_same(S1, S2)
    if S1.dim != S2.dim:
        return False
    if S1.dim == 0:
        return True
    # subspace_angles loses accuracy near 0; use the residual sine instead.
    resid = S2.basis - S1.project(S2.basis)
    return float(np.linalg.norm(resid, 2)) < angle_tol


def contains(S: Subspace, v, tol: float = 1e-9) -> bool:
    v = np.asarray(v, dtype=float).reshape(-1)
    if v.shape[0] != S.ambient_dim:
        raise DimensionError("vector length does not match ambient dimension")
    scale = max(1.0, float(np.linalg.norm(v)))
    return float(np.linalg.norm(v - S.project(v))) <= tol * scale


def span(*vectors, n: int | None = None) -> Subspace:
    """Convenience: column space of the given vectors."""
    if not vectors:
        if n is None:
            raise ValueError("ambient dimension needed for an empty span")
        return Subspace.zero(n)
    return column_space(np.column_stack([np.asarray(v, float) for v in vectors]))
