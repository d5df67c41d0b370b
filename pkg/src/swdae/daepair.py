"""Regular matrix pairs ``(E, A)``: Wong sequences, quasi-Weierstrass form
and the derived consistency projector, flow matrix and impulse matrix."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .subspace import (
    PIPELINE_TOL,
    Subspace,
    image,
    preimage,
)

COND_WARN = 1e12


class NotRegular(ValueError):
    """Raised when a matrix pair ``(E, A)`` is not regular."""


class RegularityDiagnosticError(RuntimeError):
    """The Wong-sequence test and the determinant probe disagree."""


@dataclass(frozen=True)
class MatrixPair:
    E: np.ndarray
    A: np.ndarray

    def __post_init__(self):
        E = np.array(self.E, dtype=float)
        A = np.array(self.A, dtype=float)
        if E.ndim != 2 or E.shape[0] != E.shape[1] or E.shape != A.shape:
            raise ValueError(f"E and A must be square of equal shape, got {E.shape}, {A.shape}")
        if not (np.all(np.isfinite(E)) and np.all(np.isfinite(A))):
            raise ValueError("E and A must be finite")
        E.setflags(write=False)
        A.setflags(write=False)
        object.__setattr__(self, "E", E)
        object.__setattr__(self, "A", A)

    @property
    def n(self) -> int:
        return self.E.shape[0]


@dataclass(frozen=True)
class QwfData:
    S: np.ndarray
    T: np.ndarray
    J: np.ndarray
    N: np.ndarray
    n1: int
    nilpotency_index: int

    @property
    def n2(self) -> int:
        return self.N.shape[0]


@dataclass(frozen=True)
class PairDecomposition:
    pair: MatrixPair
    qwf: QwfData
    Pi: np.ndarray
    Adiff: np.ndarray
    Eimp: np.ndarray
    consistency_space: Subspace
    impulse_space: Subspace
    warnings: tuple = field(default=())

    @property
    def n(self) -> int:
        return self.pair.n

    @property
    def index(self) -> int:
        return self.qwf.nilpotency_index


def _pair(pair_or_E, A=None) -> MatrixPair:
    if isinstance(pair_or_E, MatrixPair):
        return pair_or_E
    return MatrixPair(pair_or_E, A)


def wong_limits(pair, A=None, tol: float = PIPELINE_TOL) -> tuple[Subspace, Subspace]:
    """Limits ``(V*, W*)`` of the two Wong sequences.

    ``V_{i+1} = A^{-1}(E V_i)`` from ``V_0 = R^n`` and
    ``W_{i+1} = E^{-1}(A W_i)`` from ``W_0 = {0}``.
    """
    pair = _pair(pair, A)
    E, A = pair.E, pair.A
    n = pair.n
    V = Subspace.full(n)
    for _ in range(n + 1):
        Vn = preimage(A, image(E, V, tol), tol)
        if Vn.dim == V.dim:
            V = Vn
            break
        V = Vn
    W = Subspace.zero(n)
    for _ in range(n + 1):
        Wn = preimage(E, image(A, W, tol), tol)
        if Wn.dim == W.dim:
            W = Wn
            break
        W = Wn
    return V, W


def _det_probe(pair: MatrixPair, rng_seed: int = 12345) -> bool:
    """True if ``lambda E - A`` is nonsingular for some of n+1 random lambdas."""
    n = pair.n
    rng = np.random.default_rng(rng_seed)
    lams = rng.uniform(-3.0, 3.0, size=n + 1) + 0.1
    scale = np.linalg.norm(pair.E, 2) + np.linalg.norm(pair.A, 2)
    if scale == 0.0:
        return False
    for lam in lams:
        smin = np.linalg.svd(lam * pair.E - pair.A, compute_uv=False)[-1]
        if smin > 1e-10 * scale * max(1.0, abs(lam)):
            return True
    return False


def _wong_direct_sum(V: Subspace, W: Subspace, n: int) -> bool:
    if V.dim + W.dim != n:
        return False
    if n == 0:
        return True
    T = np.hstack([V.basis, W.basis])
    s = np.linalg.svd(T, compute_uv=False)
    return s[-1] > 1e-8


def is_regular(pair, A=None) -> bool:
    """Regularity via the Wong direct-sum test, cross-checked against a
    randomized determinant probe of ``det(lambda E - A)``."""
    pair = _pair(pair, A)
    V, W = wong_limits(pair)
    wong = _wong_direct_sum(V, W, pair.n)
    probe = _det_probe(pair)
    if wong != probe:
        raise RegularityDiagnosticError(
            f"Wong-sequence test says regular={wong} but determinant probe says {probe}"
        )
    return wong


def _nilpotency_index(N: np.ndarray, tol: float = 1e-9) -> int:
    k = N.shape[0]
    if k == 0:
        return 0
    scale = max(1.0, np.linalg.norm(N, 2))
    P = np.eye(k)
    for nu in range(1, k + 1):
        P = P @ N
        if np.linalg.norm(P, 2) <= tol * scale**nu:
            return nu
    raise NotRegular("nilpotent block of the quasi-Weierstrass form is not nilpotent")


def decompose(pair, A=None) -> PairDecomposition:
    """Quasi-Weierstrass form and derived matrices of a regular pair."""
    pair = _pair(pair, A)
    E, A = pair.E, pair.A
    n = pair.n
    V, W = wong_limits(pair)
    if not _wong_direct_sum(V, W, n):
        raise NotRegular("Wong limits do not form a direct sum; pair is not regular")
    n1 = V.dim
    T = np.hstack([V.basis, W.basis])
    S = np.linalg.inv(np.hstack([E @ V.basis, A @ W.basis]))
    SET = S @ E @ T
    SAT = S @ A @ T
    J = SAT[:n1, :n1].copy()
    N = SET[n1:, n1:].copy()
    Tinv = np.linalg.inv(T)
    issues = []
    condT = np.linalg.cond(T)
    if condT > COND_WARN:
        msg = f"ill-conditioned QWF transformation, cond(T) = {condT:.3g}"
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
        issues.append(msg)
    qwf = QwfData(S=S, T=T, J=J, N=N, n1=n1, nilpotency_index=_nilpotency_index(N))
    T1, T2 = T[:, :n1], T[:, n1:]
    R1, R2 = Tinv[:n1, :], Tinv[n1:, :]
    Pi = T1 @ R1
    Adiff = T1 @ J @ R1
    Eimp = T2 @ N @ R2
    return PairDecomposition(
        pair=pair,
        qwf=qwf,
        Pi=Pi,
        Adiff=Adiff,
        Eimp=Eimp,
        consistency_space=V,
        impulse_space=W,
        warnings=tuple(issues),
    )


def cdiff(dec: PairDecomposition, C) -> np.ndarray:
    """Output matrix restricted to the consistency space, ``C Pi``."""
    C = np.atleast_2d(np.asarray(C, dtype=float))
    if C.shape[1] != dec.n:
        raise ValueError(f"C must have {dec.n} columns, got {C.shape[1]}")
    return C @ dec.Pi


def expm_many(M, ts) -> np.ndarray:
    """``exp(M t)`` for every ``t`` in ``ts``, stacked along axis 0.

    Uniform grids are factored as ``exp(M j h) exp(M k B h)`` with blocks of
    ``B ~ sqrt(len(ts))`` points, so only about ``2 sqrt(len(ts))``
    exponentials are evaluated.
    """
    M = np.asarray(M, dtype=float)
    ts = np.asarray(ts, dtype=float).reshape(-1)
    n = M.shape[0]
    if ts.size == 0 or n == 0:
        return np.zeros((ts.size, n, n))
    if not np.all(np.isfinite(M)):
        raise ValueError("matrix has non-finite entries")
    steps = np.diff(ts)
    uniform = ts.size > 16 and np.allclose(steps, steps[0], rtol=1e-9, atol=1e-14)
    with np.errstate(over="raise", invalid="raise"):
        try:
            if uniform:
                h = (ts[-1] - ts[0]) / (ts.size - 1)
                B = int(np.ceil(np.sqrt(ts.size)))
                nb = -(-ts.size // B)
                inner = scipy.linalg.expm(M[None] * (h * np.arange(B))[:, None, None])
                outer = scipy.linalg.expm(M[None] * (ts[0] + h * B * np.arange(nb))[:, None, None])
                out = np.einsum("jab,kbc->kjac", inner, outer).reshape(nb * B, n, n)[:ts.size]
            else:
                out = scipy.linalg.expm(M[None] * ts[:, None, None])
        except FloatingPointError as exc:
            raise OverflowError("matrix exponential overflows on the grid") from exc
    if not np.all(np.isfinite(out)):
        raise OverflowError("matrix exponential overflows on the grid")
    return out


def expm(M, t: float = 1.0) -> np.ndarray:
    """Matrix exponential ``exp(M t)`` (scaling and squaring, Pade)."""
    M = np.asarray(M, dtype=float)
    if M.size == 0:
        return np.zeros(M.shape)
    if not np.all(np.isfinite(M)):
        raise ValueError("matrix has non-finite entries")
    with np.errstate(over="raise", invalid="raise"):
        try:
            out = scipy.linalg.expm(M * t)
        except FloatingPointError as exc:
            raise OverflowError(f"matrix exponential overflows for |M t| = {np.linalg.norm(M * t):.3g}") from exc
    if not np.all(np.isfinite(out)):
        raise OverflowError(f"matrix exponential overflows for |M t| = {np.linalg.norm(M * t):.3g}")
    return out

