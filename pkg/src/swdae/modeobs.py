"""Per-mode observability data and local estimators of the observable part
``z_k = Z_k^T e(t_k^-)`` of an estimation error.

The smooth output on ``(t_k, t_{k+1})`` gives ``z_k^diff`` through a
Luenberger observer that is run forward and then propagated back over the
interval; the Dirac impulses at ``t_k`` give ``z_k^imp`` directly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .daepair import PairDecomposition, cdiff, expm
from .subspace import (
    PIPELINE_TOL,
    Subspace,
    column_space,
    complement,
    intersect,
    kernel,
    preimage,
)
from .trajectory import ImpulseRecord, PwsTrajectory, Segment

#: RK4 step times the closed-loop spectral radius
RK4_STEP_RATIO = 0.025
#: largest pole magnitude times interval length tried by ``design_gain``
MAX_STIFFNESS = 1e3
MAX_RK4_STEPS = 200_000

class GainDesignError(RuntimeError):
    pass


@dataclass
class ModeObsData:
    dec: PairDecomposition
    C: np.ndarray
    Cdiff: np.ndarray
    Odiff: np.ndarray
    Oimp: np.ndarray
    W: Subspace
    Zmat: np.ndarray
    Zdiff: np.ndarray
    Zimp: np.ndarray
    Uobs: np.ndarray
    Sdiff: np.ndarray
    Rdiff: np.ndarray
    Uimp: np.ndarray
    L: np.ndarray | None = field(default=None)

    @property
    def n(self) -> int:
        return self.dec.n

    @property
    def ny(self) -> int:
        return self.C.shape[0]

    @property
    def r(self) -> int:
        """Dimension of the observable part ``z_k``."""
        return self.Zmat.shape[1]

    @property
    def r_diff(self) -> int:
        return self.Zdiff.shape[1]

    @property
    def r_imp(self) -> int:
        return self.Zimp.shape[1]

    @property
    def eps_gain(self) -> float:
        """Factor ``kappa`` with ``|zhat - z| <= kappa * eps * |z|`` whenever both
        ``zhat^diff`` and ``zhat^imp`` have relative error at most ``eps``."""
        if self.r == 0:
            return 0.0
        G = np.vstack([self.Zdiff.T @ self.dec.Pi, self.Zimp.T])
        return float(np.linalg.norm(self.Uobs, 2) * np.linalg.norm(G @ self.Zmat, 2))


def observability_matrix(A: np.ndarray, C: np.ndarray, blocks: int | None = None) -> np.ndarray:
    """``[C; C A; ...; C A^{blocks-1}]`` (``blocks`` defaults to ``n``)."""
    n = A.shape[0]
    blocks = n if blocks is None else blocks
    rows, P = [], C
    for _ in range(blocks):
        rows.append(P)
        P = P @ A
    return np.vstack(rows) if rows else np.zeros((0, n))


def build(mode) -> ModeObsData:
    """Observability data of one mode (any object with ``dec`` and ``C``)."""
    dec: PairDecomposition = mode.dec
    C = np.atleast_2d(np.asarray(mode.C, dtype=float))
    n = dec.n
    Cd = cdiff(dec, C)
    Odiff = observability_matrix(dec.Adiff, Cd, n)
    Oimp = observability_matrix(dec.Eimp, C @ dec.Eimp, n - 1)
    tol = PIPELINE_TOL
    W = intersect(preimage(dec.Pi, kernel(Odiff, tol), tol), kernel(Oimp, tol), tol)
    Zmat = complement(W).basis
    Zdiff = column_space(Odiff.T, tol).basis
    Zimp = column_space(Oimp.T, tol).basis
    combo = np.hstack([dec.Pi.T @ Zdiff, Zimp])
    if Zmat.shape[1]:
        Uobs = np.linalg.lstsq(combo, Zmat, rcond=None)[0]
    else:
        Uobs = np.zeros((combo.shape[1], 0))
    if Zimp.shape[1]:
        Uimp = np.linalg.lstsq(-Oimp.T, Zimp, rcond=None)[0]
    else:
        Uimp = np.zeros((Oimp.shape[0], 0))
    Sdiff = Zdiff.T @ dec.Adiff @ Zdiff
    Rdiff = Cd @ Zdiff
    return ModeObsData(dec=dec, C=C, Cdiff=Cd, Odiff=Odiff, Oimp=Oimp, W=W, Zmat=Zmat,
                       Zdiff=Zdiff, Zimp=Zimp, Uobs=Uobs, Sdiff=Sdiff, Rdiff=Rdiff, Uimp=Uimp)


def is_observable(S: np.ndarray, R: np.ndarray, tol: float = 1e-9) -> bool:
    r = S.shape[0]
    if r == 0:
        return True
    O = observability_matrix(S, R, r)
    s = np.linalg.svd(O, compute_uv=False)
    return s.size >= r and s[r - 1] > tol * max(1.0, s[0])


def _acker_observer(S: np.ndarray, c: np.ndarray, poles) -> np.ndarray:
    """Gain ``l`` (column) with ``eig(S - l c) = poles`` for one output row ``c``."""
    r = S.shape[0]
    coeffs = np.real(np.poly(poles))
    pS = np.zeros_like(S)
    for a in coeffs:
        pS = pS @ S + a * np.eye(r)
    O = observability_matrix(S, c.reshape(1, -1), r)
    er = np.zeros(r)
    er[-1] = 1.0
    return pS @ np.linalg.solve(O, er)


def place_observer(S, R, poles, seed: int = 0) -> np.ndarray:
    """Observer gain ``L`` with ``eig(S - L R) = poles``.

    One output: Ackermann's formula.  Several outputs: reduce to a single
    output row ``w^T R`` after making ``S`` cyclic with a random feedback.
    """
    S = np.atleast_2d(np.asarray(S, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    r, ny = S.shape[0], R.shape[0]
    poles = np.asarray(poles)
    if poles.size != r:
        raise GainDesignError(f"need {r} poles, got {poles.size}")
    if np.any(np.real(poles) >= 0):
        raise GainDesignError("observer poles must lie in the open left half-plane")
    if r == 0:
        return np.zeros((0, ny))
    if not is_observable(S, R):
        raise GainDesignError("reduced pair (Sdiff, Rdiff) is not observable")
    if ny == 1:
        return _acker_observer(S, R[0], poles).reshape(r, 1)
    rng = np.random.default_rng(seed)
    K0 = np.zeros((r, ny))
    for attempt in range(50):
        w = rng.standard_normal(ny)
        Sc = S - K0 @ R
        c = w @ R
        if is_observable(Sc, c.reshape(1, -1)):
            l = _acker_observer(Sc, c, poles)
            return K0 + np.outer(l, w)
        K0 = rng.standard_normal((r, ny))
    raise GainDesignError("could not reduce the multi-output pair to a single output")


def contraction_bound(S: np.ndarray, L: np.ndarray, R: np.ndarray, tau: float) -> float:
    """``||expm((S - L R) tau)|| * ||expm(-S tau)||``: relative error of the
    back-propagated Luenberger estimate after an interval of length ``tau``."""
    if S.shape[0] == 0:
        return 0.0
    try:
        return float(np.linalg.norm(expm(S - L @ R, tau), 2) * np.linalg.norm(expm(S, -tau), 2))
    except OverflowError:
        return float("inf")


def default_poles(r: int, base: float) -> np.ndarray:
    return base * (1.0 + 0.5 * np.arange(r))


def design_gain(data: ModeObsData, poles=None, target_eps: float | None = None,
                tau: float | None = None, max_doublings: int = 60, store: bool = True) -> np.ndarray:
    """Luenberger gain for the reduced system ``(Sdiff, Rdiff)``.

    With ``target_eps`` the poles are pushed left by factors of two until the
    end-of-interval bound :func:`contraction_bound` is at most ``target_eps``.
    The gain is returned and, unless ``store`` is false, kept on ``data``.
    """
    S, R = data.Sdiff, data.Rdiff
    r = S.shape[0]
    if r == 0:
        L = np.zeros((0, data.ny))
        if store:
            data.L = L
        return L
    if target_eps is None:
        if poles is None:
            raise GainDesignError("give either poles or target_eps")
        L = place_observer(S, R, np.atleast_1d(poles))
        if store:
            data.L = L
        return L
    if tau is None or tau <= 0:
        raise GainDesignError("target_eps needs the interval length tau > 0")
    if poles is not None:
        base_poles = np.atleast_1d(np.asarray(poles, dtype=float))
    else:
        base_poles = default_poles(r, -1.0)
    scale = 1.0
    for _ in range(max_doublings):
        if np.max(np.abs(base_poles)) * scale * tau > MAX_STIFFNESS:
            break
        L = place_observer(S, R, base_poles * scale)
        if contraction_bound(S, L, R, tau) <= target_eps:
            if store:
                data.L = L
            return L
        scale *= 2.0
    raise GainDesignError(f"target accuracy {target_eps} not reached")


def _rk4_steps(Acl: np.ndarray, tau: float, n_steps: int | None) -> int:
    rho = float(np.max(np.abs(np.linalg.eigvals(Acl)))) if Acl.size else 0.0
    need = int(np.ceil(tau * rho / RK4_STEP_RATIO)) if rho > 0 else 0
    return max(n_steps or 200, need)


def _rk4_matrices(Acl: np.ndarray, h: float):
    """Classical RK4 for ``z' = Acl z + u`` written as the linear recurrence
    ``z+ = P z + Q0 u(t) + Qm u(t + h/2) + Q1 u(t + h)``."""
    r = Acl.shape[0]
    eye = np.eye(r)
    H = h * Acl
    H2 = H @ H
    H3 = H2 @ H
    P = eye + H + H2 / 2.0 + H3 / 6.0 + H3 @ H / 24.0
    Q0 = h / 6.0 * (eye + H + H2 / 2.0 + H3 / 4.0)
    Qm = h / 6.0 * (4.0 * eye + 2.0 * H + H2 / 2.0)
    Q1 = h / 6.0 * eye
    return P, Q0, Qm, Q1


def estimate_zdiff(data: ModeObsData, ye: PwsTrajectory | Segment, t0: float, t1: float,
                   n_steps: int | None = None, L: np.ndarray | None = None) -> np.ndarray:
    """Luenberger estimate of ``z^diff`` at ``t0^+`` from ``y^e`` on ``(t0, t1)``.

    The observer copy starts from zero at ``t0^+``, is integrated by RK4 to
    ``t1^-`` and then propagated back by ``expm(-Sdiff (t1 - t0))``.  The
    step is refined so that ``h * rho(S - L R) <= 0.025``.
    """
    r = data.r_diff
    if r == 0:
        return np.zeros(0)
    L = data.L if L is None else np.atleast_2d(np.asarray(L, dtype=float))
    if L is None:
        raise GainDesignError("observer gain not designed")
    if n_steps is not None and n_steps < 20:
        raise ValueError("grid too coarse: at least 20 samples per interval are required")
    tau = t1 - t0
    S, R = data.Sdiff, data.Rdiff
    Acl = S - L @ R
    m = _rk4_steps(Acl, tau, n_steps)
    if m > MAX_RK4_STEPS:
        raise GainDesignError(f"gain too stiff for the interval: {m} RK4 steps needed")
    ts = np.linspace(t0, t1, 2 * m + 1)
    if isinstance(ye, PwsTrajectory):
        part = ye.restrict(t0, t1)
        Y = part.segments[0].values(ts) if len(part.segments) == 1 else part.sample(ts)
    else:
        Y = ye.values(ts)
    P, Q0, Qm, Q1 = _rk4_matrices(Acl, tau / m)
    forcing = Y[0:-1:2] @ (Q0 @ L).T + Y[1::2] @ (Qm @ L).T + Y[2::2] @ (Q1 @ L).T
    z = np.zeros(r)
    for f in forcing:
        z = P @ z + f
    return expm(S, -tau) @ z


class MultiplicativeNoise:
    """Relative uniform noise ``c -> c (1 + eps U(-1, 1))`` on each coefficient."""

    def __init__(self, eps: float, seed: int | None = None):
        if eps < 0:
            raise ValueError("eps must be nonnegative")
        self.eps = float(eps)
        self.seed = seed
        self.rng = np.random.default_rng(seed)

    def apply(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        return v * (1.0 + self.eps * self.rng.uniform(-1.0, 1.0, size=v.shape))

    def __repr__(self) -> str:
        return f"MultiplicativeNoise(eps={self.eps}, seed={self.seed})"


def stack_impulse(data: ModeObsData, eta: ImpulseRecord) -> np.ndarray:
    return eta.stacked(max(data.n - 1, 0), data.ny)


def extract_zimp(data: ModeObsData, eta: ImpulseRecord, noise: MultiplicativeNoise | None = None) -> np.ndarray:
    """``z^imp = Uimp^T eta`` from the output impulse record at ``t_k``."""
    if data.r_imp == 0:
        return np.zeros(0)
    v = stack_impulse(data, eta)
    if noise is not None:
        v = noise.apply(v)
    return data.Uimp.T @ v


def compose_zhat(data: ModeObsData, zdiff, zimp) -> np.ndarray:
    zdiff = np.asarray(zdiff, dtype=float).reshape(-1)
    zimp = np.asarray(zimp, dtype=float).reshape(-1)
    if zdiff.size != data.r_diff or zimp.size != data.r_imp:
        raise ValueError("component sizes do not match the mode's observability data")
    return data.Uobs.T @ np.concatenate([zdiff, zimp])


def ideal_z(data: ModeObsData, e_minus) -> np.ndarray:
    return data.Zmat.T @ np.asarray(e_minus, dtype=float)


def ideal_components(data: ModeObsData, e_minus) -> tuple[np.ndarray, np.ndarray]:
    """Exact ``(z^diff, z^imp)`` for a known ``e(t_k^-)``."""
    e = np.asarray(e_minus, dtype=float)
    return data.Zdiff.T @ data.dec.Pi @ e, data.Zimp.T @ e
