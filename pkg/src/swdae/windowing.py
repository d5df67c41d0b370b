"""Window-level machinery on ``[t_p, t_q)``.

The unobservable chain ``N_k`` (errors that produce zero output from
``t_k`` to ``t_q``) is computed backwards; from it the matrices that fold
the local estimates ``z_p, ..., z_{q-1}`` into a correction ``xi^left`` at
``t_p`` are built, together with the transition ``Phi_p^q`` that carries the
correction to ``t_q``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .daepair import expm
from .modeobs import ModeObsData, build
from .subspace import PIPELINE_TOL, Subspace, complement, image, intersect, preimage

MCONST_SAMPLES = 50


class CertificateError(RuntimeError):
    """A window fails the detectability certificate."""


class BudgetError(ValueError):
    pass


@dataclass
class Window:
    """Modes ``k = p, ..., q-1`` of a window with their interval lengths.

    ``durations[-1]`` may be shorter than the true interval when the window
    is truncated (computation-delay compensation).
    """

    p: int
    q: int
    mode_data: list[ModeObsData]
    durations: list[float]
    start: float = 0.0

    def __post_init__(self):
        if not self.q > self.p:
            raise ValueError(f"window needs p < q, got p={self.p}, q={self.q}")
        if len(self.mode_data) != self.q - self.p or len(self.durations) != self.q - self.p:
            raise ValueError("one mode datum and one duration per mode in the window")
        if any(d <= 0 for d in self.durations):
            raise ValueError("interval lengths must be positive")

    @property
    def n(self) -> int:
        return self.mode_data[0].n

    @property
    def length(self) -> float:
        return float(sum(self.durations))

    @property
    def end(self) -> float:
        return self.start + self.length


class ModeDataCache:
    """Builds :class:`ModeObsData` once per distinct mode object."""

    def __init__(self):
        self._data: dict[int, tuple[object, ModeObsData]] = {}

    def __call__(self, mode) -> ModeObsData:
        key = id(mode)
        hit = self._data.get(key)
        if hit is None or hit[0] is not mode:
            hit = (mode, build(mode))
            self._data[key] = hit
        return hit[1]


def make_window(sys, p: int, q: int, cache: ModeDataCache | None = None,
                end: float | None = None) -> Window:
    """Window over intervals ``p..q-1`` of ``sys``; ``end`` truncates it.

    A truncated window ends at ``end < t_q``; modes entirely after ``end``
    are dropped and the last kept mode is shortened.
    """
    if not (0 <= p < q <= sys.num_intervals):
        raise ValueError(f"window ({p}, {q}) outside the {sys.num_intervals} intervals of the system")
    cache = cache or ModeDataCache()
    a = float(sys.times[p])
    b = float(sys.times[q]) if end is None else float(end)
    if b > sys.times[q] + 1e-12:
        raise ValueError("truncation point beyond the window end")
    pieces = sys.pieces(a, b)
    data = [cache(sys.mode(k)) for _, _, k in pieces]
    durs = [e - s for s, e, _ in pieces]
    return Window(p=p, q=p + len(pieces), mode_data=data, durations=durs, start=a)


def _flow(d: ModeObsData, tau: float) -> np.ndarray:
    """``expm(A^diff tau) Pi``: transition across one mode interval."""
    return expm(d.dec.Adiff, tau) @ d.dec.Pi


def unobs_chain(window: Window) -> list[Subspace]:
    """``[N_p, ..., N_{q-1}]`` by the backward recursion
    ``N_{q-1} = W_{q-1}``, ``N_k = W_k & Pi_k^{-1} expm(-A_k^diff tau_k) N_{k+1}``."""
    data, taus = window.mode_data, window.durations
    m = len(data)
    chain: list[Subspace] = [None] * m  # type: ignore[list-item]
    chain[-1] = data[-1].W
    for j in range(m - 2, -1, -1):
        d = data[j]
        back = image(expm(d.dec.Adiff, -taus[j]), chain[j + 1], PIPELINE_TOL)
        chain[j] = intersect(d.W, preimage(d.dec.Pi, back, PIPELINE_TOL), PIPELINE_TOL)
    return chain


@dataclass
class WindowData:
    window: Window
    N: list[Subspace]
    M: list[np.ndarray]
    Theta: list[np.ndarray]
    U: list[np.ndarray]
    F: list[np.ndarray]
    Phi: list[np.ndarray]
    Ocal: np.ndarray
    c: float = field(default=float("nan"))
    alpha: float = field(default=float("nan"))

    @property
    def Phi_pq(self) -> np.ndarray:
        return self.Phi[-1]

    @property
    def z_sizes(self) -> list[int]:
        return [d.r for d in self.window.mode_data]

    def Nbasis(self, j: int = 0) -> np.ndarray:
        return self.N[j].basis


def build_window(window: Window) -> WindowData:
    """All matrices of the window; list index ``j`` refers to mode ``p + j``."""
    data, taus = window.mode_data, window.durations
    m, n = len(data), window.n
    N = unobs_chain(window)
    M: list[np.ndarray] = [None] * m  # type: ignore[list-item]
    Theta: list[np.ndarray] = [None] * m  # type: ignore[list-item]
    U: list[np.ndarray] = [None] * m  # type: ignore[list-item]
    F: list[np.ndarray] = [None] * m  # type: ignore[list-item]
    # the last mode reads z_{q-1} = Z_{q-1}^T e directly
    M[-1] = data[-1].Zmat
    Theta[-1] = np.zeros((n, 0))
    U[-1] = np.eye(M[-1].shape[1])
    F[-1] = U[-1]
    for j in range(m - 2, -1, -1):
        d = data[j]
        back_flow = expm(d.dec.Adiff, -taus[j])
        Theta[j] = complement(image(back_flow, N[j + 1], PIPELINE_TOL)).basis
        M[j] = complement(N[j]).basis
        gen = np.hstack([d.Zmat, d.dec.Pi.T @ Theta[j]])
        if M[j].shape[1]:
            U[j] = np.linalg.lstsq(gen, M[j], rcond=None)[0]
        else:
            U[j] = np.zeros((gen.shape[1], 0))
        block = scipy.linalg.block_diag(np.eye(d.r), Theta[j].T @ back_flow @ M[j + 1])
        F[j] = U[j].T @ block
    Phi = [np.eye(n)]
    for d, tau in zip(data, taus):
        Phi.append(_flow(d, tau) @ Phi[-1])
    # composed map from stacked (z_p, ..., z_{q-1}) to mu_p
    G = np.eye(data[-1].r)
    for j in range(m - 2, -1, -1):
        G = F[j] @ scipy.linalg.block_diag(np.eye(data[j].r), G)
    Ocal = M[0] @ G
    wd = WindowData(window=window, N=N, M=M, Theta=Theta, U=U, F=F, Phi=Phi, Ocal=Ocal)
    wd.alpha = _alpha(wd)
    wd.c = _budget_constant(wd)
    return wd


def _check_zhats(wd: WindowData, zhats) -> list[np.ndarray]:
    sizes = wd.z_sizes
    if len(zhats) != len(sizes):
        raise ValueError(f"expected {len(sizes)} local estimates, got {len(zhats)}")
    out = []
    for j, (z, r) in enumerate(zip(zhats, sizes)):
        z = np.asarray(z, dtype=float).reshape(-1)
        if z.size != r:
            raise ValueError(f"estimate {j} has length {z.size}, expected {r}")
        out.append(z)
    return out


def correction_left(wd: WindowData, zhats) -> np.ndarray:
    """``xi^left = M_p mu_p`` with ``mu_{q-1} = z_{q-1}`` and
    ``mu_k = F_k (z_k; mu_{k+1})``."""
    zs = _check_zhats(wd, zhats)
    mu = zs[-1]
    for j in range(len(zs) - 2, -1, -1):
        mu = wd.F[j] @ np.concatenate([zs[j], mu])
    return wd.M[0] @ mu


def correction(wd: WindowData, zhats, Phi: np.ndarray | None = None) -> np.ndarray:
    """``xi = Phi_p^q xi^left``.  ``Phi`` overrides the transition, e.g. the
    full-window transition when ``wd`` describes a truncated window."""
    Phi = wd.Phi_pq if Phi is None else Phi
    return Phi @ correction_left(wd, zhats)


def _alpha(wd: WindowData) -> float:
    Nb = wd.N[0].basis
    if Nb.shape[1] == 0:
        return 0.0
    return float(np.linalg.norm(wd.Phi_pq @ Nb, 2))


def _budget_constant(wd: WindowData) -> float:
    rows = [d.Zmat.T @ Phi for d, Phi in zip(wd.window.mode_data, wd.Phi[:-1])]
    stack = np.vstack(rows)
    if stack.size == 0 or wd.Ocal.size == 0:
        return 0.0
    return float(np.linalg.norm(wd.Phi_pq @ wd.Ocal, 2) * np.linalg.norm(stack, 2))


@dataclass(frozen=True)
class Certificate:
    alpha: float
    Mconst: float
    detectable: bool


def detect_certificate(wd: WindowData, samples: int = MCONST_SAMPLES) -> Certificate:
    """Contraction ``alpha = ||Phi_p^q|N_p||`` and sampled overshoot ``Mconst``.

    ``Mconst`` is the largest ``||Phi_p^t|N_p||`` over ``samples`` points in
    each mode interval and the window end; it is a lower bound of the true
    supremum.
    """
    Nb = wd.N[0].basis
    if Nb.shape[1] == 0:
        return Certificate(0.0, 0.0, True)
    Mconst = 0.0
    for d, tau, Phi in zip(wd.window.mode_data, wd.window.durations, wd.Phi[:-1]):
        start = d.dec.Pi @ Phi @ Nb
        for s in np.linspace(0.0, tau, samples):
            Mconst = max(Mconst, float(np.linalg.norm(expm(d.dec.Adiff, s) @ start, 2)))
    Mconst = max(Mconst, float(np.linalg.norm(Nb, 2)), wd.alpha)
    return Certificate(wd.alpha, Mconst, wd.alpha < 1.0)


@dataclass(frozen=True)
class Uniformity:
    ok: bool
    alpha_sup: float
    M_sup: float


def uniformity_check(certs, alpha_star: float, M_star: float | None = None,
                     tol: float = 1e-9) -> Uniformity:
    """``sup alpha_i <= alpha* < 1`` and (optionally) ``sup M_i <= M*``."""
    certs = list(certs)
    a = max((c.alpha for c in certs), default=0.0)
    Ms = max((c.Mconst for c in certs), default=0.0)
    ok = alpha_star < 1.0 and a <= alpha_star + tol
    if M_star is not None:
        ok = ok and Ms <= M_star + tol
    return Uniformity(ok, a, Ms)


@dataclass(frozen=True)
class Budget:
    c: float
    alpha: float
    alpha_hat: float

    @property
    def eps_max(self) -> float:
        if self.c == 0.0:
            return float("inf")
        return (self.alpha_hat - self.alpha) / self.c


def error_budget(wd: WindowData, alpha_hat: float) -> Budget:
    """``c = ||Phi_p^q Ocal|| * ||[Z_p^T; Z_{p+1}^T Phi_p^{p+1}; ...]||`` and
    ``eps_max = (alpha_hat - alpha) / c``."""
    return budget_from(wd.c, wd.alpha, alpha_hat)


def budget_from(c: float, alpha: float, alpha_hat: float) -> Budget:
    if not alpha_hat < 1.0:
        raise BudgetError(f"alpha_hat must be < 1, got {alpha_hat}")
    if not alpha_hat > alpha:
        raise BudgetError(f"alpha_hat = {alpha_hat} does not exceed the window contraction alpha = {alpha}")
    return Budget(c=float(c), alpha=float(alpha), alpha_hat=float(alpha_hat))
