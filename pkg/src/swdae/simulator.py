"""Exact distributional solutions of switched linear DAEs.

At every mode start the state jumps by the consistency projector, Dirac
impulses are read off the impulse matrix, and in between the state follows
the flow ``expm(Adiff t)``.  :func:`brute_force_oracle` re-derives the same
trajectory in quasi-Weierstrass coordinates with fixed-step RK4 and is used
as an independent check.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np
from scipy.integrate import solve_ivp

from .daepair import PairDecomposition, decompose, expm
from .trajectory import (
    FlowSegment,
    ImpulseRecord,
    PwsTrajectory,
    SampledSegment,
    same_time,
)


class Mode:
    """One subsystem ``(E, A, B, C, D)``; the pair decomposition is cached."""

    def __init__(self, E, A, B=None, C=None, D=None, name: str | None = None):
        self.E = np.atleast_2d(np.asarray(E, dtype=float))
        self.A = np.atleast_2d(np.asarray(A, dtype=float))
        n = self.E.shape[0]
        if self.E.shape != (n, n) or self.A.shape != (n, n):
            raise ValueError(f"E and A must be {n}x{n}")
        self.B = np.zeros((n, 0)) if B is None else np.asarray(B, dtype=float).reshape(n, -1)
        self.C = np.zeros((0, n)) if C is None else np.atleast_2d(np.asarray(C, dtype=float))
        if self.C.shape[1] != n:
            raise ValueError(f"C must have {n} columns")
        ny, nu = self.C.shape[0], self.B.shape[1]
        self.D = np.zeros((ny, nu)) if D is None else np.asarray(D, dtype=float).reshape(ny, nu)
        self.name = name
        for M in (self.E, self.A, self.B, self.C, self.D):
            M.setflags(write=False)

    @property
    def n(self) -> int:
        return self.E.shape[0]

    @property
    def ny(self) -> int:
        return self.C.shape[0]

    @property
    def nu(self) -> int:
        return self.B.shape[1]

    @cached_property
    def dec(self) -> PairDecomposition:
        return decompose(self.E, self.A)

    def __repr__(self) -> str:
        return f"Mode({self.name or ''} n={self.n}, ny={self.ny}, nu={self.nu})"


class SwitchedSystem:
    """Switched DAE with known switching signal on ``[times[0], times[-1])``.

    Interval ``k`` is ``[times[k], times[k+1])`` with subsystem
    ``modes[sequence[k]]``.
    """

    def __init__(self, modes: Sequence[Mode], sequence: Sequence[int], times: Sequence[float]):
        self.modes = list(modes)
        self.sequence = [int(i) for i in sequence]
        self.times = np.asarray(times, dtype=float)
        if not self.modes:
            raise ValueError("at least one mode is required")
        if len(self.times) != len(self.sequence) + 1:
            raise ValueError("need one more time than mode-sequence entries")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("switching times must be strictly increasing (no zero-duration modes)")
        dims = {(m.n, m.ny, m.nu) for m in self.modes}
        if len(dims) != 1:
            raise ValueError(f"modes disagree on (n, ny, nu): {sorted(dims)}")
        for i in self.sequence:
            if not 0 <= i < len(self.modes):
                raise ValueError(f"mode index {i} out of range")
        self.n, self.ny, self.nu = dims.pop()
        self.period: tuple | None = None

    @classmethod
    def periodic(cls, modes, cycle: Sequence[tuple[int, float]], repeats: int, t0: float = 0.0):
        seq, durs = [], []
        for _ in range(repeats):
            for m, d in cycle:
                seq.append(m)
                durs.append(float(d))
        times = t0 + np.concatenate([[0.0], np.cumsum(durs)])
        sys = cls(modes, seq, times)
        sys.period = (tuple((int(m), float(d)) for m, d in cycle), repeats)
        return sys

    @property
    def num_intervals(self) -> int:
        return len(self.sequence)

    @property
    def durations(self) -> np.ndarray:
        return np.diff(self.times)

    def mode(self, k: int) -> Mode:
        return self.modes[self.sequence[k]]

    def interval_index(self, t: float) -> int:
        """Index ``k`` with ``times[k] <= t < times[k+1]``."""
        k = int(np.searchsorted(self.times, t, side="right")) - 1
        if k + 1 < len(self.times) and same_time(t, self.times[k + 1]):
            k += 1
        if not 0 <= k < self.num_intervals:
            raise ValueError(f"t={t} outside the switching horizon [{self.times[0]}, {self.times[-1]})")
        return k

    def pieces(self, a: float, b: float) -> list[tuple[float, float, int]]:
        """Mode pieces ``(start, end, k)`` covering ``[a, b)``."""
        if not b > a:
            raise ValueError(f"empty window [{a}, {b})")
        if b > self.times[-1] and not same_time(b, self.times[-1]):
            raise ValueError(f"window end {b} beyond horizon {self.times[-1]}")
        out = []
        t = a
        k = self.interval_index(a)
        while t < b and not same_time(t, b):
            end = min(self.times[k + 1], b)
            out.append((t, end, k))
            t = end
            k += 1
        return out


@dataclass(frozen=True)
class SimResult:
    x: PwsTrajectory
    y: PwsTrajectory

    def x_left(self, t: float) -> np.ndarray:
        return self.x.eval_left(t)


def state_impulse(dec: PairDecomposition, x_minus, x_plus_alg=None) -> list[np.ndarray]:
    """Coefficients of ``delta^{(j)}`` in the state, ``-(Eimp)^{j+1} (x^- - x^+_alg)``."""
    n = dec.n
    v = np.asarray(x_minus, dtype=float)
    if x_plus_alg is not None:
        v = v - x_plus_alg
    coeffs = []
    P = dec.Eimp.copy()
    for _ in range(max(n - 1, 0)):
        coeffs.append(-(P @ v))
        P = P @ dec.Eimp
    return coeffs


def solve_homogeneous(sys: SwitchedSystem, x0, window: tuple[float, float] | None = None) -> SimResult:
    """Solution of ``E x' = A x``, ``y = C x`` on ``[a, b)`` with ``x(a^-) = x0``."""
    a, b = window if window is not None else (sys.times[0], sys.times[-1])
    x_minus = np.asarray(x0, dtype=float).reshape(-1)
    if x_minus.shape[0] != sys.n:
        raise ValueError(f"x0 must have length {sys.n}")
    xsegs, ysegs, ximps, yimps = [], [], [], []
    for start, end, k in sys.pieces(a, b):
        mode = sys.mode(k)
        dec = mode.dec
        x_plus = dec.Pi @ x_minus
        xc = state_impulse(dec, x_minus)
        ximps.append(ImpulseRecord(start, tuple(xc)))
        yimps.append(ImpulseRecord(start, tuple(mode.C @ c for c in xc)))
        seg = FlowSegment(start, end, dec.Adiff, x_plus)
        xsegs.append(seg)
        ysegs.append(seg.mapped(mode.C))
        x_minus = expm(dec.Adiff, end - start) @ x_plus
    x = PwsTrajectory(sys.n, tuple(xsegs), tuple(ximps))
    y = PwsTrajectory(sys.ny, tuple(ysegs), tuple(yimps))
    return SimResult(x, y)


def transition(sys: SwitchedSystem, a: float, b: float) -> np.ndarray:
    """Transition matrix from ``x(a^-)`` to ``x(b^-)`` of the homogeneous DAE."""
    Phi = np.eye(sys.n)
    for start, end, k in sys.pieces(a, b):
        dec = sys.mode(k).dec
        Phi = expm(dec.Adiff, end - start) @ dec.Pi @ Phi
    return Phi


def _useg(u: PwsTrajectory, t: float, end: float):
    # the value at a mode end is the left limit of the input
    return u._seg_left(t) if same_time(t, end) else u.segment_at(t)


def _input_derivs(u: PwsTrajectory, t: float, order: int, end: float) -> list[np.ndarray]:
    seg = _useg(u, t, end)
    out = [seg.value(t)]
    for j in range(1, order + 1):
        out.append(seg.derivative(t, j))
    return out


class ResidualError(RuntimeError):
    pass


def solve_with_input(sys: SwitchedSystem, x0, u: PwsTrajectory,
                     window: tuple[float, float] | None = None,
                     grid_step: float | None = None,
                     residual_tol: float = 1e-6) -> SimResult:
    """Solution with a smooth (per mode interval) input ``u``.

    In quasi-Weierstrass coordinates ``x = T1 v + T2 w`` the differential part
    ``v' = J v + B1 u`` is integrated numerically and the algebraic part is
    ``w = -sum_i N^i B2 u^{(i)}``.
    """
    a, b = window if window is not None else (sys.times[0], sys.times[-1])
    if u.impulses:
        raise ValueError("impulsive inputs are not supported")
    if u.dim != sys.nu:
        raise ValueError(f"input has dimension {u.dim}, system expects {sys.nu}")
    x_minus = np.asarray(x0, dtype=float).reshape(-1)
    xsegs, ysegs, ximps, yimps = [], [], [], []
    for start, end, k in sys.pieces(a, b):
        mode = sys.mode(k)
        dec = mode.dec
        q = dec.qwf
        n1, nu_idx = q.n1, q.nilpotency_index
        T1, T2 = q.T[:, :n1], q.T[:, n1:]
        SB = q.S @ mode.B
        B1, B2 = SB[:n1], SB[n1:]
        Tinv = np.linalg.inv(q.T)
        Npow = [np.linalg.matrix_power(q.N, i) for i in range(max(nu_idx, 1) + 1)]

        def w_of(t):
            d = _input_derivs(u, t, nu_idx, end)
            w = np.zeros(q.n2)
            for i in range(nu_idx):
                w -= Npow[i] @ B2 @ d[i]
            return w, d

        def wdot_of(t):
            d = _input_derivs(u, t, nu_idx + 1, end)
            w = np.zeros(q.n2)
            for i in range(nu_idx):
                w -= Npow[i] @ B2 @ d[i + 1]
            return w

        w_plus, _ = w_of(start)
        v_plus = (Tinv @ x_minus)[:n1]
        x_plus = T1 @ v_plus + T2 @ w_plus
        xc = state_impulse(dec, x_minus, x_plus)
        ximps.append(ImpulseRecord(start, tuple(xc)))
        yimps.append(ImpulseRecord(start, tuple(mode.C @ c for c in xc)))

        step = grid_step or (end - start) / 200.0
        npts = max(4, int(np.ceil((end - start) / step - 1e-9)) + 1)
        ts = np.linspace(start, end, npts)
        if n1:
            sol = solve_ivp(lambda t, v: q.J @ v + B1 @ _useg(u, t, end).value(t),
                            (start, end), v_plus, method="DOP853", t_eval=ts,
                            rtol=1e-12, atol=1e-13)
            if not sol.success:
                raise RuntimeError(f"integration failed on [{start}, {end}): {sol.message}")
            V = sol.y.T
        else:
            V = np.zeros((npts, 0))
        W = np.zeros((npts, q.n2))
        for i, t in enumerate(ts):
            W[i] = w_of(t)[0]
        X = V @ T1.T + W @ T2.T
        # DAE residual with the analytic derivative of the reconstruction
        scale = 1.0 + np.max(np.abs(X))
        for i, t in enumerate(ts[:-1]):
            ut = _useg(u, t, end).value(t)
            vdot = q.J @ V[i] + B1 @ ut if n1 else np.zeros(0)
            xdot = T1 @ vdot + T2 @ wdot_of(t)
            res = mode.E @ xdot - mode.A @ X[i] - mode.B @ ut
            if np.max(np.abs(res)) > residual_tol * scale:
                raise ResidualError(f"DAE residual {np.max(np.abs(res)):.3g} at t={t}")
        xseg = SampledSegment(ts, X)
        U = np.array([_useg(u, t, end).value(t) for t in ts]).reshape(npts, -1)
        xsegs.append(xseg)
        ysegs.append(SampledSegment(ts, X @ mode.C.T + U @ mode.D.T))
        x_minus = X[-1]
    x = PwsTrajectory(sys.n, tuple(xsegs), tuple(ximps))
    y = PwsTrajectory(sys.ny, tuple(ysegs), tuple(yimps))
    return SimResult(x, y)


def brute_force_oracle(sys: SwitchedSystem, x0, window: tuple[float, float] | None = None,
                       step: float = 1e-3) -> SimResult:
    """Independent check: RK4 on the ``J`` block in QWF coordinates, the
    algebraic block set to zero, jumps by projection onto the first block."""
    if step <= 0:
        raise ValueError("step must be positive")
    a, b = window if window is not None else (sys.times[0], sys.times[-1])
    x_minus = np.asarray(x0, dtype=float).reshape(-1)
    xsegs, ysegs, ximps, yimps = [], [], [], []
    for start, end, k in sys.pieces(a, b):
        mode = sys.mode(k)
        q = mode.dec.qwf
        n1 = q.n1
        Tinv = np.linalg.inv(q.T)
        T1, T2 = q.T[:, :n1], q.T[:, n1:]
        z = Tinv @ x_minus
        v, w = z[:n1], z[n1:]
        coeffs = []
        Np = q.N.copy()
        for _ in range(max(sys.n - 1, 0)):
            coeffs.append(-(T2 @ (Np @ w)))
            Np = Np @ q.N
        ximps.append(ImpulseRecord(start, tuple(coeffs)))
        yimps.append(ImpulseRecord(start, tuple(mode.C @ c for c in coeffs)))
        m = max(2, int(np.ceil((end - start) / step - 1e-9)))
        ts = np.linspace(start, end, m + 1)
        h = ts[1] - ts[0]
        J = q.J
        vs = np.empty((m + 1, n1))
        vs[0] = v
        for i in range(m):
            k1 = J @ v
            k2 = J @ (v + 0.5 * h * k1)
            k3 = J @ (v + 0.5 * h * k2)
            k4 = J @ (v + h * k3)
            v = v + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
            vs[i + 1] = v
        X = vs @ T1.T
        xsegs.append(SampledSegment(ts, X))
        ysegs.append(SampledSegment(ts, X @ mode.C.T))
        x_minus = X[-1]
    x = PwsTrajectory(sys.n, tuple(xsegs), tuple(ximps))
    y = PwsTrajectory(sys.ny, tuple(ysegs), tuple(yimps))
    return SimResult(x, y)
