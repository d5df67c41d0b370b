"""Impulsive observer: a system copy per window, corrected at window ends.

For window ``i`` on ``[t_p, t_q)`` the copy is simulated from
``xhat(t_p^-)``; the mismatch ``y^e = yhat - y`` (smooth part and impulses)
yields local estimates ``zhat_k``; these are folded into ``xi_i`` and the
next copy starts from ``xhat(t_q^-) - xi_i``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import modeobs
from .modeobs import ModeObsData, MultiplicativeNoise
from .simulator import SimResult, SwitchedSystem, solve_homogeneous, solve_with_input
from .trajectory import PwsTrajectory
from .windowing import (
    BudgetError,
    CertificateError,
    ModeDataCache,
    WindowData,
    build_window,
    correction_left,
    detect_certificate,
    make_window,
)


class ConfigError(ValueError):
    pass


class BudgetWarning(RuntimeWarning):
    pass


@dataclass
class ObserverConfig:
    """Observer settings.

    Parameters
    ----------
    windows
        ``(p_i, q_i)`` interval-index pairs with ``q_{i-1} = p_i``.
    xhat0
        Initial estimate ``xhat(t_{p_0}^-)``.
    alpha_hat
        Targeted contraction per window, in ``(alpha_i, 1)``.
    poles
        Optional explicit observer poles keyed by the index of a mode in
        ``sys.modes``; modes without an entry get a gain from ``target_eps``.
    target_eps
        ``"auto"`` derives the accuracy of each local estimate from the error
        budget of the windows it belongs to; a number fixes it.
    noise
        Optional measurement noise applied to the output impulses.
    delay
        Computation delay: only data on ``[t_p, t_q - delay)`` is used.
    strict_budget
        Raise (rather than warn) when the error budget cannot be met.
    """

    windows: list[tuple[int, int]]
    xhat0: np.ndarray
    alpha_hat: float = 0.7
    poles: dict[int, list[float]] | None = None
    target_eps: float | str = "auto"
    noise: MultiplicativeNoise | None = None
    delay: float = 0.0
    strict_budget: bool = True
    zdiff_steps: int = 200
    fallback_eps: float = 1e-3

    def __post_init__(self):
        self.xhat0 = np.asarray(self.xhat0, dtype=float).reshape(-1)
        self.windows = [(int(p), int(q)) for p, q in self.windows]
        if not self.windows:
            raise ConfigError("at least one window is required")
        for (p0, q0), (p1, q1) in zip(self.windows, self.windows[1:]):
            if q0 != p1:
                raise ConfigError(f"windows must be consecutive, got ({p0}, {q0}) then ({p1}, {q1})")
        for p, q in self.windows:
            if not q > p:
                raise ConfigError(f"window ({p}, {q}) is empty")
        if self.delay < 0:
            raise ConfigError("delay must be nonnegative")
        if isinstance(self.target_eps, str) and self.target_eps != "auto":
            raise ConfigError("target_eps must be a positive number or 'auto'")


@dataclass
class CorrectionRecord:
    t: float
    xi: np.ndarray
    xi_left: np.ndarray


@dataclass
class ObserverRun:
    """Result of :func:`run`.

    ``xhat`` concatenates the system copies, so its left limit at a window
    end ``t_q`` is the copy's value before the correction; the corrected
    left limits ``xhat(t_q^-) - xi`` are listed in ``xhat_left`` and are the
    initial values of the next copies.
    """

    xhat: PwsTrajectory
    corrections: list[CorrectionRecord]
    xhat_left: list[tuple[float, np.ndarray]]
    error_log: list[tuple[float, float]] = field(default_factory=list)
    peak_log: list[tuple[float, float, float]] = field(default_factory=list)
    zhat_log: list[tuple[int, np.ndarray]] = field(default_factory=list)
    certificates: list = field(default_factory=list)
    budgets: list = field(default_factory=list)
    budget_ok: bool = True

    def errors(self) -> np.ndarray:
        return np.array([e for _, e in self.error_log])


def _simulate(sys: SwitchedSystem, x0, window, u: PwsTrajectory | None, grid_step=None) -> SimResult:
    if u is None or sys.nu == 0:
        return solve_homogeneous(sys, x0, window)
    return solve_with_input(sys, x0, u.restrict(*window), window, grid_step=grid_step)


class _Plan:
    """Offline part: windows, certificates, budgets and gains."""

    def __init__(self, sys: SwitchedSystem, cfg: ObserverConfig):
        self.sys = sys
        self.cfg = cfg
        cache = ModeDataCache()
        self.full: list[WindowData] = []
        self.used: list[WindowData] = []
        self.certs = []
        self.budgets = []
        self.budget_ok = True
        for p, q in cfg.windows:
            wf = build_window(make_window(sys, p, q, cache))
            if cfg.delay > 0:
                if cfg.delay >= wf.window.length:
                    raise ConfigError(
                        f"delay {cfg.delay} is not shorter than the window [{wf.window.start}, {wf.window.end})")
                wu = build_window(make_window(sys, p, q, cache, end=wf.window.end - cfg.delay))
            else:
                wu = wf
            cert = detect_certificate(wu)
            if not cert.detectable:
                raise CertificateError(f"window ({p}, {q}) is not certified detectable: alpha = {cert.alpha:.6g}")
            self.full.append(wf)
            self.used.append(wu)
            self.certs.append(cert)
        self._design_gains()

    def _eps_required(self) -> list[float]:
        cfg = self.cfg
        out, bad = [], []
        for wd in self.used:
            if wd.alpha >= cfg.alpha_hat:
                bad.append(wd)
                out.append(cfg.fallback_eps)
            else:
                out.append((cfg.alpha_hat - wd.alpha) / wd.c if wd.c > 0 else np.inf)
        if bad:
            worst = max(bad, key=lambda wd: wd.alpha)
            self._budget_fail(f"alpha_hat = {cfg.alpha_hat} does not exceed the window contraction on "
                              f"{len(bad)} window(s); largest alpha = {worst.alpha:.6g} on "
                              f"[{worst.window.start}, {worst.window.end})")
        return out

    def _budget_fail(self, msg: str) -> None:
        self.budget_ok = False
        if self.cfg.strict_budget:
            raise BudgetError(msg)
        warnings.warn(msg, BudgetWarning, stacklevel=3)

    @staticmethod
    def _key(mode_idx: int, tau: float) -> tuple[int, float]:
        return (mode_idx, round(float(tau), 12))

    def _design_gains(self) -> None:
        cfg, sys = self.cfg, self.sys
        eps_req = self._eps_required()
        need: dict[tuple[int, float], float] = {}
        data_of: dict[tuple[int, float], ModeObsData] = {}
        for wd, eps in zip(self.used, eps_req):
            for j, (d, tau) in enumerate(zip(wd.window.mode_data, wd.window.durations)):
                key = self._key(sys.sequence[wd.window.p + j], tau)
                need[key] = min(need.get(key, np.inf), eps)
                data_of[key] = d
        self.gains: dict[tuple[int, float], np.ndarray] = {}
        self.eps_gain: dict[tuple[int, float], float] = {}
        for key, eps in need.items():
            d = data_of[key]
            mode_idx, tau = key
            if d.r_diff == 0:
                self.gains[key] = np.zeros((0, d.ny))
                self.eps_gain[key] = 0.0
                continue
            if cfg.poles is not None and mode_idx in cfg.poles:
                L = modeobs.design_gain(d, poles=cfg.poles[mode_idx], store=False)
            else:
                target = eps if cfg.target_eps == "auto" else float(cfg.target_eps)
                kappa = d.eps_gain
                if kappa > 0 and np.isfinite(target):
                    target = target / kappa
                if not np.isfinite(target):
                    target = 0.5
                L = modeobs.design_gain(d, target_eps=target, tau=tau, store=False)
            self.gains[key] = L
            self.eps_gain[key] = modeobs.contraction_bound(d.Sdiff, L, d.Rdiff, tau)
        self._check_budget()

    def _check_budget(self) -> None:
        cfg, sys = self.cfg, self.sys
        noise_eps = cfg.noise.eps if cfg.noise is not None else 0.0
        for wd in self.used:
            eps_k = []
            for j, (d, tau) in enumerate(zip(wd.window.mode_data, wd.window.durations)):
                key = self._key(sys.sequence[wd.window.p + j], tau)
                e = max(self.eps_gain[key] if d.r_diff else 0.0, noise_eps if d.r_imp else 0.0)
                eps_k.append(d.eps_gain * e)
            eps = max(eps_k, default=0.0)
            slack = cfg.alpha_hat - wd.alpha
            self.budgets.append({"c": wd.c, "alpha": wd.alpha, "eps": eps, "slack": slack})
            if slack > 0 and wd.c * eps > slack * (1 + 1e-9):
                self._budget_fail(f"error budget violated on [{wd.window.start}, {wd.window.end}): "
                                  f"c * eps = {wd.c * eps:.4g} > alpha_hat - alpha = {slack:.4g}")

    def gain(self, k: int, tau: float) -> np.ndarray:
        return self.gains[self._key(self.sys.sequence[k], tau)]


def _zhats(plan: _Plan, wd: WindowData, ye: PwsTrajectory, cfg: ObserverConfig):
    zs = []
    t = wd.window.start
    for j, (d, tau) in enumerate(zip(wd.window.mode_data, wd.window.durations)):
        k = wd.window.p + j
        t1 = t + tau
        if d.r == 0:
            zs.append(np.zeros(0))
            t = t1
            continue
        zd = modeobs.estimate_zdiff(d, ye, t, t1, n_steps=cfg.zdiff_steps, L=plan.gain(k, tau))
        zi = modeobs.extract_zimp(d, ye.impulse_at(t), cfg.noise)
        zs.append(modeobs.compose_zhat(d, zd, zi))
        t = t1
    return zs


def run(sys: SwitchedSystem, u: PwsTrajectory | None, y: PwsTrajectory, cfg: ObserverConfig,
        truth: PwsTrajectory | None = None, x0: np.ndarray | None = None,
        grid_step: float | None = None) -> ObserverRun:
    """Run the observer on recorded plant output ``y``.

    ``truth`` (the plant state) and ``x0`` (the plant's ``x(t_{p_0}^-)``) are
    optional and used only for the error logs.
    """
    if cfg.xhat0.shape[0] != sys.n:
        raise ConfigError(f"xhat0 must have length {sys.n}")
    plan = _Plan(sys, cfg)
    t_first = float(sys.times[cfg.windows[0][0]])
    t_last = float(sys.times[cfg.windows[-1][1]])
    if y.start > t_first + 1e-12 or y.end < t_last - 1e-12:
        raise ConfigError(f"output record [{y.start}, {y.end}) does not cover the windows [{t_first}, {t_last})")
    xhat_minus = cfg.xhat0.copy()
    pieces, corrections, left, zlog, elog, peaks = [], [], [], [], [], []
    if x0 is not None:
        elog.append((t_first, float(np.linalg.norm(xhat_minus - np.asarray(x0, dtype=float)))))
    for wf, wu in zip(plan.full, plan.used):
        a, b = wf.window.start, wf.window.end
        copy = _simulate(sys, xhat_minus, (a, b), u, grid_step)
        ye = copy.y - y.restrict(a, b)
        zs = _zhats(plan, wu, ye, cfg)
        for j, z in enumerate(zs):
            zlog.append((wu.window.p + j, z))
        xi_left = correction_left(wu, zs)
        xi = wf.Phi_pq @ xi_left
        before = copy.x.eval_left(b)
        xhat_minus = before - xi
        corrections.append(CorrectionRecord(b, xi, xi_left))
        left.append((b, xhat_minus.copy()))
        pieces.append(copy.x)
        if truth is not None:
            e_end = float(np.linalg.norm(xhat_minus - truth.eval_left(b)))
            elog.append((b, e_end))
            ts = copy.x.grid((b - a) / 200.0)
            dev = np.linalg.norm(copy.x.sample(ts) - truth.restrict(a, b).sample(ts), axis=1)
            peaks.append((a, b, float(dev.max())))
    xhat = pieces[0]
    for part in pieces[1:]:
        xhat = xhat.concat(part)
    return ObserverRun(xhat=xhat, corrections=corrections, xhat_left=left, error_log=elog,
                       peak_log=peaks, zhat_log=zlog, certificates=plan.certs,
                       budgets=plan.budgets, budget_ok=plan.budget_ok)


def run_delayed(sys: SwitchedSystem, u: PwsTrajectory | None, y: PwsTrajectory, cfg: ObserverConfig,
                **kwargs) -> ObserverRun:
    """:func:`run` with ``cfg.delay > 0``: data on ``[t_p, t_q - delay)`` only."""
    if cfg.delay <= 0:
        raise ConfigError("run_delayed needs a positive delay")
    return run(sys, u, y, cfg, **kwargs)


def periodic_windows(sys: SwitchedSystem, per_window: int | None = None) -> list[tuple[int, int]]:
    """Consecutive windows of ``per_window`` intervals (one period by default)."""
    if per_window is None:
        if sys.period is None:
            raise ConfigError("system is not periodic; give the window length in intervals")
        per_window = len(sys.period[0])
    m = sys.num_intervals // per_window
    return [(i * per_window, (i + 1) * per_window) for i in range(m)]
