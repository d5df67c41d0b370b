"""PNG figures of trajectories and estimates (non-interactive Agg backend)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .trajectory import PwsTrajectory  # noqa: E402

TRUE_COLOR = "tab:blue"
EST_COLOR = "tab:red"


def _panel_height(n: int) -> tuple[float, float]:
    return 7.0, min(2.0 * n + 0.6, 12.0)


def _draw_impulses(ax, traj: PwsTrajectory, comp: int, color: str, scale: float) -> None:
    # order-0 Dirac coefficients as vertical arrows from zero
    for rec in traj.impulses:
        if rec.order < 1:
            continue
        h = float(rec.coeffs[0][comp])
        if h == 0.0:
            continue
        ax.annotate("", xy=(rec.time, h * scale), xytext=(rec.time, 0.0),
                    arrowprops=dict(arrowstyle="-|>", color=color, lw=1.2))
        # annotations do not enter the data limits
        ax.update_datalim([(rec.time, 0.0), (rec.time, h * scale)])
        ax.autoscale_view()


def _series(traj: PwsTrajectory, step: float):
    ts = traj.grid(step)
    X = traj.sample(ts)
    # break the line at jumps: insert the left limit before each interior boundary
    out_t, out_x = [], []
    bounds = traj.boundaries[1:-1]
    bi = 0
    for t, x in zip(ts, X):
        while bi < len(bounds) and bounds[bi] <= t + 1e-12:
            b = bounds[bi]
            out_t.append(b)
            out_x.append(traj.eval_left(b))
            out_t.append(np.nan)
            out_x.append(np.full(traj.dim, np.nan))
            bi += 1
        out_t.append(t)
        out_x.append(x)
    return np.asarray(out_t), np.asarray(out_x)


def plot_states(path, x: PwsTrajectory, xhat: PwsTrajectory | None = None,
                step: float = 0.01, names: list[str] | None = None,
                title: str | None = None, impulse_scale: float = 1.0) -> Path:
    """One panel per component: ``x`` in blue and ``xhat`` in red.

    Dirac impulses are drawn as arrows whose height is the impulse weight
    times ``impulse_scale``.
    """
    path = Path(path)
    n = x.dim
    names = names or [f"x_{i + 1}" for i in range(n)]
    fig, axes = plt.subplots(n, 1, sharex=True, figsize=_panel_height(n), squeeze=False)
    tx, X = _series(x, step)
    if xhat is not None:
        th, H = _series(xhat, step)
    for i, ax in enumerate(axes[:, 0]):
        ax.plot(tx, X[:, i], color=TRUE_COLOR, lw=1.2, label=names[i])
        _draw_impulses(ax, x, i, TRUE_COLOR, impulse_scale)
        if xhat is not None:
            ax.plot(th, H[:, i], color=EST_COLOR, lw=1.0, ls="--", label="estimate")
            _draw_impulses(ax, xhat, i, EST_COLOR, impulse_scale)
        ax.set_ylabel(names[i])
        ax.grid(alpha=0.3)
    axes[0, 0].legend(loc="upper right", fontsize=8)
    axes[-1, 0].set_xlabel("t")
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def plot_errors(path, times, errors, alpha_hat: float | None = None, title: str | None = None) -> Path:
    """Error norms at window boundaries on a log scale, with the
    ``alpha_hat``-geometric reference line."""
    path = Path(path)
    times = np.asarray(times, dtype=float)
    errors = np.asarray(errors, dtype=float)
    fig, ax = plt.subplots(figsize=(6.0, 3.5))
    ax.semilogy(times, np.maximum(errors, 1e-300), "o-", color=EST_COLOR, label="|xhat - x| at t_q^-")
    if alpha_hat is not None and errors.size:
        ref = errors[0] * alpha_hat ** np.arange(errors.size)
        ax.semilogy(times, ref, ":", color="gray", label=f"{alpha_hat}^i reference")
    ax.set_xlabel("t")
    ax.set_ylabel("error norm")
    ax.grid(alpha=0.3, which="both")
    ax.legend(fontsize=8)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path
