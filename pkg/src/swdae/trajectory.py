"""Piecewise-smooth distributional signals.

A :class:`PwsTrajectory` is a list of smooth segments on contiguous
half-open intervals plus Dirac impulse records at segment boundaries.  It can
be evaluated as a right limit, a left limit, or by its impulsive part.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.interpolate import CubicSpline

from .daepair import expm, expm_many

TIME_TOL = 1e-12


def same_time(a: float, b: float) -> bool:
    return abs(a - b) <= TIME_TOL * max(1.0, abs(a), abs(b))


class DomainError(ValueError):
    pass


@dataclass(frozen=True)
class ImpulseRecord:
    """Impulsive part ``sum_j coeffs[j] * delta_t^{(j)}`` at one time."""

    time: float
    coeffs: tuple = ()

    def __post_init__(self):
        cs = [np.asarray(c, dtype=float).reshape(-1) for c in self.coeffs]
        while cs and not np.any(cs[-1]):
            cs.pop()
        for c in cs:
            c.setflags(write=False)
        object.__setattr__(self, "coeffs", tuple(cs))

    @property
    def order(self) -> int:
        """Number of nonzero-trimmed coefficient vectors."""
        return len(self.coeffs)

    @property
    def is_empty(self) -> bool:
        return not self.coeffs

    def stacked(self, n_orders: int, dim: int) -> np.ndarray:
        """Coefficients stacked ``(eta^0 / eta^1 / ...)``, zero-padded."""
        if len(self.coeffs) > n_orders:
            raise ValueError(
                f"impulse has {len(self.coeffs)} derivative orders, expected at most {n_orders}"
            )
        out = np.zeros(n_orders * dim)
        for j, c in enumerate(self.coeffs):
            if c.shape[0] != dim:
                raise ValueError(f"impulse coefficient has length {c.shape[0]}, expected {dim}")
            out[j * dim:(j + 1) * dim] = c
        return out

    def padded(self, n_orders: int, dim: int) -> np.ndarray:
        """Coefficients as an ``n_orders x dim`` array."""
        return self.stacked(n_orders, dim).reshape(n_orders, dim)

    def __sub__(self, other: ImpulseRecord) -> ImpulseRecord:
        k = max(len(self.coeffs), len(other.coeffs))
        out = []
        for j in range(k):
            a = self.coeffs[j] if j < len(self.coeffs) else 0.0
            b = other.coeffs[j] if j < len(other.coeffs) else 0.0
            out.append(np.asarray(a - b))
        return ImpulseRecord(self.time, tuple(out))

    def map(self, M) -> ImpulseRecord:
        M = np.asarray(M, dtype=float)
        return ImpulseRecord(self.time, tuple(M @ c for c in self.coeffs))

    def allclose(self, other: ImpulseRecord, tol: float = 1e-9) -> bool:
        if not same_time(self.time, other.time):
            return False
        d = self - other
        return all(np.max(np.abs(c)) <= tol for c in d.coeffs)


class Segment:
    """Smooth piece on ``[start, end)``; evaluable on the closed interval."""

    start: float
    end: float
    dim: int

    def value(self, t: float) -> np.ndarray:
        raise NotImplementedError

    def derivative(self, t: float, order: int = 1) -> np.ndarray:
        raise NotImplementedError

    def values(self, ts) -> np.ndarray:
        return np.array([self.value(t) for t in ts]).reshape(len(ts), self.dim)

    def clipped(self, a: float, b: float) -> Segment:
        raise NotImplementedError

    def _check(self, t: float) -> None:
        lo = self.start - TIME_TOL * max(1.0, abs(self.start))
        hi = self.end + TIME_TOL * max(1.0, abs(self.end))
        if not lo <= t <= hi:
            raise DomainError(f"t={t} outside segment [{self.start}, {self.end}]")


class FlowSegment(Segment):
    """``out @ expm(flow * (t - start)) @ anchor``: exact linear flow."""

    def __init__(self, start, end, flow, anchor, out=None):
        self.start = float(start)
        self.end = float(end)
        self.flow = np.asarray(flow, dtype=float)
        self.anchor = np.asarray(anchor, dtype=float).reshape(-1)
        n = self.anchor.shape[0]
        self.out = np.eye(n) if out is None else np.atleast_2d(np.asarray(out, dtype=float))
        self.dim = self.out.shape[0]

    def state(self, t: float) -> np.ndarray:
        self._check(t)
        return expm(self.flow, t - self.start) @ self.anchor

    def value(self, t: float) -> np.ndarray:
        return self.out @ self.state(t)

    def values(self, ts) -> np.ndarray:
        ts = np.asarray(ts, dtype=float).reshape(-1)
        for t in (ts.min(), ts.max()) if ts.size else ():
            self._check(t)
        states = expm_many(self.flow, ts - self.start) @ self.anchor
        return states @ self.out.T

    def derivative(self, t: float, order: int = 1) -> np.ndarray:
        return self.out @ np.linalg.matrix_power(self.flow, order) @ self.state(t)

    def clipped(self, a: float, b: float) -> FlowSegment:
        return FlowSegment(a, b, self.flow, self.state(a), self.out)

    def mapped(self, M) -> FlowSegment:
        return FlowSegment(self.start, self.end, self.flow, self.anchor, np.asarray(M, float) @ self.out)


class SampledSegment(Segment):
    """Grid samples with cubic-spline interpolation."""

    def __init__(self, times, samples):
        self.times = np.asarray(times, dtype=float)
        self.samples = np.asarray(samples, dtype=float).reshape(self.times.size, -1)
        if self.times.size < 2:
            raise ValueError("a sampled segment needs at least two samples")
        self.start = float(self.times[0])
        self.end = float(self.times[-1])
        self.dim = self.samples.shape[1]
        kind = "not-a-knot" if self.times.size >= 4 else "natural"
        self._spline = CubicSpline(self.times, self.samples, axis=0, bc_type=kind)

    def value(self, t: float) -> np.ndarray:
        self._check(t)
        return self._spline(min(max(t, self.start), self.end))

    def values(self, ts) -> np.ndarray:
        ts = np.clip(np.asarray(ts, dtype=float), self.start, self.end)
        return self._spline(ts).reshape(ts.size, self.dim)

    def derivative(self, t: float, order: int = 1) -> np.ndarray:
        self._check(t)
        return self._spline(min(max(t, self.start), self.end), order)

    def clipped(self, a: float, b: float) -> SampledSegment:
        inner = self.times[(self.times > a) & (self.times < b)]
        ts = np.concatenate([[a], inner, [b]])
        return SampledSegment(ts, self.values(ts))

    def mapped(self, M) -> SampledSegment:
        return SampledSegment(self.times, self.samples @ np.asarray(M, float).T)


class ConstantSegment(Segment):
    def __init__(self, start, end, value):
        self.start = float(start)
        self.end = float(end)
        self.c = np.asarray(value, dtype=float).reshape(-1)
        self.dim = self.c.shape[0]

    def value(self, t: float) -> np.ndarray:
        self._check(t)
        return self.c.copy()

    def derivative(self, t: float, order: int = 1) -> np.ndarray:
        return np.zeros(self.dim)

    def clipped(self, a: float, b: float) -> ConstantSegment:
        return ConstantSegment(a, b, self.c)

    def mapped(self, M) -> ConstantSegment:
        return ConstantSegment(self.start, self.end, np.asarray(M, float) @ self.c)


class CombinedSegment(Segment):
    """Linear combination ``sum_i w_i * seg_i`` of segments on one interval."""

    def __init__(self, parts: Sequence[tuple[float, Segment]], start, end):
        self.parts = list(parts)
        self.start = float(start)
        self.end = float(end)
        self.dim = self.parts[0][1].dim

    def value(self, t: float) -> np.ndarray:
        self._check(t)
        return sum(w * s.value(t) for w, s in self.parts)

    def values(self, ts) -> np.ndarray:
        return sum(w * s.values(ts) for w, s in self.parts)

    def derivative(self, t: float, order: int = 1) -> np.ndarray:
        return sum(w * s.derivative(t, order) for w, s in self.parts)

    def clipped(self, a: float, b: float) -> CombinedSegment:
        return CombinedSegment([(w, s.clipped(a, b)) for w, s in self.parts], a, b)

    def mapped(self, M) -> CombinedSegment:
        return CombinedSegment([(w, s.mapped(M)) for w, s in self.parts], self.start, self.end)


@dataclass(frozen=True)
class PwsTrajectory:
    """Piecewise-smooth distribution on ``[start, end)``."""

    dim: int
    segments: tuple
    impulses: tuple = field(default=())

    def __post_init__(self):
        segs = tuple(self.segments)
        if not segs:
            raise ValueError("trajectory needs at least one segment")
        for s in segs:
            if s.dim != self.dim:
                raise ValueError(f"segment dimension {s.dim} differs from {self.dim}")
            if not s.end > s.start:
                raise ValueError(f"empty segment [{s.start}, {s.end})")
        for s0, s1 in zip(segs, segs[1:]):
            if not same_time(s0.end, s1.start):
                raise ValueError(f"segments not contiguous at {s0.end} / {s1.start}")
        bounds = [s.start for s in segs]
        imps = tuple(sorted((r for r in self.impulses if not r.is_empty), key=lambda r: r.time))
        for r in imps:
            if not any(same_time(r.time, b) for b in bounds):
                raise ValueError(f"impulse at t={r.time} is not at a segment boundary")
        object.__setattr__(self, "segments", segs)
        object.__setattr__(self, "impulses", imps)
        object.__setattr__(self, "_starts", [s.start for s in segs])

    @property
    def start(self) -> float:
        return self.segments[0].start

    @property
    def end(self) -> float:
        return self.segments[-1].end

    @property
    def boundaries(self) -> list[float]:
        return [s.start for s in self.segments] + [self.end]

    def _seg_right(self, t: float) -> Segment:
        if not (self.start - TIME_TOL * max(1, abs(self.start)) <= t < self.end
                and not same_time(t, self.end)):
            raise DomainError(f"t={t} outside [{self.start}, {self.end})")
        i = bisect.bisect_right(self._starts, t + TIME_TOL * max(1.0, abs(t))) - 1
        return self.segments[max(i, 0)]

    def _seg_left(self, t: float) -> Segment:
        if not (self.start < t <= self.end + TIME_TOL * max(1, abs(self.end))) or same_time(t, self.start):
            raise DomainError(f"left limit at t={t} outside ({self.start}, {self.end}]")
        i = bisect.bisect_left(self._starts, t - TIME_TOL * max(1.0, abs(t))) - 1
        return self.segments[max(i, 0)]

    def eval_right(self, t: float) -> np.ndarray:
        return self._seg_right(t).value(t)

    def eval_left(self, t: float) -> np.ndarray:
        return self._seg_left(t).value(t)

    def impulse_at(self, t: float) -> ImpulseRecord:
        if not (self.start - TIME_TOL <= t <= self.end + TIME_TOL):
            raise DomainError(f"t={t} outside [{self.start}, {self.end}]")
        for r in self.impulses:
            if same_time(r.time, t):
                return r
        return ImpulseRecord(t)

    def segment_at(self, t: float) -> Segment:
        return self._seg_right(t)

    def sample(self, ts) -> np.ndarray:
        """Right-limit values on a grid; the domain end uses the left limit."""
        ts = np.asarray(ts, dtype=float).reshape(-1)
        out = np.empty((ts.size, self.dim))
        at_end = np.array([same_time(t, self.end) for t in ts], dtype=bool)
        inner = ts[~at_end]
        if inner.size and (inner.min() < self.start - TIME_TOL * max(1, abs(self.start))
                           or inner.max() >= self.end):
            bad = inner[(inner < self.start - TIME_TOL * max(1, abs(self.start))) | (inner >= self.end)][0]
            raise DomainError(f"t={bad} outside [{self.start}, {self.end})")
        if at_end.any():
            out[at_end] = self.eval_left(self.end)
        # segment of each right limit, with the same tolerance as eval_right
        idx = np.searchsorted(self._starts, inner + TIME_TOL * np.maximum(1.0, np.abs(inner)), side="right") - 1
        idx = np.maximum(idx, 0)
        pos = np.flatnonzero(~at_end)
        for i in np.unique(idx):
            sel = idx == i
            seg = self.segments[i]
            out[pos[sel]] = seg.values(np.clip(inner[sel], seg.start, seg.end))
        return out

    def grid(self, step: float) -> np.ndarray:
        """Grid containing every segment boundary plus points ``step`` apart."""
        pts = []
        for s in self.segments:
            k = max(1, int(np.ceil((s.end - s.start) / step - 1e-9)))
            pts.append(np.linspace(s.start, s.end, k + 1)[:-1])
        pts.append([self.end])
        return np.concatenate(pts)

    def restrict(self, a: float, b: float) -> PwsTrajectory:
        """``1_[a, b) * self``: segments clipped, impulses in ``[a, b)`` kept."""
        if not b > a:
            raise DomainError(f"empty or inverted interval [{a}, {b})")
        if a < self.start - TIME_TOL or b > self.end + TIME_TOL * max(1, abs(self.end)):
            raise DomainError(f"[{a}, {b}) not within [{self.start}, {self.end})")
        segs = []
        for s in self.segments:
            lo, hi = max(s.start, a), min(s.end, b)
            if hi > lo and not same_time(hi, lo):
                if same_time(lo, s.start) and same_time(hi, s.end):
                    segs.append(s)
                else:
                    segs.append(s.clipped(lo, hi))
        imps = tuple(r for r in self.impulses
                     if (r.time >= a or same_time(r.time, a)) and r.time < b and not same_time(r.time, b))
        return PwsTrajectory(self.dim, tuple(segs), imps)

    def concat(self, other: PwsTrajectory) -> PwsTrajectory:
        if not same_time(self.end, other.start):
            raise ValueError("trajectories are not contiguous")
        return PwsTrajectory(self.dim, self.segments + other.segments, self.impulses + other.impulses)

    def map(self, M) -> PwsTrajectory:
        """Pointwise linear map ``t -> M f(t)`` including impulses."""
        M = np.atleast_2d(np.asarray(M, dtype=float))
        return PwsTrajectory(
            M.shape[0],
            tuple(s.mapped(M) for s in self.segments),
            tuple(r.map(M) for r in self.impulses),
        )

    def combine(self, other: PwsTrajectory, wa: float = 1.0, wb: float = 1.0) -> PwsTrajectory:
        """``wa * self + wb * other`` on the common domain."""
        if self.dim != other.dim:
            raise ValueError("dimension mismatch")
        a, b = max(self.start, other.start), min(self.end, other.end)
        cuts = sorted({t for t in self.boundaries + other.boundaries if a <= t <= b})
        merged = [cuts[0]]
        for t in cuts[1:]:
            if not same_time(t, merged[-1]):
                merged.append(t)
        segs = []
        for lo, hi in zip(merged, merged[1:]):
            mid = 0.5 * (lo + hi)
            sa = self._seg_right(mid).clipped(lo, hi)
            sb = other._seg_right(mid).clipped(lo, hi)
            segs.append(CombinedSegment([(wa, sa), (wb, sb)], lo, hi))
        imps = []
        for t in merged[:-1]:
            ra, rb = self.impulse_at(t), other.impulse_at(t)
            if ra.is_empty and rb.is_empty:
                continue
            k = max(ra.order, rb.order)
            ca = ra.padded(k, self.dim)
            cb = rb.padded(k, self.dim)
            imps.append(ImpulseRecord(t, tuple(wa * ca + wb * cb)))
        return PwsTrajectory(self.dim, tuple(segs), tuple(imps))

    def __sub__(self, other: PwsTrajectory) -> PwsTrajectory:
        return self.combine(other, 1.0, -1.0)

    def allclose(self, other: PwsTrajectory, step: float | None = None, tol: float = 1e-9) -> bool:
        """Pointwise equality on a test grid plus equal impulse records."""
        if self.dim != other.dim:
            return False
        if not (same_time(self.start, other.start) and same_time(self.end, other.end)):
            return False
        step = step or (self.end - self.start) / 200.0
        ts = self.grid(step)
        if np.max(np.abs(self.sample(ts) - other.sample(ts))) > tol:
            return False
        for t in set(self.boundaries + other.boundaries):
            if t < self.end and not self.impulse_at(t).allclose(other.impulse_at(t), tol):
                return False
        # one-sided limits at interior boundaries
        for t in self.boundaries[1:-1] + other.boundaries[1:-1]:
            if np.max(np.abs(self.eval_left(t) - other.eval_left(t))) > tol:
                return False
        return True


def constant(value, start: float, end: float) -> PwsTrajectory:
    value = np.asarray(value, dtype=float).reshape(-1)
    return PwsTrajectory(value.shape[0], (ConstantSegment(start, end, value),))


def from_samples(times, samples) -> PwsTrajectory:
    seg = SampledSegment(times, samples)
    return PwsTrajectory(seg.dim, (seg,))
