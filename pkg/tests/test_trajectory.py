import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from swdae.simulator import solve_homogeneous
from swdae.trajectory import (
    ConstantSegment,
    DomainError,
    FlowSegment,
    ImpulseRecord,
    PwsTrajectory,
    SampledSegment,
    constant,
    from_samples,
)


def test_constant_trajectory_limits():
    c = np.array([1.0, -2.0])
    tr = constant(c, 0.0, 4.0)
    for t in (0.5, 1.0, 3.9):
        assert np.allclose(tr.eval_left(t), c)
        assert np.allclose(tr.eval_right(t), c)
        assert tr.impulse_at(t).is_empty


def test_domain_errors():
    tr = constant([1.0], 0.0, 1.0)
    with pytest.raises(DomainError):
        tr.eval_right(1.0)
    with pytest.raises(DomainError):
        tr.eval_left(0.0)
    with pytest.raises(DomainError):
        tr.restrict(0.5, 0.5)
    with pytest.raises(DomainError):
        tr.impulse_at(2.0)


def test_impulse_record_trimming():
    r = ImpulseRecord(1.0, ([1.0, 2.0], [0.0, 0.0], [0.0, 0.0]))
    assert r.order == 1
    assert r.allclose(ImpulseRecord(1.0, ([1.0, 2.0],)))
    assert ImpulseRecord(0.0, ([0.0],)).is_empty
    with pytest.raises(ValueError):
        r.stacked(0, 2)
    assert np.allclose(r.stacked(3, 2), [1, 2, 0, 0, 0, 0])


def test_impulses_must_sit_at_boundaries():
    seg = ConstantSegment(0.0, 1.0, [0.0])
    with pytest.raises(ValueError):
        PwsTrajectory(1, (seg,), (ImpulseRecord(0.5, ([1.0],)),))


def test_segments_must_be_contiguous():
    with pytest.raises(ValueError):
        PwsTrajectory(1, (ConstantSegment(0, 1, [0.0]), ConstantSegment(1.5, 2, [0.0])))


def test_restrict_keeps_impulses_in_half_open_interval():
    segs = tuple(ConstantSegment(a, a + 1, [float(a)]) for a in range(4))
    imps = (ImpulseRecord(0.0, ([1.0],)), ImpulseRecord(3.0, ([2.0],)))
    tr = PwsTrajectory(1, segs, imps)
    assert tr.restrict(1.0, 2.0).impulses == ()
    assert len(tr.restrict(0.0, 3.0).impulses) == 1
    assert len(tr.restrict(3.0, 4.0).impulses) == 1
    full = tr.restrict(tr.start, tr.end)
    assert full.allclose(tr)


def test_example2_x1_jump(ex2):
    x0 = np.array([0.0, 1.0, 2.0, -1.0])
    res = solve_homogeneous(ex2, x0, (0.0, 6.0))
    for t in (1.0, 3.0, 5.0):
        left = res.x.eval_left(t)
        assert abs(res.x.eval_right(t)[0]) < 1e-12
        # the state impulse is minus the jump of x1 and lives in x2
        imp = res.x.impulse_at(t).coeffs[0]
        assert np.allclose(imp, [0.0, -left[0], 0.0, 0.0], atol=1e-12)


def test_example2_output_impulse_at_3(ex2):
    x0 = np.array([0.0, 0.7, -1.3, 2.0])
    res = solve_homogeneous(ex2, x0, (0.0, 4.0))
    assert np.isclose(res.y.impulse_at(3.0).coeffs[0][0], -x0[2], atol=1e-12)


def test_example1_restriction_is_single_segment(ex1):
    res = solve_homogeneous(ex1, [0.0, 1.0, 2.0], (0.0, 3.0))
    part = res.x.restrict(1.0, 2.0)
    assert len(part.segments) == 1
    seg = part.segments[0]
    for t in np.linspace(1.0, 2.0, 7):
        x, dx = seg.value(t), seg.derivative(t)
        assert np.isclose(dx[2], x[1] - x[2], atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.05, 0.95), st.floats(0.05, 0.95), st.integers(0, 2**31 - 1))
def test_restrict_then_eval_commutes(a, b, seed):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((2, 2))
    segs = (FlowSegment(0.0, 1.0, A, rng.standard_normal(2)),
            FlowSegment(1.0, 2.0, -A, rng.standard_normal(2)))
    tr = PwsTrajectory(2, segs)
    lo, hi = sorted((a, 1.0 + b))
    part = tr.restrict(lo, hi)
    for t in np.linspace(lo, hi, 9)[1:-1]:
        assert np.allclose(part.eval_right(t), tr.eval_right(t))
        assert np.allclose(part.eval_left(t), tr.eval_left(t))


def test_sampled_segment_interpolates_smooth_signal():
    ts = np.linspace(0.0, 1.0, 201)
    tr = from_samples(ts, np.sin(ts)[:, None])
    t = 0.3337
    assert np.isclose(tr.eval_right(t)[0], np.sin(t), atol=1e-9)
    seg = tr.segments[0]
    assert isinstance(seg, SampledSegment)
    assert np.isclose(seg.derivative(t)[0], np.cos(t), atol=1e-6)


def test_subtraction_pads_impulses():
    s = (ConstantSegment(0, 1, [1.0]), ConstantSegment(1, 2, [2.0]))
    a = PwsTrajectory(1, s, (ImpulseRecord(1.0, ([1.0], [2.0])),))
    b = PwsTrajectory(1, s, (ImpulseRecord(1.0, ([1.0],)),))
    d = a - b
    assert np.allclose(d.eval_right(1.5), 0.0)
    assert d.impulse_at(1.0).allclose(ImpulseRecord(1.0, ([0.0], [2.0])))
