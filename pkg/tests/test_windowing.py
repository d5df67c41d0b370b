import numpy as np
import pytest

from generators import random_detectable
from oracles import null_space, proj, same_span
from swdae.daepair import expm
from swdae.modeobs import ideal_z
from swdae.simulator import Mode, SwitchedSystem, solve_homogeneous
from swdae.subspace import equals
from swdae.windowing import (
    BudgetError,
    Certificate,
    ModeDataCache,
    budget_from,
    build_window,
    correction,
    correction_left,
    detect_certificate,
    error_budget,
    make_window,
    unobs_chain,
    uniformity_check,
)


def ideal_zs(sys_, wd, e0):
    """Exact local data ``z_k = Z_k^T e(t_k^-)`` along the error trajectory."""
    w = wd.window
    res = solve_homogeneous(sys_, e0, (w.start, w.end))
    zs, t = [], w.start
    for j, (d, tau) in enumerate(zip(w.mode_data, w.durations)):
        e_minus = np.asarray(e0, float) if j == 0 else res.x.eval_left(t)
        zs.append(ideal_z(d, e_minus))
        t += tau
    return zs, res


@pytest.fixture(scope="module")
def wd1(ex1):
    return build_window(make_window(ex1, 0, 3))


@pytest.fixture(scope="module")
def wd2(ex2):
    return build_window(make_window(ex2, 0, 2))


# -- worked examples ---------------------------------------------------------

def test_example1_chain(wd1):
    N0, N1, N2 = wd1.N
    assert same_span(N2.basis, np.eye(3)[:, 1:])
    assert same_span(N1.basis, null_space(np.array([[1.0, 1.0, 0.0]])))
    assert same_span(N0.basis, np.eye(3)[:, 2:])


def test_example1_theta_and_m(wd1):
    assert same_span(wd1.Theta[0], np.array([[1.0], [1.0], [0.0]]))
    assert same_span(wd1.M[0], np.eye(3)[:, :2])
    assert same_span(wd1.M[1], np.array([[1.0], [1.0], [0.0]]))
    for M, N in zip(wd1.M, wd1.N):
        assert np.allclose(M.T @ M, np.eye(M.shape[1]))
        assert np.allclose(M.T @ N.basis, 0, atol=1e-12)
        assert M.shape[1] + N.dim == 3


def test_example1_correction(ex1, wd1, rng):
    for _ in range(10):
        a, b, c = rng.standard_normal(3)
        zs, res = ideal_zs(ex1, wd1, [a, b, c])
        xl = correction_left(wd1, zs)
        assert np.allclose(xl, [a, b, 0.0], atol=1e-10)
        A1 = ex1.modes[1].A
        assert np.allclose(correction(wd1, zs), expm(A1, 1.0) @ xl, atol=1e-10)


def test_example2_window(ex2, wd2, rng):
    assert same_span(wd2.M[0], np.array([[1.0], [0.0], [1.0], [0.0]]))
    for _ in range(10):
        a, b, c, d = rng.standard_normal(4)
        zs, _ = ideal_zs(ex2, wd2, [a, b, c, d])
        m = (a + c) / 2
        assert np.allclose(correction_left(wd2, zs), [m, 0.0, m, 0.0], atol=1e-10)
    # xi = flow(mode 1) Pi_1 flow(mode 0) Pi_0 xi^left
    d0, d1 = wd2.window.mode_data
    Phi = expm(d1.dec.Adiff, 1.0) @ d1.dec.Pi @ expm(d0.dec.Adiff, 1.0) @ d0.dec.Pi
    assert np.allclose(wd2.Phi_pq, Phi, atol=1e-12)


def test_single_mode_window_is_local_space(ex1):
    wd = build_window(make_window(ex1, 0, 1))
    assert equals(wd.N[0], wd.window.mode_data[0].W)


def test_silent_window_gives_no_correction():
    mode = Mode(np.eye(2), [[-1.0, 0.0], [0.0, -2.0]], C=np.zeros((1, 2)))
    sys_ = SwitchedSystem([mode, mode], [0, 1], [0.0, 1.0, 2.0])
    wd = build_window(make_window(sys_, 0, 2))
    assert all(N.is_full for N in wd.N)
    assert wd.M[0].shape == (2, 0)
    assert np.allclose(correction_left(wd, [np.zeros(0), np.zeros(0)]), 0)
    assert np.isclose(wd.alpha, np.exp(-2.0))


def test_correction_length_checks(wd1):
    with pytest.raises(ValueError):
        correction_left(wd1, [np.zeros(1)])
    with pytest.raises(ValueError):
        correction_left(wd1, [np.zeros(2), np.zeros(0), np.zeros(1)])


def test_truncated_window_keeps_chain(ex1):
    cache = ModeDataCache()
    full = build_window(make_window(ex1, 0, 3, cache))
    cut = build_window(make_window(ex1, 0, 3, cache, end=2.5))
    assert cut.window.durations == [1.0, 1.0, 0.5]
    assert equals(full.N[0], cut.N[0])
    with pytest.raises(ValueError):
        make_window(ex1, 0, 3, end=3.5)
    with pytest.raises(ValueError):
        make_window(ex1, 2, 1)


# -- certificates and budgets -----------------------------------------------

def test_example1_certificate(wd1):
    cert = detect_certificate(wd1)
    assert abs(cert.alpha - np.exp(-1.0)) < 1e-12
    assert cert.detectable
    assert cert.Mconst <= np.exp(2.0) + 1e-6
    assert np.allclose(wd1.Phi_pq @ [0.0, 0.0, 1.0], [0.0, 0.0, np.exp(-1.0)])


def test_expanding_unobservable_mode():
    mode = Mode([[1.0]], [[1.0]], C=[[0.0]])
    sys_ = SwitchedSystem([mode], [0], [0.0, 0.7])
    cert = detect_certificate(build_window(make_window(sys_, 0, 1)))
    assert np.isclose(cert.alpha, np.exp(0.7))
    assert not cert.detectable


def test_determinable_window():
    mode = Mode(np.eye(2), np.zeros((2, 2)), C=np.eye(2))
    sys_ = SwitchedSystem([mode], [0], [0.0, 1.0])
    wd = build_window(make_window(sys_, 0, 1))
    cert = detect_certificate(wd)
    assert cert == Certificate(0.0, 0.0, True)
    assert np.isclose(wd.c, 1.0)


def test_budget_arithmetic():
    b = budget_from(10.0, 0.98, 0.99)
    assert np.isclose(b.eps_max, 0.001)
    with pytest.raises(BudgetError):
        budget_from(1.0, 0.5, 0.4)
    with pytest.raises(BudgetError):
        budget_from(1.0, 0.5, 1.0)


def test_example1_budget(wd1):
    b = error_budget(wd1, 0.7)
    assert b.c > 0 and b.eps_max > 0
    # direct evaluation of the two operator norms
    d = wd1.window.mode_data
    stack = np.vstack([dk.Zmat.T @ P for dk, P in zip(d, wd1.Phi[:-1])])
    c = np.linalg.norm(wd1.Phi_pq @ wd1.Ocal, 2) * np.linalg.norm(stack, 2)
    assert np.isclose(b.c, c)
    assert np.isclose(b.eps_max, (0.7 - np.exp(-1.0)) / c)


def test_uniformity(ex1):
    cache = ModeDataCache()
    certs = [detect_certificate(build_window(make_window(ex1, 3 * i, 3 * i + 3, cache)))
             for i in range(10)]
    u = uniformity_check(certs, np.exp(-1.0), np.exp(2.0) + 1e-6)
    assert u.ok and abs(u.alpha_sup - np.exp(-1.0)) < 1e-9
    assert not uniformity_check(certs, 0.3).ok
    assert not uniformity_check(certs, 1.0).ok
    assert not uniformity_check(certs, 0.5, M_star=0.5).ok


# -- properties on random detectable windows ----------------------------------

@pytest.fixture(scope="module")
def random_windows():
    rng = np.random.default_rng(7)
    return [random_detectable(rng) for _ in range(40)]


def test_zero_output_membership(random_windows):
    rng = np.random.default_rng(1)
    for sys_, wd in random_windows:
        Nb = wd.N[0].basis
        if Nb.shape[1] == 0:
            continue
        e0 = Nb @ rng.standard_normal(Nb.shape[1])
        res = solve_homogeneous(sys_, e0)
        ts = res.y.grid(0.05)
        assert np.max(np.abs(res.y.sample(ts))) < 1e-8
        for rec in res.y.impulses:
            assert all(np.max(np.abs(c)) < 1e-8 for c in rec.coeffs)


def test_chain_and_matrix_invariants(random_windows):
    for _, wd in random_windows:
        w = wd.window
        for j, (d, tau) in enumerate(zip(w.mode_data, w.durations)):
            assert d.W.contains_subspace(wd.N[j])
            assert same_span(wd.M[j], null_space(wd.N[j].basis.T)) if wd.N[j].dim else \
                same_span(wd.M[j], np.eye(w.n))
            assert np.allclose(wd.Phi[j + 1], expm(d.dec.Adiff, tau) @ d.dec.Pi @ wd.Phi[j], atol=1e-10)
            if j < len(w.mode_data) - 1:
                back = expm(d.dec.Adiff, -tau)
                assert np.allclose(wd.Theta[j].T @ back @ wd.N[j + 1].basis, 0, atol=1e-10)
        assert np.allclose(wd.Phi[0], np.eye(w.n))
        assert unobs_chain(w)[0].dim == wd.N[0].dim


def test_transition_matches_simulator(random_windows):
    rng = np.random.default_rng(2)
    for sys_, wd in random_windows:
        e0 = rng.standard_normal(sys_.n)
        res = solve_homogeneous(sys_, e0)
        assert np.allclose(wd.Phi_pq @ e0, res.x.eval_left(wd.window.end), atol=1e-9)


def test_window_contraction(random_windows):
    rng = np.random.default_rng(3)
    for sys_, wd in random_windows:
        for _ in range(3):
            e0 = rng.standard_normal(sys_.n)
            zs, res = ideal_zs(sys_, wd, e0)
            xl = correction_left(wd, zs)
            Nb = wd.N[0].basis
            assert np.allclose(Nb.T @ xl, 0, atol=1e-10)
            # with exact data the residual is the orthogonal projection onto N_p
            assert np.allclose(e0 - xl, proj(Nb) @ e0 if Nb.shape[1] else 0 * e0, atol=1e-9)
            after = res.x.eval_left(wd.window.end) - correction(wd, zs)
            assert np.linalg.norm(after) < np.linalg.norm(e0)
            assert np.linalg.norm(after) <= wd.alpha * np.linalg.norm(e0) + 1e-9


def test_ocal_is_composed_map(random_windows):
    rng = np.random.default_rng(4)
    for _, wd in random_windows[:10]:
        zs = [rng.standard_normal(r) for r in wd.z_sizes]
        flat = np.concatenate(zs) if zs else np.zeros(0)
        assert np.allclose(wd.Ocal @ flat, correction_left(wd, zs), atol=1e-10)
