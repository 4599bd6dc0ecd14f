import math

import numpy as np
import pytest
from scipy import special

from leakywave.errors import OutOfRegion
from leakywave.geometry import (Potential, build_admissible_contour, panelize,
                                preset_potential, truncate_at_depth)
from leakywave.greens import (GreensEvaluator, build_fourier_contour, build_transverse_cache,
                              fd_residual, fd_stations, tail_cutoff, w_tilde, wkb_transverse)
from leakywave.kernels import KernelEvaluator
from leakywave.modes import integrate_transverse
from leakywave.potentials import green_identity
from leakywave.specfun import alpha_star

K = 3.0


def evaluator(pot, stations, x1_max=2.5, separation=80.0, d=None, s_cap=400.0):
    d = pot.d if d is None else d
    fc = build_fourier_contour(K, "field", separation_max=separation, d=d, x1_max=x1_max,
                               xi_top=K * math.sqrt(1 + pot.M_q), s_cap=s_cap)
    return GreensEvaluator(build_transverse_cache(pot, K, fc, stations, d))


# ------------------------------------------------------------------ w tilde

def test_w_tilde_vanishes_for_free_medium():
    q = preset_potential("zero", d=2.0)
    fc = build_fourier_contour(K, "field", d=2.0)
    c = build_transverse_cache(q, K, fc, [0.5], 2.0)
    for xi in (0.7 - 0.1j, 4.0, 9.3 - 1e-3j):
        assert abs(w_tilde(c, xi, 0.5, -1.0)) < 1e-15
    idx = np.arange(c.stations.size)
    assert np.all(np.abs(c.station_wt(idx, idx)) < 1e-15)


def test_w_tilde_symmetric(rng):
    q = preset_potential("qa_left")
    fc = build_fourier_contour(K, "field", d=q.d)
    pts = rng.uniform(-q.d, q.d, (4, 2))
    c = build_transverse_cache(q, K, fc, pts.ravel(), q.d)
    for xi in (3.1 - 0.2j, 5.5, 11.0 - 0.01j):
        for a, b in pts:
            assert w_tilde(c, xi, a, b) == pytest.approx(w_tilde(c, xi, b, a), rel=1e-10)


def test_w_tilde_cache_node_matches_fresh_integration():
    q = preset_potential("qa_right")
    fc = build_fourier_contour(K, "field", d=q.d)
    c = build_transverse_cache(q, K, fc, [0.25, -0.6], q.d)
    m = 37
    xi = complex(fc.xi[m])
    cached = w_tilde(c, xi, 0.25, -0.6)
    fresh = w_tilde(c, xi * (1 + 1e-13) + 1e-13, 0.25, -0.6, n_steps=16000)
    assert cached == pytest.approx(fresh, rel=1e-7)


def test_w_tilde_decay_in_xi():
    q = preset_potential("qa_right")
    fc = build_fourier_contour(K, "field", d=q.d)
    c = build_transverse_cache(q, K, fc, [0.3], q.d)
    xi_min = K * math.sqrt(1 + q.M_q)
    xs = np.geomspace(2 * xi_min, 20 * xi_min, 12)
    vals = np.array([abs(w_tilde(c, x, 0.3, 0.3)) for x in xs])
    slope = np.polyfit(np.log(xs), np.log(vals), 1)[0]
    assert slope <= -2.0


def test_w_tilde_outside_channel_uses_exponential_factor():
    q = preset_potential("qa_right")
    fc = build_fourier_contour(K, "field", d=q.d)
    c = build_transverse_cache(q, K, fc, [0.3], q.d)
    xi = 4.4 - 0.3j
    a = alpha_star(xi, K)
    z = q.d + 2.0 + 1.5j
    want = w_tilde(c, xi, 0.3, q.d) * np.exp(a * (z - q.d))
    assert w_tilde(c, xi, 0.3, z) == pytest.approx(want, rel=1e-13)
    with pytest.raises(OutOfRegion):
        w_tilde(c, xi, 0.3, 0.5 + 0.2j)


# ---------------------------------------------------------- Fourier contour

def test_tail_cutoff_meets_tolerance():
    tol, delta = 1e-10, 0.1
    S = tail_cutoff(K, 0, delta, tol)
    assert math.exp(-delta * math.sqrt(S * S - K * K)) <= tol * (1 + 1e-9)
    assert math.exp(-delta * math.sqrt((0.99 * S) ** 2 - K * K)) > tol
    # discarded tail of the model integrand, summed directly on a fine grid
    s = np.linspace(S, S + 2000, 400001)
    tail = np.trapz(np.exp(-delta * np.sqrt(s * s - K * K)), s)
    assert tail < tol / delta * 1.01


def test_fourier_contour_quadrants():
    fc = build_fourier_contour(K, "kernel_kD", delta_min=0.1, d=1.0)
    xi, w = fc.full()
    inner = np.abs(xi.real) > 0
    assert np.all(np.sign(xi.imag[inner]) == -np.sign(xi.real[inner]))
    assert fc.S_max <= 400.0


def test_fourier_contour_refinement_self_convergence():
    q_l, q_r = preset_potential("qa_left"), preset_potential("qa_right")
    d = max(q_l.d, q_r.d)
    st = [0.5, 1.5]
    vals = []
    for refine in (False, True):
        fc = build_fourier_contour(K, "kernel_kD", d=d, separation_max=10.0,
                                   xi_top=K * math.sqrt(1 + q_l.M_q))
        if refine:
            fc = fc.refined()
        caches = [build_transverse_cache(q, K, fc, st, d) for q in (q_l, q_r)]
        ev = KernelEvaluator(caches[0], caches[1], math.inf)
        vals.append(ev.matrix("kD", [0.5], [1.5])[0, 0])
    assert abs(vals[0] - vals[1]) < 10 * 1e-10 * max(1.0, abs(vals[1]))


# ---------------------------------------------------------------------- WKB

def test_wkb_exact_for_free_medium():
    q = preset_potential("zero", d=2.0)
    xi = 7.0 - 0.4j
    a = alpha_star(xi, K)
    for order in (1, 3, 6):
        minus, plus = wkb_transverse(q, K, xi, order=order)
        np.testing.assert_allclose(minus.u, np.exp(-a * minus.grid), rtol=1e-13)
        np.testing.assert_allclose(plus.u, np.exp(a * plus.grid), rtol=1e-13)


def test_wkb_converges_with_order_on_gentle_profile():
    # support edge sits where the profile is below roundoff, so no jump is seen
    q = Potential(12.0, ((-12.0, 12.0, lambda x: 0.5 * np.exp(-x * x / 4.0)),), "gentle")
    xi = 3 * K * math.sqrt(1.5)
    ref = integrate_transverse(q, K, xi, "minus", n_steps=32000)
    errs = []
    for order in (1, 3, 6):
        minus, _ = wkb_transverse(q, K, xi, order=order, grid=ref.grid)
        errs.append(abs(minus.u[-1] - ref.u[-1]) / abs(ref.u[-1]))
    assert errs[-1] < 1e-10
    assert all(b < a for a, b in zip(errs, errs[1:]))


def test_wkb_order_six_at_three_xi_min():
    # brute-force RK oracle on the qa_left profile
    q = preset_potential("qa_left")
    xi = 3 * K * math.sqrt(1 + q.M_q)
    ref = integrate_transverse(q, K, xi, "minus", n_steps=32000)
    minus, _ = wkb_transverse(q, K, xi, order=6, grid=ref.grid)
    assert abs(minus.u[-1] - ref.u[-1]) / abs(ref.u[-1]) < 1e-8


def test_wkb_order_six_at_six_xi_min():
    q = preset_potential("qa_left")
    xi = 6 * K * math.sqrt(1 + q.M_q)
    ref = integrate_transverse(q, K, xi, "minus", n_steps=32000)
    minus, _ = wkb_transverse(q, K, xi, order=6, grid=ref.grid)
    assert abs(minus.u[-1] - ref.u[-1]) / abs(ref.u[-1]) < 1e-8


def test_wkb_order_one_on_square_well():
    q = preset_potential("qb_right")
    xi = 10 * K * math.sqrt(1 + q.M_q)
    minus, _ = wkb_transverse(q, K, xi, order=1)
    a = alpha_star(xi, K)
    m = np.sqrt(a * a - K * K + 0j)
    x = minus.grid
    u0 = np.exp(3 * a)
    exact = u0 * np.cosh(m * (x + 3)) - a * u0 / m * np.sinh(m * (x + 3))
    err = np.max(np.abs(minus.u - exact) / np.abs(exact))
    assert err < K * K * q.M_q / abs(xi) ** 2


# ---------------------------------------------------------------- G itself

def test_free_green_is_hankel():
    q = preset_potential("zero", d=1.0)
    ev = evaluator(q, [0.2, -0.5])
    x1 = np.array([0.4, -1.2, 2.0])
    x2 = np.array([0.2, -0.5, 3.0])
    y2 = np.array([0.2, -0.5, 1.0 + 0j, 4.0 + 0.5j])
    G, dG = ev.green_matrix(x1, x2, y2)
    r = np.sqrt(x1[:, None] ** 2 + (x2[:, None] - y2[None, :]) ** 2)
    np.testing.assert_allclose(G, 0.25j * special.hankel1(0, K * r), atol=1e-15)
    np.testing.assert_allclose(dG, 0.25j * K * special.hankel1(1, K * r) * x1[:, None] / r,
                               atol=1e-15)


@pytest.fixture(scope="module")
def left_green():
    q = preset_potential("qa_left")
    pts = [-1.7, -0.4, 0.3, 1.1, 2.6, 1.0]
    fd = fd_stations([0.2, 1.95, -1.0], 1e-4)
    return q, evaluator(q, np.concatenate([pts, fd]))


def test_reciprocity_on_interface(left_green):
    _, ev = left_green
    a, b = [-1.7, -0.4, 0.3], [1.1, 2.6, -0.4]
    for s, t in zip(a, b):
        assert abs(ev.green((0.0, s), t)[0] - ev.green((0.0, t), s)[0]) < 1e-8


def test_reciprocity_off_interface(left_green):
    # G((x1, a); (0, b)) = G((0, b); (x1, a)) = G((-x1, b); (0, a)) by translation
    _, ev = left_green
    G1 = ev.green((0.7, 0.3), 1.1)[0]
    G2 = ev.green((-0.7, 1.1), 0.3)[0]
    assert abs(G1 - G2) < 1e-8


def test_helmholtz_residual(left_green):
    _, ev = left_green
    res = fd_residual(ev, (0.0, 1.0), np.array([0.9, -1.0, 0.6]),
                      np.array([1.95, 0.2, -1.0]), 1e-4)
    assert np.all(res < 1e-3)


def test_green_matches_local_closed_form_near_source(left_green):
    # away from the local radius the model correction is a pure Fourier sum
    q, ev = left_green
    near = ev.green_matrix([0.3], [0.3], [1.1])[0][0, 0]
    lr = ev.local_radius
    ev.local_radius = 0.0
    try:
        bare = ev.green_matrix([0.3], [0.3], [1.1])[0][0, 0]
    finally:
        ev.local_radius = lr
    assert abs(near - bare) < 1e-6


def identity_setup(pot, depth=39.527):
    d = pot.d
    c = build_admissible_contour("erf", k=K, d=d, A=20.0, t0=40.0, s=5.0)
    tr = truncate_at_depth(c, depth)
    disc = panelize(tr, 1.0, 16, d, 0.5, breaks=pot.breakpoints)
    return tr, disc


@pytest.mark.parametrize("name", ["zero", "qa_left"])
def test_green_identity_three_regimes(name):
    pot = preset_potential(name)
    tr, disc = identity_setup(pot)
    x1 = np.array([-0.8, 0.0, 0.9])
    x2 = np.array([0.4, -0.3, 1.7])
    source = (0.5, 1.0)
    st = np.concatenate([disc.z[disc.in_channel()].real, x2, [source[1]]])
    ev = evaluator(pot, st[np.abs(st) <= pot.d], separation=2 * (tr.t_max - pot.d))
    lhs, rhs = green_identity(ev, disc, source, x1, x2)
    u = ev.green_matrix(x1 - source[0], x2, [source[1]])[0][:, 0]
    assert rhs == pytest.approx(np.array([u[0], u[1] / 2, 0.0]))
    assert np.max(np.abs(lhs - rhs)) < 1e-5
