import math

import numpy as np
import pytest
from scipy import optimize

from leakywave.errors import OutOfRegion
from leakywave.geometry import Potential, preset_potential, square_well
from leakywave.modes import eval_mode, find_modes, integrate_transverse, wronskian
from leakywave.specfun import alpha_star

K = 3.0
REFERENCE = {
    "qa_left": (3.7401, 4.6783, 6.2958, 7.5942),
    "qa_right": (4.1378, 5.9297),
    "qb_right": (3.2274, 3.5503, 3.8083, 4.0022, 4.2164),
}


def well_dispersion_roots(k, d):
    """Guided frequencies of chi_[-d, d] from m tan(m d) = kappa and m cot(m d) = -kappa."""
    top = k * math.sqrt(2.0)
    m_of = lambda xi: math.sqrt(2 * k * k - xi * xi)
    kap = lambda xi: math.sqrt(xi * xi - k * k)
    even = lambda xi: m_of(xi) * math.sin(m_of(xi) * d) - kap(xi) * math.cos(m_of(xi) * d)
    odd = lambda xi: m_of(xi) * math.cos(m_of(xi) * d) + kap(xi) * math.sin(m_of(xi) * d)
    xs = np.linspace(k + 1e-12, top - 1e-12, 40001)
    roots = []
    for f in (even, odd):
        v = np.array([f(x) for x in xs])
        for i in np.nonzero(v[:-1] * v[1:] < 0)[0]:
            roots.append(optimize.brentq(f, xs[i], xs[i + 1], xtol=1e-15, rtol=1e-15))
    return np.sort(roots)


def test_free_solution_exact():
    q = preset_potential("zero", d=2.0)
    xi = 4.2
    sol = integrate_transverse(q, K, xi, "minus", n_steps=2000)
    a = alpha_star(xi, K)
    u_d, _ = sol.trace(q.d)
    want = np.exp(-a * q.d)
    assert abs(u_d - want) / abs(want) < 1e-10


def test_square_well_transfer_matrix():
    q = preset_potential("qb_right")
    xi = 3.5
    sol = integrate_transverse(q, K, xi, "minus")
    a = alpha_star(xi, K)
    m = math.sqrt(2 * K * K - xi * xi)
    u0, du0 = np.exp(3 * a), -a * np.exp(3 * a)        # free solution at x = -3
    x = sol.grid
    want = u0 * np.cos(m * (x + 3)) + du0 / m * np.sin(m * (x + 3))
    dwant = -u0 * m * np.sin(m * (x + 3)) + du0 * np.cos(m * (x + 3))
    assert np.max(np.abs(sol.u - want)) < 1e-9 * np.max(np.abs(want))
    assert np.max(np.abs(sol.du - dwant)) < 1e-9 * np.max(np.abs(dwant))


@pytest.mark.parametrize("q", [preset_potential("qb_right"),
                               Potential(2.5, ((-2.5, 2.5, lambda x: 1.7 * np.exp(-x * x)),),
                                         "even_gauss")])
def test_reflection_symmetry(q):
    xi = 3.9 - 0.2j
    minus = integrate_transverse(q, K, xi, "minus")
    plus = integrate_transverse(q, K, xi, "plus")
    scale = np.max(np.abs(minus.u))
    assert np.max(np.abs(plus.u - minus.u[::-1])) < 1e-10 * scale


def test_free_wronskian():
    q = preset_potential("zero", d=1.0)
    assert wronskian(q, K, 5.0) == pytest.approx(-8.0, abs=1e-12)
    xi = np.array([4.0, 6.0 - 1j])
    np.testing.assert_allclose(wronskian(q, K, xi), 2 * alpha_star(xi, K), atol=1e-12)


def test_wronskian_vanishes_at_reference_mode():
    q = preset_potential("qa_left")
    assert abs(wronskian(q, K, 3.7401)) < 1e-6 * 3.7401


def test_no_zero_beyond_xi_min():
    q = preset_potential("qa_left")
    top = K * math.sqrt(1 + q.M_q)
    xs = np.linspace(top + 1.0, 3 * top, 50)
    assert np.min(np.abs(wronskian(q, K, xs)) / xs) > 1e-2


@pytest.mark.parametrize("name", sorted(REFERENCE))
def test_reference_frequencies(name):
    ms = find_modes(preset_potential(name), K)
    for ref in REFERENCE[name]:
        assert np.min(np.abs(ms.frequencies - ref)) / ref < 1e-4


def test_well_matches_dispersion_oracle():
    ms = find_modes(preset_potential("qb_right"), K)
    roots = well_dispersion_roots(K, 3.0)
    assert len(ms) == len(roots)
    np.testing.assert_allclose(ms.frequencies, roots, rtol=1e-9)


def test_extra_modes_beyond_reference_lists():
    # the reference lists omit a weakly bound mode of q_r^a and one odd mode of q_r^b
    qa = find_modes(preset_potential("qa_right"), K).frequencies
    qb = find_modes(preset_potential("qb_right"), K).frequencies
    assert len(qa) == 3 and qa[0] == pytest.approx(3.00023962, abs=1e-7)
    assert len(qb) == 6 and np.any(np.abs(qb - 4.13700097) < 1e-7)


def test_zero_potential_has_no_modes():
    assert len(find_modes(preset_potential("zero"), K)) == 0


def test_shallow_well_single_even_mode():
    q = square_well(height=0.05, halfwidth=1.0)
    ms = find_modes(q, K)
    assert len(ms) == 1
    assert K < ms.frequencies[0] < K * math.sqrt(1.05)


@pytest.fixture(scope="module")
def left_modes():
    return find_modes(preset_potential("qa_left"), K)


def test_mode_continuity_at_edge(left_modes):
    for m in left_modes.modes:
        inner = eval_mode(m, np.array([m.d - 1e-13, -m.d + 1e-13]))
        assert abs(inner[0] - m.C_plus * math.exp(-m.kappa * m.d)) < 1e-9
        assert abs(inner[1] - m.C_minus * math.exp(-m.kappa * m.d)) < 1e-9


def test_mode_tail_off_axis(left_modes):
    m = left_modes.modes[0]
    z = 10 + 5j
    assert eval_mode(m, z) == pytest.approx(m.C_plus * np.exp(-m.kappa * z), rel=1e-14)
    ratio = abs(eval_mode(m, 20 + 5j)) / abs(eval_mode(m, z))
    assert ratio == pytest.approx(math.exp(-10 * m.kappa), rel=1e-12)


def test_mode_normalisation(left_modes):
    for m in left_modes.modes:
        h = 0.5 * np.diff(m.panels, axis=1)
        from leakywave.geometry import gauss_legendre
        _, w = gauss_legendre(m.nodes.shape[1])
        inner = np.sum(h * w[None, :] * m.v ** 2)
        tails = (m.C_plus ** 2 + m.C_minus ** 2) * math.exp(-2 * m.kappa * m.d) / (2 * m.kappa)
        assert inner + tails == pytest.approx(1.0, abs=1e-8)


def test_mode_satisfies_ode(left_modes):
    q = preset_potential("qa_left")
    m = left_modes.modes[1]
    x = np.linspace(-1.3, 1.7, 7)
    h = 1e-3
    v = lambda s: eval_mode(m, s + 0j).real
    lap = (v(x + h) - 2 * v(x) + v(x - h)) / h ** 2
    res = lap + (K * K * (1 + q(x)) - m.xi ** 2) * v(x)
    assert np.max(np.abs(res)) < 1e-4 * np.max(np.abs(v(x))) * m.xi ** 2


def test_mode_refuses_complex_channel_points(left_modes):
    with pytest.raises(OutOfRegion):
        eval_mode(left_modes.modes[0], 0.5 + 0.1j)
