import math

import numpy as np
import pytest
from scipy import integrate, special

from leakywave.bie import (MAGIC, BoundaryData, SystemMatrix, assemble_system, dump_matrix,
                           extend_density, kernel_blocks, load_matrix, solve_system,
                           weighted_norm)
from leakywave.errors import ConfigError, NearSingular
from leakywave.geometry import build_admissible_contour, panelize, preset_potential, \
    truncate_at_depth
from leakywave.greens import build_fourier_contour, build_transverse_cache
from leakywave.kernels import KernelEvaluator

K = 3.0
TARGETS = np.array([-1.0, 0.4, 1.2])
LEVELS = (0.5, 0.25, 0.125)


def density(z):
    """Outgoing entire-like test density: exp(ik s) / sqrt(s), s = sqrt(1 + z^2)."""
    s = np.sqrt(z * z + 1)
    return np.exp(1j * K * s) / np.sqrt(s)


def data_on(disc):
    return BoundaryData(density(disc.z), 0.5 * density(disc.z), disc,
                        lambda z: (density(z), 0.5 * density(z)))


def composite_gauss(a, b, m, n=64):
    x, w = special.roots_legendre(n)
    e = np.linspace(a, b, m + 1)
    h, c = np.diff(e) / 2, (e[:-1] + e[1:]) / 2
    return (c[:, None] + h[:, None] * x).ravel(), (h[:, None] * w).ravel()


@pytest.fixture(scope="module")
def world():
    ql, qr = preset_potential("qa_left"), preset_potential("qa_right")
    d = max(ql.d, qr.d)
    ramp = build_admissible_contour("ramp", k=K, d=d, L=d + 1.5, slope=1.0)
    erf = build_admissible_contour("erf", k=K, d=d, A=20.0, t0=40.0, s=5.0)
    tr, tre = truncate_at_depth(ramp, 8.0), truncate_at_depth(erf, 8.0)
    discs = {"coarse": panelize(tr, 1.0, 16, d, 0.5), "fine": panelize(tr, 0.5, 16, d, 0.25),
             "erf": panelize(tre, 1.0, 16, d, 0.5)}
    for h in LEVELS:
        discs[h] = panelize(tr, 1.0, 8, d, h)
    y1, w1 = composite_gauss(-d, 0.4, 8)
    y2, w2 = composite_gauss(0.4, d, 8)
    oracle = (np.concatenate([y1, y2]), np.concatenate([w1, w2]))
    st = np.unique(np.concatenate([c.z[c.in_channel()].real for c in discs.values()]
                                  + [TARGETS, oracle[0]]))
    sep = 2 * (max(tr.t_max, tre.t_max) - d)
    fk = build_fourier_contour(K, "kernel_kC", separation_max=sep,
                               xi_top=K * math.sqrt(1 + ql.M_q), d=d)
    caches = [build_transverse_cache(q, K, fk, st, d) for q in (ql, qr)]
    ev = KernelEvaluator(caches[0], caches[1], ramp.L_C)
    return dict(ev=ev, discs=discs, ramp=ramp, tr=tr, d=d, oracle=oracle, caches=caches)


@pytest.fixture(scope="module")
def solved(world):
    out = {}
    for name in ("coarse", "fine", "erf"):
        disc = world["discs"][name]
        system = assemble_system(disc, world["ev"])
        out[name] = (system, solve_system(system, data_on(disc)))
    return out


# --------------------------------------------------------------- assembly

def test_identical_media_give_identity(world):
    c = world["caches"][0]
    disc = world["discs"]["coarse"]
    system = assemble_system(disc, KernelEvaluator(c, c, world["ramp"].L_C))
    assert np.array_equal(system.matrix, np.eye(2 * disc.n))


def test_zero_kernel_solve_returns_data(world):
    c = world["caches"][0]
    disc = world["discs"]["coarse"]
    system = assemble_system(disc, KernelEvaluator(c, c, world["ramp"].L_C))
    data = data_on(disc)
    dens = solve_system(system, data)
    assert np.max(np.abs(dens.sigma - data.f_D)) <= 1e-14
    assert np.max(np.abs(dens.tau - data.f_N)) <= 1e-14
    sig, tau = extend_density(dens, data.evaluate, KernelEvaluator(c, c, world["ramp"].L_C),
                              np.array([0.4, 7.0 + 1.2j]))
    np.testing.assert_allclose(sig, density(np.array([0.4, 7.0 + 1.2j])), rtol=1e-15)


def test_refinement_rate(world):
    ev = world["ev"]
    out = []
    for h in LEVELS:
        disc = world["discs"][h]
        KD, KC, _ = kernel_blocks(disc, ev, TARGETS + 0j)
        out.append(np.concatenate([KD @ density(disc.z), KC @ density(disc.z)]))
    diffs = np.abs(np.diff(np.array(out), axis=0))
    rates = np.log2(diffs[0] / diffs[1])
    assert np.all(rates >= 4.0)
    assert np.all(diffs[1] < 1e-6 * np.max(np.abs(out[-1])))


def test_panel_halving_agreement(world):
    ev = world["ev"]
    z = np.concatenate([TARGETS + 0j, [world["ramp"].z(np.array(world["d"] + 3.0))]])
    out = []
    for name in ("coarse", "fine"):
        disc = world["discs"][name]
        KD, KC, _ = kernel_blocks(disc, ev, z)
        out.append((KD @ density(disc.z), KC @ density(disc.z)))
    assert np.max(np.abs(out[0][0] - out[1][0])) < 1e-8
    assert np.max(np.abs(out[0][1] - out[1][1])) < 1e-6


def adaptive_row(world, kind, x):
    """Operator row by quad on the lifted parts and 64-point Gauss over the channel."""
    ev, ramp, tr, d = world["ev"], world["ramp"], world["tr"], world["d"]

    def g(t, part):
        z = ramp.z(np.array(t))
        v = ev.matrix(kind, [x], [z], check=False)[0, 0] * density(z) * (1 + 1j * ramp.dpsi(
            np.array(t)))
        return v.real if part == 0 else v.imag

    total = 0j
    for a, b in ((tr.t_lo, -d), (d, tr.t_hi)):
        re, im = (integrate.quad(g, a, b, args=(p,), epsabs=1e-13, epsrel=1e-12, limit=400)[0]
                  for p in (0, 1))
        total += re + 1j * im
    y, w = world["oracle"]
    return total + np.sum(w * ev.matrix(kind, [x], y + 0j, check=False)[0] * density(y + 0j))


@pytest.mark.parametrize("kind,where", [("kD", "channel"), ("kD", "lifted"), ("kC", "lifted")])
def test_rows_against_adaptive_quadrature(world, kind, where):
    x = 0.4 + 0j if where == "channel" else complex(world["ramp"].z(np.array(world["d"] + 3.0)))
    disc = world["discs"]["coarse"]
    KD, KC, _ = kernel_blocks(disc, world["ev"], np.array([x]))
    got = ((KD if kind == "kD" else KC) @ density(disc.z))[0]
    assert abs(got - adaptive_row(world, kind, x)) < 1e-8


def test_assembly_thread_independent(world, monkeypatch):
    ql, qr = preset_potential("qa_left"), preset_potential("qa_right")
    disc = world["discs"][0.5]
    fk = world["caches"][0].contour
    st = disc.z[disc.in_channel()].real
    mats = []
    for n in ("1", "3"):
        monkeypatch.setenv("LEAKYWAVE_THREADS", n)
        cs = [build_transverse_cache(q, K, fk, st, world["d"]) for q in (ql, qr)]
        mats.append(assemble_system(disc, KernelEvaluator(cs[0], cs[1], world["ramp"].L_C)))
    assert np.array_equal(mats[0].matrix, mats[1].matrix)


# ------------------------------------------------------------------ solve

def test_solve_residual_and_condition(solved):
    for system, dens in solved.values():
        assert dens.residual <= 1e-10
        assert 1 < dens.cond < 1e12


def test_schur_route_agrees(world, solved):
    system, dens = solved["coarse"]
    alt = solve_system(system, data_on(world["discs"]["coarse"]), schur=True)
    assert np.max(np.abs(alt.sigma - dens.sigma)) < 1e-10
    assert np.max(np.abs(alt.tau - dens.tau)) < 1e-10


def test_weighted_norms_stable_under_refinement(solved):
    norms = {}
    for name in ("coarse", "fine"):
        _, dens = solved[name]
        z = dens.disc.z
        norms[name] = (weighted_norm(dens.sigma, z, 0.25, K),
                       weighted_norm(dens.tau, z, 0.75, K))
    for a, b in zip(norms["coarse"], norms["fine"]):
        assert math.isfinite(a) and abs(a - b) < 0.01 * b


def test_operator_damping(world):
    disc = world["discs"]["coarse"]
    KD, KC, _ = kernel_blocks(disc, world["ev"])
    f = density(disc.z)
    f = f / weighted_norm(f, disc.z, 0.25, K)
    assert weighted_norm(KD @ f, disc.z, 0.25, K) < 1.0
    assert weighted_norm(KC @ f, disc.z, 0.25, K) < 10.0


def test_near_singular_refused(world):
    disc = world["discs"]["coarse"]
    M = np.eye(2 * disc.n, dtype=complex)
    M[0] = M[1]
    with pytest.raises(NearSingular):
        solve_system(SystemMatrix(M, disc, np.zeros((disc.n, disc.n), bool)), data_on(disc))


# -------------------------------------------------------------- extension

def test_extension_at_nodes(world, solved):
    _, dens = solved["coarse"]
    disc = dens.disc
    idx = [3, disc.n // 2, disc.n - 5]
    sig, tau = extend_density(dens, data_on(disc).evaluate, world["ev"], disc.z[idx])
    assert np.array_equal(sig, dens.sigma[idx]) and np.array_equal(tau, dens.tau[idx])


def test_extension_off_node_is_consistent(world, solved):
    # extension at a node via the formula, with the node snap disabled by a tiny shift
    _, dens = solved["coarse"]
    disc = dens.disc
    i = disc.n - 40
    z = disc.z[i] + 1e-9 * (1 + 1j)
    sig, tau = extend_density(dens, data_on(disc).evaluate, world["ev"], np.array([z]))
    assert abs(sig[0] - dens.sigma[i]) < 1e-7 and abs(tau[0] - dens.tau[i]) < 1e-7


def test_extension_to_real_points_matches_flat_contour_solve(world, solved):
    # real points beyond the ramp's flat part lie on the erf contour's flat part
    x = np.array([5.0, -7.3, 8.1]) + 0j
    assert np.all(np.abs(x) < build_admissible_contour("erf", k=K, d=world["d"], A=20.0,
                                                       t0=40.0, s=5.0).L_C)
    ext = []
    for name in ("coarse", "erf"):
        _, dens = solved[name]
        ext.append(extend_density(dens, data_on(dens.disc).evaluate, world["ev"], x))
    for a, b in zip(*ext):
        assert np.max(np.abs(a - b)) < 1e-10


# ---------------------------------------------------------------- dump

def test_matrix_dump_round_trip(tmp_path, solved):
    system, _ = solved["coarse"]
    path = tmp_path / "m.bin"
    dump_matrix(path, system.matrix)
    raw = path.read_bytes()
    assert raw[:8] == MAGIC == b"LWBIE001"
    assert len(raw) == 8 + 16 * system.matrix.size
    first = np.frombuffer(raw[8:24], dtype="<c16")[0]
    assert first == system.matrix[0, 0]
    second = np.frombuffer(raw[24:40], dtype="<c16")[0]
    assert second == system.matrix[0, 1]          # row-major
    assert np.array_equal(load_matrix(path), system.matrix)


def test_matrix_dump_rejects_bad_magic(tmp_path):
    path = tmp_path / "bad.bin"
    path.write_bytes(b"NOTMAGIC" + bytes(16))
    with pytest.raises(ConfigError):
        load_matrix(path)
