"""Transverse ODE solutions, Wronskians and guided modes.

The particular solutions u_-(x) = exp(-a x) for x < -d and u_+(x) = exp(a x)
for x > d (a = alpha_star(xi)) are carried in normalised form
phi_-(x) = exp(a x) u_-(x), phi_+(x) = exp(-a x) u_+(x). These satisfy

    phi_-'' =  2 a phi_-' - k^2 q phi_-,     phi_-(-d) = 1, phi_-'(-d) = 0,
    phi_+'' = -2 a phi_+' - k^2 q phi_+,     phi_+(d)  = 1, phi_+'(d)  = 0,

stay bounded for every xi off the cuts, and make the free solution exact.
"""

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .errors import ConfigError, ModeMissRisk, OutOfRegion, StiffnessWarning
from .geometry import gauss_legendre
from .specfun import alpha_star

DEFAULT_STEPS = 4000
STIFF_LIMIT = 0.1


# ------------------------------------------------------------- integration

def _step_grid(pot, n_steps, stations, side):
    """Ordered integration nodes and per-step q samples.

    Every breakpoint of q and every station is a node; steps never straddle
    a breakpoint so each step samples a single smooth piece.
    """
    d = pot.d
    nodes = [np.asarray(stations, dtype=float)]
    for a, b, _ in pot.pieces:
        n = max(1, math.ceil(n_steps * (b - a) / (2 * d)))
        nodes.append(np.linspace(a, b, n + 1))
    x = np.unique(np.concatenate(nodes))
    x = x[(x >= -d) & (x <= d)]
    if side == "plus":
        x = x[::-1]
    h = np.diff(x)
    mid = x[:-1] + 0.5 * h
    piece = pot.piece_index(mid)
    q0 = np.empty_like(h)
    qm = np.empty_like(h)
    q1 = np.empty_like(h)
    for i in range(len(pot.pieces)):
        m = piece == i
        if np.any(m):
            q0[m] = pot.piece_values(i, x[:-1][m])
            qm[m] = pot.piece_values(i, mid[m])
            q1[m] = pot.piece_values(i, x[1:][m])
    return x, h, q0, qm, q1


def _rk4_sweep(alpha, k, grid, stations, side):
    """Classical RK4 on the normalised system, vectorised over ``alpha``.

    Returns (phi, dphi) at ``stations`` with shape (len(stations), len(alpha)).
    """
    x, h, q0, qm, q1 = grid
    alpha = np.atleast_1d(np.asarray(alpha, dtype=complex))
    c = (2.0 if side == "minus" else -2.0) * alpha
    kk = k * k
    p = np.ones_like(alpha)
    v = np.zeros_like(alpha)
    st = np.asarray(stations, dtype=float)
    want = {float(s): i for i, s in enumerate(st)}
    P = np.empty((st.size, alpha.size), dtype=complex)
    V = np.empty_like(P)
    if float(x[0]) in want:
        P[want[float(x[0])]] = p
        V[want[float(x[0])]] = v
    for i in range(h.size):
        hh = h[i]
        a0, am, a1 = kk * q0[i], kk * qm[i], kk * q1[i]
        k1p = v
        k1v = c * v - a0 * p
        vp = v + 0.5 * hh * k1v
        k2v = c * vp - am * (p + 0.5 * hh * k1p)
        vq = v + 0.5 * hh * k2v
        k3v = c * vq - am * (p + 0.5 * hh * vp)
        vr = v + hh * k3v
        k4v = c * vr - a1 * (p + hh * vq)
        p = p + (hh / 6.0) * (k1p + 2.0 * vp + 2.0 * vq + vr)
        v = v + (hh / 6.0) * (k1v + 2.0 * k2v + 2.0 * k3v + k4v)
        j = want.get(float(x[i + 1]))
        if j is not None:
            P[j] = p
            V[j] = v
    return P, V


def transverse_traces(pot, k, alpha, stations, side, n_steps=DEFAULT_STEPS):
    """Normalised solution (phi, dphi) at stations for many alpha at once."""
    stations = np.asarray(stations, dtype=float)
    if np.any(np.abs(stations) > pot.d + 1e-12):
        raise ConfigError("stations must lie in [-d, d]")
    grid = _step_grid(pot, n_steps, stations, side)
    return _rk4_sweep(alpha, k, grid, stations, side)


@dataclass(frozen=True)
class TransverseSolution:
    xi: complex
    alpha: complex
    side: str
    grid: np.ndarray
    phi: np.ndarray
    dphi: np.ndarray

    @property
    def u(self):
        s = -1.0 if self.side == "minus" else 1.0
        return np.exp(s * self.alpha * self.grid) * self.phi

    @property
    def du(self):
        s = -1.0 if self.side == "minus" else 1.0
        return np.exp(s * self.alpha * self.grid) * (self.dphi + s * self.alpha * self.phi)

    def trace(self, at):
        """(u, du) at the endpoint ``at`` in {-d, d}."""
        i = int(np.argmin(np.abs(self.grid - at)))
        return self.u[i], self.du[i]


def integrate_transverse(q, k, xi, side, n_steps=DEFAULT_STEPS, grid=None):
    """u_- (side='minus', from -d rightwards) or u_+ (side='plus')."""
    if side not in ("minus", "plus"):
        raise ConfigError("side must be 'minus' or 'plus'")
    a = alpha_star(xi, k)
    if abs(a) * 2 * q.d / n_steps > STIFF_LIMIT:
        warnings.warn(f"|alpha|*2d/N = {abs(a) * 2 * q.d / n_steps:.3g} exceeds {STIFF_LIMIT}",
                      StiffnessWarning, stacklevel=2)
    if grid is None:
        grid = np.linspace(-q.d, q.d, n_steps + 1)
    grid = np.asarray(grid, dtype=float)
    P, V = transverse_traces(q, k, [a], grid, side, n_steps)
    return TransverseSolution(complex(xi), complex(a), side, grid, P[:, 0], V[:, 0])


def _wronskian_from_minus(alpha, phi_d, dphi_d):
    # phi_+ = 1, phi_+' = 0 at x = d
    return 2.0 * alpha * phi_d - dphi_d


def wronskian(q, k, xi, n_steps=DEFAULT_STEPS):
    """W = u_- u_+' - u_+ u_-' (independent of x); vectorised over xi."""
    xi = np.asarray(xi)
    a = np.atleast_1d(alpha_star(xi.astype(complex), k))
    P, V = transverse_traces(q, k, a, [q.d], "minus", n_steps)
    W = _wronskian_from_minus(a, P[0], V[0])
    return W.reshape(xi.shape) if xi.ndim else complex(W[0])


# ------------------------------------------------------------------- modes

@dataclass(frozen=True)
class Mode:
    xi: float
    kappa: float
    nodes: np.ndarray          # (P, n) Gauss-Legendre nodes per panel
    panels: np.ndarray         # (P, 2)
    v: np.ndarray              # (P, n) normalised eigenfunction
    dv: np.ndarray
    C_plus: float
    C_minus: float
    d: float
    wronskian: float


@dataclass(frozen=True)
class ModeSet:
    k: float
    potential: str
    modes: tuple
    xi_min: float

    @property
    def frequencies(self):
        return np.array([m.xi for m in self.modes])

    def __len__(self):
        return len(self.modes)


def _mode_panels(pot, max_len=0.25, n=16):
    edges = []
    for a, b, _ in pot.pieces:
        m = max(1, math.ceil((b - a) / max_len))
        edges.extend(np.linspace(a, b, m + 1)[:-1].tolist())
    edges.append(pot.d)
    edges = np.array(edges)
    x, w = gauss_legendre(n)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[:-1] + edges[1:])
    nodes = mid[:, None] + half[:, None] * x
    weights = half[:, None] * w
    return np.column_stack([edges[:-1], edges[1:]]), nodes, weights


def _build_mode(pot, k, xi, n_steps, W):
    kappa = math.sqrt(xi * xi - k * k)
    panels, nodes, weights = _mode_panels(pot)
    st = np.concatenate([nodes.ravel(), [-pot.d, pot.d]])
    P, V = transverse_traces(pot, k, [-kappa], st, "minus", n_steps)
    phi, dphi = P[:, 0].real, V[:, 0].real
    grow = np.exp(kappa * st)
    u = grow * phi
    du = grow * (dphi + kappa * phi)
    u_left, u_right = u[-2], u[-1]
    interior = u[:-2].reshape(nodes.shape)
    dint = du[:-2].reshape(nodes.shape)
    norm2 = np.sum(weights * interior ** 2) + (u_left ** 2 + u_right ** 2) / (2 * kappa)
    scale = math.copysign(1.0 / math.sqrt(norm2), u_right)
    C_plus = u_right * scale * math.exp(kappa * pot.d)
    C_minus = u_left * scale * math.exp(kappa * pot.d)
    return Mode(xi, kappa, nodes, panels, interior * scale, dint * scale, C_plus, C_minus,
                pot.d, float(W))


def find_modes(q, k, n_scan=2000, n_steps=DEFAULT_STEPS, rtol=1e-11, max_rounds=3):
    """Guided-mode frequencies in (k, k sqrt(1 + M_q)) with eigenfunctions."""
    xi_min = k * math.sqrt(1.0 + q.M_q)
    if q.is_zero:
        return ModeSet(k, q.name, (), xi_min)
    lo, hi = k * (1.0 + 1e-8), xi_min
    n = n_scan
    for _ in range(max_rounds + 1):
        grid = np.linspace(lo, hi, n)
        W = wronskian(q, k, grid, n_steps).real
        s = np.sign(W)
        flips = np.nonzero(s[:-1] * s[1:] < 0)[0]
        crowded = np.any(np.diff(flips) == 1)
        if not crowded:
            break
        n *= 4
    else:
        warnings.warn("adjacent sign changes persist after refinement", ModeMissRisk,
                      stacklevel=2)

    def f(x):
        return wronskian(q, k, np.array([x]), n_steps).real[0]

    modes = []
    for i in flips:
        root = optimize.brentq(f, grid[i], grid[i + 1], xtol=rtol * grid[i], rtol=rtol)
        modes.append(_build_mode(q, k, root, n_steps, f(root)))
    return ModeSet(k, q.name, tuple(modes), xi_min)


def _bary_weights(x):
    diff = x[:, None] - x[None, :]
    np.fill_diagonal(diff, 1.0)
    return 1.0 / np.prod(diff, axis=1)


def eval_mode(mode, z, tol=1e-12):
    """Eigenfunction at points of the complexified interface region."""
    z = np.asarray(z, dtype=complex)
    flat = z.ravel()
    out = np.empty(flat.shape, dtype=complex)
    re, im = flat.real, flat.imag
    inner = np.abs(re) <= mode.d
    if np.any(inner & (np.abs(im) > tol)):
        raise OutOfRegion("interior evaluation points must be real")
    if np.any((re > mode.d) & (im < -tol)) or np.any((re < -mode.d) & (im > tol)):
        raise OutOfRegion("point outside the complexified region")
    right, left = re > mode.d, re < -mode.d
    out[right] = mode.C_plus * np.exp(-mode.kappa * flat[right])
    out[left] = mode.C_minus * np.exp(mode.kappa * flat[left])
    if np.any(inner):
        x = re[inner]
        p = np.clip(np.searchsorted(mode.panels[:, 1], x), 0, len(mode.panels) - 1)
        vals = np.empty(x.shape)
        for j in np.unique(p):
            m = p == j
            nodes = mode.nodes[j]
            bw = _bary_weights(nodes)
            diff = x[m][:, None] - nodes[None, :]
            exact = np.isclose(diff, 0.0, atol=1e-15, rtol=0)
            diff[exact] = 1.0
            terms = bw / diff
            v = (terms @ mode.v[j]) / terms.sum(axis=1)
            hit = exact.any(axis=1)
            if np.any(hit):
                v[hit] = mode.v[j][np.argmax(exact[hit], axis=1)]
            vals[m] = v
        out[inner] = vals
    return out.reshape(z.shape) if z.ndim else complex(out[0])
