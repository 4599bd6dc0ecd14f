"""Waveguide Green's function by Fourier synthesis of the transverse resolvent.

With the outgoing transverse resolvent g_q(xi; x2, y2) (L_xi g = delta) and
its free counterpart g_0 = exp(a|x2 - y2|)/(2a), a = alpha_star(xi),

    G(x; 0, y2) = (i/4) H0(k r) + w,
    w = int_{gamma_F} exp(i xi x1) wt(xi; x2, y2) dxi,
    wt = -(g_q - g_0) / (2 pi).

G solves (Laplace + k^2 (1 + q)) G = -delta. The integrand is even in xi and
gamma_F is odd, so only the half s > 0 is stored and the pair (xi, -xi) is
folded into 2 cos(xi x1) (or 2 xi sin(xi x1) for d/dy1).

Channel pairs close to each other converge slowly in xi. There a
constant-coefficient model with k'^2 = k^2 (1 + q_avg) plus a curvature
correction is subtracted under the integral and added back in closed form.
"""

import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from numpy.polynomial import chebyshev
from scipy import optimize, special

from . import _bessel
from ._parallel import ordered_map
from .errors import (AccuracyLoss, ConfigError, OutOfRegion, PoleProximity,
                     SeparationTooSmall, TurningPointError)
from .geometry import gauss_legendre
from .modes import DEFAULT_STEPS, TransverseSolution, transverse_traces
from .specfun import alpha_star, complex_distance

INV_2PI = 1.0 / (2.0 * math.pi)
STEP_LIMIT = 0.5          # |2 alpha| h bound for the RK4 sweeps
LOCAL_RADIUS = 1.2        # channel pairs closer than this use the local model
TARGETS = ("kernel_kD", "kernel_kC", "field")
SEPARABLE_LIMIT = 600.0   # |Re alpha| d below which wt factorises without overflow
BAND_TOL = 40.0           # exp(-BAND_TOL) terms are dropped for the other nodes
CHUNK = 1 << 21           # elements per temporary block


# ------------------------------------------------------------ Fourier contour

@dataclass(frozen=True)
class FourierContour:
    """Positive half of gamma_F: xi(s) = s - i tanh(s), s > 0."""
    s: np.ndarray
    xi: np.ndarray
    weights: np.ndarray        # Gauss-Legendre weight times dxi/ds
    panels: np.ndarray
    S_max: float
    S_model: float
    k: float
    target: str
    tol: float

    @property
    def size(self):
        return self.xi.size

    def full(self):
        """Nodes and weights over the whole contour (both halves)."""
        xi = np.concatenate([-self.xi[::-1], self.xi])
        w = np.concatenate([self.weights[::-1], self.weights])
        return xi, w

    def refined(self):
        """Same contour with every panel split in two."""
        mid = 0.5 * (self.panels[:, 0] + self.panels[:, 1])
        edges = np.unique(np.concatenate([self.panels.ravel(), mid]))
        return _contour_from_edges(edges, self.k, self.target, self.tol, self.S_model,
                                   self.s.size // len(self.panels))


def _xi(s):
    return s - 1j * np.tanh(s)


def _dxi(s):
    e = np.exp(-2.0 * np.abs(s))
    return 1.0 - 4j * e / (1.0 + e) ** 2


def _contour_from_edges(edges, k, target, tol, S_model, n):
    x, w = gauss_legendre(n)
    a, b = edges[:-1], edges[1:]
    half = 0.5 * (b - a)
    s = ((0.5 * (a + b))[:, None] + half[:, None] * x).ravel()
    ws = (half[:, None] * w).ravel()
    return FourierContour(s, _xi(s), ws * _dxi(s), np.column_stack([a, b]), float(edges[-1]),
                          S_model, k, target, tol)


def tail_cutoff(k, p, delta, tol):
    """Smallest S with exp(-delta sqrt(S^2 - k^2)) S^p < tol."""
    f = lambda S: -delta * math.sqrt(S * S - k * k) + p * math.log(S) - math.log(tol)
    lo = k * (1 + 1e-9)
    hi = 2.0 * k + 10.0
    while f(hi) > 0:
        hi *= 2.0
    if f(lo) < 0:
        return lo
    return optimize.brentq(f, lo, hi)


def build_fourier_contour(k, target="kernel_kD", tol=1e-10, delta_min=None, d=1.0,
                          x1_max=0.0, separation_max=20.0, xi_top=None, s_cap=400.0,
                          nodes_per_panel=16, floor=1e-3):
    """Panels on the positive half of gamma_F with a tail-model cutoff.

    ``separation_max`` is the largest real exponential separation the caller
    will request; it sets the resolution of the steepest-descent peak at
    xi = 0. ``xi_top`` should exceed every guided-mode frequency.
    """
    if target not in TARGETS:
        raise ConfigError(f"target must be one of {TARGETS}")
    if not tol > 0:
        raise ConfigError("tol must be positive")
    delta_min = floor * d if delta_min is None else delta_min
    if delta_min < floor * d:
        raise SeparationTooSmall(f"delta_min {delta_min:.3g} below floor {floor * d:.3g}")
    p = {"kernel_kD": 0, "kernel_kC": 2, "field": 1}[target]
    S_model = tail_cutoff(k, p, delta_min, tol)
    S = min(S_model, s_cap)
    xi_top = 2.0 * k if xi_top is None else xi_top

    h_peak = min(0.4, max(0.05, math.sqrt(k / max(separation_max, 1e-9))))
    h_mid = 0.4
    s1 = max(xi_top, k) + 4.0
    grow = 1.3
    h_max = math.inf if x1_max <= 0 else 4.0 * math.pi / x1_max

    edges = [0.0]
    while edges[-1] < k - 1e-12:
        edges.append(min(edges[-1] + h_peak, k))
    while edges[-1] < s1 - 1e-12:
        edges.append(min(edges[-1] + h_mid, s1))
    h = h_mid
    while edges[-1] < S - 1e-12:
        h = min(h * grow, h_max)
        edges.append(min(edges[-1] + h, S))
    return _contour_from_edges(np.array(edges), k, target, tol, S_model, nodes_per_panel)


# ----------------------------------------------------------- transverse cache

def second_derivative(pot, x, h=2e-3):
    """q'' by a five-point stencil inside the piece containing each point."""
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    inside = np.abs(x) <= pot.d
    idx = pot.piece_index(x)
    for i in range(len(pot.pieces)):
        m = inside & (idx == i)
        if np.any(m):
            xm = x[m]
            f = lambda t: pot.piece_values(i, t)
            out[m] = (-f(xm - 2 * h) + 16 * f(xm - h) - 30 * f(xm) + 16 * f(xm + h)
                      - f(xm + 2 * h)) / (12 * h * h)
    return out


def _step_count(alpha, d, n_min):
    need = np.ceil(np.abs(2.0 * alpha) * 2.0 * d / STEP_LIMIT)
    n = np.full(alpha.shape, n_min, dtype=float)
    while True:
        short = need > n
        if not np.any(short):
            return n.astype(int)
        n[short] *= 2


@dataclass(frozen=True)
class TransverseCache:
    """Normalised transverse solutions at stations for every Fourier node.

    ``phi_minus[i, m]`` and ``phi_plus[i, m]`` hold phi_-(s_i), phi_+(s_i)
    at node m. Stations always include -d and d.
    """
    potential: object
    k: float
    contour: FourierContour
    d: float
    stations: np.ndarray
    alpha: np.ndarray
    W: np.ndarray
    phi_minus: np.ndarray
    phi_plus: np.ndarray
    n_steps: np.ndarray
    q_int: np.ndarray = field(repr=False)
    q_val: np.ndarray = field(repr=False)
    q_dd: np.ndarray = field(repr=False)

    @property
    def xi(self):
        return self.contour.xi

    def station_index(self, x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        st = self.stations
        i = np.clip(np.searchsorted(st, x), 0, st.size - 1)
        j = np.clip(i - 1, 0, st.size - 1)
        pick = np.where(np.abs(st[j] - x) < np.abs(st[i] - x), j, i)
        bad = np.abs(st[pick] - x) > 1e-12 * np.maximum(1.0, np.abs(x))
        if np.any(bad):
            raise OutOfRegion(f"channel point {x[bad][0]!r} is not a cached station")
        return pick

    def refs(self, z):
        """(reference station index, exponential offset rho) per point."""
        z = np.atleast_1d(np.asarray(z, dtype=complex))
        re = z.real
        tol = 1e-12 * max(1.0, self.d)
        inside = np.abs(re) <= self.d + tol
        idx = np.empty(z.shape, dtype=int)
        rho = np.zeros(z.shape, dtype=complex)
        if np.any(inside):
            if np.any(np.abs(z[inside].imag) > tol):
                raise OutOfRegion("points over the channel must be real")
            idx[inside] = self.station_index(re[inside])
        right = ~inside & (re > 0)
        left = ~inside & (re < 0)
        idx[right] = self.stations.size - 1
        rho[right] = z[right] - self.d
        idx[left] = 0
        rho[left] = -self.d - z[left]
        return idx, rho

    def station_wt(self, u, v):
        """wt at station u against stations v; shape (M, len(v))."""
        v = np.atleast_1d(v)
        return self.pair_wt(np.full(v.shape, u), v).T

    def pair_wt(self, u, v, nodes=slice(None)):
        """wt for station pairs (u[p], v[p]); shape (P, M)."""
        su, sv = self.stations[u], self.stations[v]
        lo = np.where(su <= sv, u, v)
        hi = np.where(su <= sv, v, u)
        a = self.alpha[nodes][None, :]
        ratio = self.phi_plus[hi][:, nodes] * self.phi_minus[lo][:, nodes] / self.W[nodes]
        return -INV_2PI * np.exp(a * np.abs(sv - su)[:, None]) * (ratio - 0.5 / a)

    @cached_property
    def _factors(self):
        # with phi = 1 + psi, exp(a(hi - lo)) (phi_+(hi) phi_-(lo) / W - 1/(2a)) splits
        # into products of station factors, each small when q is
        small = np.abs(self.alpha.real) * self.d <= SEPARABLE_LIMIT
        a = self.alpha[small]
        Ep = np.exp(np.outer(self.stations, a))
        Em = np.exp(-np.outer(self.stations, a))
        psp = self.phi_plus[:, small] - 1.0
        psm = self.phi_minus[:, small] - 1.0
        iW = 1.0 / self.W[small]
        return dict(small=small, Ep=Ep, Em=Em, psp=psp, psm=psm, iW=iW, c=iW - 0.5 / a,
                    Epp=psp * Ep, Emm=psm * Em)

    def inside_sum(self, A, u, v):
        """sum_m A[t, m] wt_m(u[t], v[j]) for channel sources v; shape (T, len(v))."""
        f = self._factors
        S = f["small"]
        su, sv = self.stations[u], self.stations[v]
        out = np.zeros((u.size, v.size), dtype=complex)
        if np.any(S):
            As = A[:, S]
            iW, c = f["iW"], f["c"]
            with np.errstate(over="ignore", invalid="ignore"):
                a = As * f["Ep"][u]
                low = ((a * (c + f["psp"][u] * iW)) @ f["Em"][v].T
                       + (a * self.phi_plus[u][:, S] * iW) @ f["Emm"][v].T)
                b = As * f["Em"][u]
                up = ((b * (c + f["psm"][u] * iW)) @ f["Ep"][v].T
                      + (b * self.phi_minus[u][:, S] * iW) @ f["Epp"][v].T)
                out = -INV_2PI * np.where(sv[None, :] <= su[:, None], low, up)
        L = np.nonzero(~S)[0]
        if L.size:
            cut = BAND_TOL / np.min(np.abs(self.alpha[L].real))
            ti, vj = np.nonzero(np.abs(su[:, None] - sv[None, :]) <= cut)
            for sl in _chunks(ti.size, L.size):
                vals = self.pair_wt(u[ti[sl]], v[vj[sl]], L)
                out[ti[sl], vj[sl]] += np.einsum("pm,pm->p", A[ti[sl]][:, L], vals)
        return out

    def q_average(self, u, v):
        """Mean of q between stations u and v (broadcasting)."""
        su, sv = self.stations[u], self.stations[v]
        dx = sv - su
        close = np.abs(dx) < 1e-6
        safe = np.where(close, 1.0, dx)
        mean = (self.q_int[v] - self.q_int[u]) / safe
        return np.where(close, 0.5 * (self.q_val[u] + self.q_val[v]), mean)

    def local_params(self, u, v):
        """(k', c2) of the local model for station pairs."""
        kp = self.k * np.sqrt(1.0 + self.q_average(u, v))
        c2 = self.k ** 2 * 0.5 * (self.q_dd[u] + self.q_dd[v]) / 6.0
        return kp, c2

    def with_stations(self, extra):
        extra = np.asarray(extra, dtype=float).ravel()
        if np.all(np.isin(extra, self.stations)):
            return self
        return build_transverse_cache(self.potential, self.k, self.contour,
                                      np.concatenate([self.stations, extra]), d=self.d,
                                      n_steps=int(self.n_steps.min()))


def build_transverse_cache(pot, k, contour, stations=(), d=None, n_steps=DEFAULT_STEPS):
    """One RK4 sweep pair per step-count bin serves every station pair."""
    d = pot.d if d is None else d
    pot = pot.extended(d)
    st = np.asarray(stations, dtype=float).ravel()
    if np.any(np.abs(st) > d + 1e-12):
        raise ConfigError("stations must lie in the channel [-d, d]")
    st = np.unique(np.concatenate([st, [-d, d]]))
    alpha = np.atleast_1d(alpha_star(contour.xi, k))
    steps = _step_count(alpha, d, n_steps)
    M = alpha.size
    phi_m = np.empty((st.size, M), dtype=complex)
    phi_p = np.empty((st.size, M), dtype=complex)
    W = np.empty(M, dtype=complex)

    def sweep(n):
        sel = np.nonzero(steps == n)[0]
        Pm, Vm = transverse_traces(pot, k, alpha[sel], st, "minus", n)
        Pp, _ = transverse_traces(pot, k, alpha[sel], st, "plus", n)
        return sel, Pm, Vm[-1], Pp

    for sel, Pm, Vd, Pp in ordered_map(sweep, np.unique(steps)):
        phi_m[:, sel] = Pm
        phi_p[:, sel] = Pp
        W[sel] = 2.0 * alpha[sel] * Pm[-1] - Vd
    near = np.abs(W) < 1e-10 * np.maximum(1.0, np.abs(contour.xi))
    if np.any(near):
        raise PoleProximity(f"Wronskian nearly vanishes at xi = {contour.xi[near][0]:.6g}")
    return TransverseCache(pot, float(k), contour, float(d), st, alpha, W, phi_m, phi_p, steps,
                           pot.antiderivative(st), pot(st), second_derivative(pot, st))


def w_tilde(cache, xi, x2, y2, n_steps=DEFAULT_STEPS):
    """wt(xi; x2, y2) with the exponential-factor rule beyond +-d.

    Uses the cached traces when ``xi`` is a cache node; otherwise integrates
    the transverse equation afresh.
    """
    pot, k, d = cache.potential, cache.k, cache.d
    xi = complex(xi)
    hit = np.nonzero(np.abs(cache.xi - xi) <= 1e-14 * max(1.0, abs(xi)))[0]
    pts = []
    for z in (x2, y2):
        z = complex(z)
        if abs(z.real) <= d:
            if abs(z.imag) > 1e-12:
                raise OutOfRegion("points over the channel must be real")
            pts.append((z.real, 0.0))
        elif z.real > 0:
            pts.append((d, z - d))
        else:
            pts.append((-d, -d - z))
    (a, ra), (b, rb) = pts
    if hit.size:
        m = hit[0]
        c = cache.with_stations([a, b])
        u, v = c.station_index([a, b])
        val = c.station_wt(u, [v])[m, 0]
        al = c.alpha[m]
    else:
        al = alpha_star(xi, k)
        st = np.unique([-d, a, b, d])
        Pm, Vm = transverse_traces(pot.extended(d), k, [al], st, "minus", n_steps)
        Pp, _ = transverse_traces(pot.extended(d), k, [al], st, "plus", n_steps)
        W = 2.0 * al * Pm[-1, 0] - Vm[-1, 0]
        if abs(W) < 1e-10 * max(1.0, abs(xi)):
            raise PoleProximity("Wronskian nearly vanishes")
        lo, hi = sorted((a, b))
        il, ih = np.searchsorted(st, lo), np.searchsorted(st, hi)
        val = -INV_2PI * np.exp(al * (hi - lo)) * (Pp[ih, 0] * Pm[il, 0] / W - 0.5 / al)
    return complex(val * np.exp(al * (ra + rb)))


# ------------------------------------------------------------- local model

def _F(a, delta):
    return np.exp(a * delta) / (2.0 * a)


def _F2(a, delta):
    # second derivative of _F with respect to k'^2
    a2 = a * a
    return np.exp(a * delta) * (delta * delta / (8.0 * a * a2) - 3.0 * delta / (8.0 * a2 * a2)
                                + 3.0 / (8.0 * a2 * a2 * a))


def _model(a, c2, delta):
    # _F(a, delta) + c2 _F2(a, delta) with a single exponential
    inv = 1.0 / a
    return np.exp(a * delta) * inv * (0.5 + 0.125 * c2 * inv * inv
                                      * (delta * delta + 3.0 * inv * (inv - delta)))


def local_fourier(xi, k, kp, c2, delta, free=True):
    """Fourier-side local model (M, P) for P pairs."""
    a = alpha_star(xi[:, None], kp[None, :], check=False)
    out = _model(a, c2[None, :], delta[None, :])
    if free:
        a0 = alpha_star(xi, k, check=False)[:, None]
        out = out - _F(a0, delta[None, :])
    return -INV_2PI * out


def local_green(k, kp, c2, x1, delta):
    """Closed form of the local model in space and its y1-derivative."""
    r = np.sqrt(x1 * x1 + delta * delta)
    z, z0 = kp * r, k * r
    h0p, h1p, h2p = (special.hankel1(n, z) for n in (0, 1, 2))
    h00, h10 = special.hankel1(0, z0), special.hankel1(1, z0)
    val = 0.25j * (h0p - h00 + c2 * (r / (2 * kp)) ** 2 * h2p)
    dr = 0.25j * (-kp * h1p + k * h10 + c2 * r * r * h1p / (4 * kp))
    return val, -dr * x1 / r


def local_kernels(kp, c2, delta):
    """Per-medium (A_D, B_D, A_C, B_C) with k = A log(delta) + B.

    The medium-independent 1/(2 pi delta^2) pole of the C kernel is dropped;
    it cancels in every difference of media.
    """
    dl = np.maximum(delta, 1e-300)
    z = kp * dl
    lk = np.log(0.5 * kp)
    J0, R0 = _bessel.split(0, z)
    J1, R1 = _bessel.split(1, z)
    J2, R2 = _bessel.split(2, z)
    kp2, kp4 = kp * kp, kp ** 4
    A_D = -J0 / (2 * math.pi) - c2 * z * z * J2 / (8 * math.pi * kp4)
    zzY2 = -(4.0 + z * z) / math.pi + z * z * R2
    B_D = (0.25j * J0 - lk * J0 / (2 * math.pi) - 0.25 * R0
           + c2 / (16 * kp4) * (z * z * (1j * J2 - (2 / math.pi) * lk * J2) - zzY2))
    J1z = np.where(z < 1e-8, 0.5 - z * z / 16, J1 / z)
    R1z = R1 / z
    A_C = -kp2 * J1z / (2 * math.pi) + c2 * z * J1 / (8 * math.pi * kp2)
    zY1 = -2.0 / math.pi + z * R1
    B_C = (0.25 * kp2 * (1j * J1z - (2 / math.pi) * lk * J1z - R1z)
           - c2 / (16 * kp2) * (z * (1j * J1 - (2 / math.pi) * lk * J1) - zY1))
    return A_D, B_D, A_C, B_C


# -------------------------------------------------------------- synthesis

def _chunks(n, width):
    step = max(1, CHUNK // max(width, 1))
    for i in range(0, n, step):
        yield slice(i, min(i + step, n))


def synthesize(terms, t_idx, t_rho, t_weights, s_idx, s_rho):
    """Sum over Fourier nodes of weight_t(xi) * wt(xi; target, source).

    ``terms`` lists (cache, sign) pairs; their signed wt values are added
    (one medium for G, the r - l difference for kernels). ``t_weights`` is a
    list of (T, M) arrays sharing one target set. Returns one (T, N) array
    per weight array.
    """
    c0 = terms[0][0]
    alpha, last = c0.alpha, c0.stations.size - 1
    T, N = t_idx.size, s_idx.size
    Et = np.exp(alpha[None, :] * t_rho[:, None])
    A = [tw * Et for tw in t_weights]
    outs = [np.zeros((T, N), dtype=complex) for _ in t_weights]
    inside = s_rho == 0
    for v in (0, last):
        g = np.nonzero(~inside & (s_idx == v))[0]
        if not g.size:
            continue
        Es = np.exp(alpha[None, :] * s_rho[g, None])
        col = sum(sgn * c.pair_wt(t_idx, np.full(T, v)) for c, sgn in terms)
        for out, a in zip(outs, A):
            out[:, g] = (a * col) @ Es.T
    ins = np.nonzero(inside)[0]
    if ins.size:
        for out, a in zip(outs, A):
            out[:, ins] = sum(sgn * c.inside_sum(a, t_idx, s_idx[ins]) for c, sgn in terms)
    return outs


def local_pairs(cache, t_idx, t_rho, s_idx, s_rho, radius):
    """Channel target/source pairs within ``radius``: (rows, cols, delta)."""
    rows = np.nonzero(t_rho == 0)[0]
    cols = np.nonzero(s_rho == 0)[0]
    st = cache.stations
    delta = np.abs(st[t_idx[rows]][:, None] - st[s_idx[cols]][None, :])
    i, j = np.nonzero(delta <= radius)
    return rows[i], cols[j], delta[i, j]


def pair_sums(weights, rows, model, M):
    """sum_m weights[rows[p], m] * model(chunk)[p, m] for each weight array."""
    out = [np.zeros(rows.size, dtype=complex) for _ in weights]
    for sl in _chunks(rows.size, M):
        vals = model(sl)
        for o, w in zip(out, weights):
            o[sl] = np.einsum("pm,pm->p", w[rows[sl]], vals)
    return out


class GreensEvaluator:
    """G(x; 0, y2) and dG/dy1 for one medium."""

    def __init__(self, cache, L0=10.0, local_radius=LOCAL_RADIUS):
        self.cache = cache
        self.k = cache.k
        self.L0 = L0
        self.local_radius = local_radius
        self._widened = {}

    def with_stations(self, extra):
        key = tuple(np.unique(np.asarray(extra, dtype=float)))
        if key not in self._widened:
            cache = self.cache.with_stations(key)
            self._widened[key] = (self if cache is self.cache else
                                  GreensEvaluator(cache, self.L0, self.local_radius))
        return self._widened[key]

    def green_matrix(self, x1, x2, y2):
        """Arrays (T, N) of G and dG/dy1 for targets (x1, x2) and sources y2."""
        c = self.cache
        x1 = np.atleast_1d(np.asarray(x1, dtype=float))
        x2 = np.atleast_1d(np.asarray(x2, dtype=float))
        y2 = np.atleast_1d(np.asarray(y2, dtype=complex))
        if np.any(np.abs(x1) > self.L0):
            warnings.warn("|x1| exceeds L0; the Fourier contour is not designed for it",
                          AccuracyLoss, stacklevel=2)
        r = complex_distance(x1[:, None], x2[:, None], y2[None, :])
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", AccuracyLoss)
            h0, h1 = special.hankel1(0, self.k * r), special.hankel1(1, self.k * r)
        G = 0.25j * h0
        dG = 0.25j * self.k * h1 * x1[:, None] / r

        ti, tr = c.refs(x2)
        si, sr = c.refs(y2)
        xi, om = c.xi, c.contour.weights
        cosw = 2.0 * om[None, :] * np.cos(np.outer(x1, xi))
        sinw = 2.0 * om[None, :] * xi[None, :] * np.sin(np.outer(x1, xi))
        w, dw = synthesize([(c, 1.0)], ti, tr, [cosw, sinw], si, sr)

        # near channel pairs: swap the local model's Fourier sum for its closed form
        rows, cols, delta = local_pairs(c, ti, tr, si, sr, self.local_radius)
        if rows.size:
            kp, c2 = c.local_params(ti[rows], si[cols])
            fs, fd = pair_sums([cosw, sinw], rows, lambda sl: local_fourier(
                xi, c.k, kp[sl], c2[sl], delta[sl]).T, xi.size)
            lv, ld = local_green(c.k, kp, c2, x1[rows], delta)
            w[rows, cols] += lv - fs
            dw[rows, cols] += ld - fd
        return G + w, dG + dw

    def green(self, x, y2):
        """Scalar (G, dG/dy1) at target x = (x1, x2) for source (0, y2)."""
        G, dG = self.green_matrix([x[0]], [x[1]], [y2])
        return complex(G[0, 0]), complex(dG[0, 0])


def fd_residual(ev, source, x1, x2, h=1e-4):
    """|(Laplace_h + k^2 (1 + q(x2))) G| / local scale at targets x.

    The scale is max |G| over the five-point stencil. Stencil ordinates
    inside the channel must be cache stations.
    """
    x1 = np.atleast_1d(np.asarray(x1, dtype=float))
    x2 = np.atleast_1d(np.asarray(x2, dtype=float))
    y1, y2 = source
    off = [(0, 0), (h, 0), (-h, 0), (0, h), (0, -h)]
    vals = np.array([ev.green_matrix(x1 + a - y1, x2 + b, [y2])[0][:, 0] for a, b in off])
    lap = (vals[1:].sum(axis=0) - 4.0 * vals[0]) / (h * h)
    n2 = 1.0 + ev.cache.potential(x2)
    res = np.abs(lap + ev.k ** 2 * n2 * vals[0])
    return res / np.abs(vals).max(axis=0)


def fd_stations(x2, h=1e-4):
    """Ordinates needed by fd_residual."""
    x2 = np.atleast_1d(np.asarray(x2, dtype=float))
    return np.concatenate([x2, x2 + h, x2 - h])


def build_green_evaluator(pot, k, contour, stations=(), d=None, n_steps=DEFAULT_STEPS, L0=10.0):
    cache = build_transverse_cache(pot, k, contour, stations, d, n_steps)
    return GreensEvaluator(cache, L0)


# ------------------------------------------------------------------- WKB

def _wkb_terms(Vc, a, sgn, s, order, cheb_pts, n_cheb):
    """Chebyshev coefficients of y_0 + ... + y_{order-1} on one sub-interval."""
    Vv = chebyshev.chebval(cheb_pts, Vc)
    ratio = Vv / (a * a)
    if np.any(np.abs(ratio) < 1e-3):
        raise TurningPointError("alpha^2 - k^2 q nearly vanishes")
    y0v = sgn * a * np.sqrt(ratio)
    ys = [chebyshev.chebfit(cheb_pts, y0v, n_cheb - 1)]
    if order >= 2:
        dV = chebyshev.chebval(cheb_pts, chebyshev.chebder(Vc) / s)
        ys.append(chebyshev.chebfit(cheb_pts, -dV / (4 * Vv), n_cheb - 1))
    vals = [y0v] + [chebyshev.chebval(cheb_pts, y) for y in ys[1:]]
    for n in range(2, order):
        acc = -chebyshev.chebval(cheb_pts, chebyshev.chebder(ys[n - 1]) / s)
        for j in range(1, n):
            acc = acc - vals[j] * vals[n - j]
        yn = acc / (2 * y0v)
        vals.append(yn)
        ys.append(chebyshev.chebfit(cheb_pts, yn, n_cheb - 1))
    return np.sum(ys, axis=0)


def wkb_transverse(q, k, xi, order=6, grid=None, n_cheb=32, sub_len=0.5):
    """Exponent-series (WKB) solution u_- and u_+ traces on [-d, d].

    Writes u = exp(int y) with y' + y^2 = alpha^2 - k^2 q and expands y in
    descending powers of alpha. Each term lives on short Chebyshev
    sub-intervals of every smooth piece; the terms are local, so the
    sub-intervals are simply chained. Returns (minus, plus)
    TransverseSolution objects normalised like the RK solutions.
    """
    xi = complex(xi)
    a = alpha_star(xi, k)
    d = q.d
    grid = np.linspace(-d, d, 2001) if grid is None else np.asarray(grid, dtype=float)
    cheb_pts = np.cos(np.pi * (np.arange(n_cheb) + 0.5) / n_cheb)
    cells = []
    for i, (lo, hi, _) in enumerate(q.pieces):
        m = max(1, int(math.ceil((hi - lo) / sub_len)))
        edges = np.linspace(lo, hi, m + 1)
        cells += [(i, e0, e1) for e0, e1 in zip(edges[:-1], edges[1:])]
    sols = []
    for side in ("minus", "plus"):
        sgn = -1.0 if side == "minus" else 1.0
        logu = np.zeros(grid.shape, dtype=complex)
        yval = np.zeros(grid.shape, dtype=complex)
        seq = cells if side == "minus" else cells[::-1]
        # log u at the entry point, accumulated along the sweep
        acc = a * d
        start, end = (-1.0, 1.0) if side == "minus" else (1.0, -1.0)
        for i, lo, hi in seq:
            s = 0.5 * (hi - lo)
            xs = 0.5 * (lo + hi) + s * cheb_pts
            Vc = (-k * k * chebyshev.chebfit(cheb_pts, q.piece_values(i, xs), n_cheb - 1)
                  ).astype(complex)
            Vc[0] += a * a
            ytot = _wkb_terms(Vc, a, sgn, s, order, cheb_pts, n_cheb)
            integ = chebyshev.chebint(ytot) * s
            base = chebyshev.chebval(start, integ)
            m = (grid >= lo - 1e-14) & (grid <= hi + 1e-14)
            tloc = (grid[m] - 0.5 * (lo + hi)) / s
            logu[m] = acc + chebyshev.chebval(tloc, integ) - base
            yval[m] = chebyshev.chebval(tloc, ytot)
            acc = acc + chebyshev.chebval(end, integ) - base
        # phi = exp(-sgn a x) u, dphi = phi (y - sgn a)
        phi = np.exp(logu - sgn * a * grid)
        sols.append(TransverseSolution(xi, a, side, grid, phi, phi * (yval - sgn * a)))
    return tuple(sols)
