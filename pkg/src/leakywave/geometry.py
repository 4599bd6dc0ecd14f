"""Potentials, complexified interface contours, truncation and panels."""

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from numpy.polynomial import legendre
from scipy import interpolate, optimize, special

from .errors import (ConfigError, MonotonicityViolation, SlopeViolation,
                     UnreachableDepth)

GAUSSIAN_CUTOFF = 1e-16
FLAT_TOL = 1e-15          # lift treated as zero below this multiple of |t|


@lru_cache(maxsize=None)
def gauss_legendre(n):
    x, w = legendre.leggauss(n)
    x.flags.writeable = False
    w.flags.writeable = False
    return x, w


# ---------------------------------------------------------------- potentials

@dataclass(frozen=True)
class Potential:
    """Piecewise-smooth transverse profile supported in [-d, d].

    ``pieces`` is a tuple of ``(a, b, f)`` with consecutive intervals tiling
    [-d, d]; each ``f`` is a vectorised callable smooth on its closed
    interval, so evaluating it at an endpoint gives the one-sided limit.
    """
    d: float
    pieces: tuple
    name: str = "custom"
    M_q: float = field(init=False)

    def __post_init__(self):
        if self.d <= 0:
            raise ConfigError("half width d must be positive")
        edges = [p[0] for p in self.pieces] + [self.pieces[-1][1]]
        if abs(edges[0] + self.d) > 1e-12 or abs(edges[-1] - self.d) > 1e-12:
            raise ConfigError("pieces must tile [-d, d]")
        if any(b <= a for a, b in zip(edges[:-1], edges[1:])):
            raise ConfigError("piece intervals must be increasing")
        top = 0.0
        for i, (a, b, _) in enumerate(self.pieces):
            s = self.piece_values(i, np.linspace(a, b, 2001))
            if np.any(s < -1e-14):
                raise ConfigError("potential must be nonnegative")
            top = max(top, float(s.max()))
        object.__setattr__(self, "M_q", top)

    @property
    def breakpoints(self):
        return np.array([p[0] for p in self.pieces] + [self.pieces[-1][1]])

    @property
    def is_zero(self):
        return self.M_q == 0.0

    def piece_values(self, i, x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(np.asarray(self.pieces[i][2](x), dtype=float), x.shape).copy()

    def piece_index(self, x):
        edges = self.breakpoints
        return np.clip(np.searchsorted(edges, x, side="right") - 1, 0, len(self.pieces) - 1)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        idx = self.piece_index(x)
        inside = np.abs(x) <= self.d
        for i in range(len(self.pieces)):
            m = inside & (idx == i)
            if np.any(m):
                out[m] = self.piece_values(i, x[m])
        return out if out.ndim else float(out)

    def antiderivative(self, x, panel_len=0.05, n=16):
        """Integral of q from -d to x (Gauss-Legendre on each smooth piece)."""
        x = np.clip(np.asarray(x, dtype=float), -self.d, self.d)
        gx, gw = gauss_legendre(n)
        edges = self.breakpoints
        # integral over whole pieces to the left
        full = np.zeros(len(self.pieces) + 1)
        for i, (a, b, _) in enumerate(self.pieces):
            full[i + 1] = full[i] + self._piece_integral(i, a, b, panel_len, gx, gw)
        idx = self.piece_index(x)
        out = np.empty_like(x)
        flat = x.ravel()
        res = out.ravel()
        for j, (xv, i) in enumerate(zip(flat, idx.ravel())):
            a = edges[i]
            res[j] = full[i] + self._piece_integral(i, a, xv, panel_len, gx, gw)
        return res.reshape(x.shape) if x.ndim else float(res[0])

    def _piece_integral(self, i, a, b, panel_len, gx, gw):
        if b <= a:
            return 0.0
        m = max(1, math.ceil((b - a) / panel_len))
        e = np.linspace(a, b, m + 1)
        h = 0.5 * np.diff(e)
        pts = (0.5 * (e[:-1] + e[1:]))[:, None] + h[:, None] * gx
        return float(np.sum(h[:, None] * gw * self.piece_values(i, pts)))

    def extended(self, d):
        """Same profile viewed on a wider support [-d, d]."""
        if d < self.d - 1e-12:
            raise ConfigError("cannot shrink the support of a potential")
        if d <= self.d + 1e-12:
            return self
        zero = _constant(0.0)
        pieces = ((-d, -self.d, zero),) + tuple(self.pieces) + ((self.d, d, zero),)
        return Potential(d, pieces, self.name)


def _constant(c):
    return lambda x: np.full(np.shape(x), c, dtype=float)


def _gaussian_cutoff(envelope, width2):
    # envelope * exp(-x^2 / width2) < GAUSSIAN_CUTOFF
    return math.sqrt(width2 * math.log(envelope / GAUSSIAN_CUTOFF))


def qa_left():
    def f(x):
        return 2.0 * np.exp(-2.0 * x ** 2) * (3.0 + 2.0 * np.cos(5.0 * np.pi * x + 0.7)
                                             - np.cos(2.0 * x + 1.6))
    d = _gaussian_cutoff(2.0 * 6.0, 0.5)
    return Potential(d, ((-d, d, f),), "qa_left")


def qa_right():
    def f(x):
        return (8.0 / 3.0) * np.exp(-x ** 2 / 0.245) * (1.53 - np.cos(1.05)
                                                       + 0.53 * np.cos(x + 0.25))
    env = (8.0 / 3.0) * (1.53 - math.cos(1.05) + 0.53)
    d = _gaussian_cutoff(env, 0.245)
    return Potential(d, ((-d, d, f),), "qa_right")


def square_well(height=1.0, halfwidth=3.0, d=None):
    d = halfwidth if d is None else d
    well = (-halfwidth, halfwidth, _constant(height))
    pot = Potential(halfwidth, (well,), "square_well")
    return pot.extended(d)


def qb_right():
    pot = square_well(1.0, 3.0)
    return Potential(pot.d, pot.pieces, "qb_right")


def zero_potential(d=1.0):
    return Potential(d, ((-d, d, _constant(0.0)),), "zero")


def tabulated_potential(breaks, values, name="tabulated"):
    """Piecewise-constant profile: ``values[i]`` on ``[breaks[i], breaks[i+1]]``."""
    breaks = [float(b) for b in breaks]
    if len(values) != len(breaks) - 1:
        raise ConfigError("need one value per interval")
    if abs(breaks[0] + breaks[-1]) > 1e-12:
        raise ConfigError("tabulated support must be symmetric")
    pieces = tuple((a, b, _constant(float(v))) for a, b, v in zip(breaks[:-1], breaks[1:], values))
    return Potential(breaks[-1], pieces, name)


PRESETS = {
    "qa_left": qa_left,
    "qa_right": qa_right,
    "qb_right": qb_right,
    "zero": zero_potential,
}


def preset_potential(name, **params):
    if name == "square_well":
        return square_well(**params)
    if name not in PRESETS:
        raise ConfigError(f"unknown potential preset {name!r}")
    return PRESETS[name](**params)


# ------------------------------------------------------------------ contours

@dataclass(frozen=True)
class AdmissibleContour:
    psi: object
    dpsi: object
    L_C: float
    c_lo: float
    c_hi: float
    R0: float
    k: float
    family: str
    params: dict
    t_limit: float

    def z(self, t):
        t = np.asarray(t, dtype=float)
        return t + 1j * self.psi(t)

    def dz(self, t):
        return 1.0 + 1j * self.dpsi(np.asarray(t, dtype=float))

    @property
    def sup_psi(self):
        return float(self.psi(np.array(self.t_limit)))


def _erf_lift(A, t0, s):
    c = 2.0 * A / (s * math.sqrt(math.pi))

    def psi(t):
        t = np.asarray(t, dtype=float)
        # written with erfc so that values near the flat part keep full precision
        return A * (special.erfc((t0 - t) / s) - special.erfc((t0 + t) / s))

    def dpsi(t):
        t = np.asarray(t, dtype=float)
        return c * (np.exp(-((t0 + t) / s) ** 2) + np.exp(-((t0 - t) / s) ** 2))

    return psi, dpsi


def _ramp_lift(L, slope):
    def psi(t):
        t = np.asarray(t, dtype=float)
        return slope * np.sign(t) * np.maximum(np.abs(t) - L, 0.0)

    def dpsi(t):
        return np.where(np.abs(np.asarray(t, dtype=float)) > L, slope, 0.0)

    return psi, dpsi


def _tabulated_lift(ts, ps, scale):
    spline = interpolate.PchipInterpolator(np.asarray(ts, float), np.asarray(ps, float),
                                           extrapolate=True)
    h = 1e-6 * scale

    def dpsi(t):
        t = np.asarray(t, dtype=float)
        return (spline(t - 2 * h) - 8 * spline(t - h) + 8 * spline(t + h)
                - spline(t + 2 * h)) / (12 * h)

    return (lambda t: spline(np.asarray(t, float))), dpsi


def _flat_extent(psi, upper):
    # largest L with |psi| <= FLAT_TOL * L on [-L, L]
    def g(t):
        return max(abs(float(psi(np.array(t)))), abs(float(psi(np.array(-t))))) - FLAT_TOL * t
    if g(upper) <= 0:
        return upper
    lo = 1e-9
    if g(lo) > 0:
        return 0.0
    return optimize.brentq(g, lo, upper, xtol=1e-12)


def build_admissible_contour(kind, k=3.0, d=None, check_slope=True, **params):
    """Construct and certify an admissible contour.

    Families: ``erf`` (A, t0, s), ``ramp`` (L, slope), ``tabulated`` (t, psi),
    ``real``.
    """
    kind = kind.lower()
    if kind == "erf":
        A, t0, s = params.get("A", 20.0), params.get("t0", 40.0), params.get("s", 5.0)
        psi, dpsi = _erf_lift(A, t0, s)
        t_limit = params.get("t_limit", t0 + 12.0 * s)
        L_C = _flat_extent(psi, t0)
        R0 = params.get("R0", t0)
    elif kind == "ramp":
        L, slope = params["L"], params.get("slope", 1.0)
        psi, dpsi = _ramp_lift(L, slope)
        t_limit = params.get("t_limit", L + 100.0 / slope)
        L_C = L
        R0 = params.get("R0", 2.0 * L)
    elif kind == "tabulated":
        ts, ps = np.asarray(params["t"], float), np.asarray(params["psi"], float)
        psi, dpsi = _tabulated_lift(ts, ps, float(np.ptp(ts)))
        t_limit = params.get("t_limit", float(np.max(np.abs(ts))))
        L_C = _flat_extent(psi, t_limit)
        R0 = params.get("R0", max(2.0 * L_C, 1.0))
    elif kind == "real":
        psi = lambda t: np.zeros_like(np.asarray(t, dtype=float))
        dpsi = psi
        t_limit = params.get("t_limit", 60.0)
        L_C = math.inf
        R0 = params.get("R0", t_limit)
        check_slope = False
    else:
        raise ConfigError(f"unknown contour family {kind!r}")

    if d is not None and not L_C > d:
        raise ConfigError(f"flat half width {L_C} must exceed d = {d}")

    span = max(t_limit, 10.0 * R0) if math.isfinite(R0) else t_limit
    grid = np.linspace(-span, span, 20001)
    vals = psi(grid)
    if np.any(np.diff(vals) < -1e-12 * max(1.0, np.abs(vals).max())):
        raise MonotonicityViolation("imaginary lift decreases somewhere")
    if math.isfinite(L_C):
        beyond = np.abs(grid) > L_C
        if np.any(np.sign(grid[beyond]) * vals[beyond] < -1e-12):
            raise MonotonicityViolation("lift leaves the admissible quadrants")

    c_lo = c_hi = 0.0
    if check_slope:
        far = np.linspace(R0, 10.0 * R0, 4001)
        ratios = np.concatenate([np.abs(psi(far)) / far, np.abs(psi(-far)) / far])
        c_lo, c_hi = float(ratios.min()), float(ratios.max())
        if not c_lo > 0:
            raise SlopeViolation("slope condition fails on the certification window")

    return AdmissibleContour(psi, dpsi, L_C, c_lo, c_hi, R0, k, kind, dict(params), t_limit)


@dataclass(frozen=True)
class TruncatedContour:
    parent: AdmissibleContour
    beta: float
    eps: float
    t_lo: float
    t_hi: float
    saturated: bool

    @property
    def t_max(self):
        return max(-self.t_lo, self.t_hi)

    @property
    def depth(self):
        return math.log(1.0 / self.eps) / self.beta


def _cut_parameter(psi, depth, start, stop):
    f = lambda t: abs(float(psi(np.array(t)))) - depth
    if f(stop) < 0:
        return None
    if f(start) >= 0:
        return start
    return optimize.brentq(f, start, stop, xtol=1e-13, rtol=1e-15)


def truncate_contour(contour, beta, eps, allow_saturation=True):
    """Cut the contour where exp(-beta |Im z|) = eps."""
    if not beta > 0 or not 0 < eps <= 1:
        raise ConfigError("need beta > 0 and 0 < eps <= 1")
    depth = math.log(1.0 / eps) / beta
    L = contour.L_C if math.isfinite(contour.L_C) else 0.0
    if depth <= 1e-12 * max(L, 1.0):
        return TruncatedContour(contour, beta, eps, -L, L, False)
    sides = []
    saturated = False
    for sgn in (1.0, -1.0):
        psi = lambda t, s=sgn: contour.psi(s * np.asarray(t))
        t = _cut_parameter(psi, depth, L, contour.t_limit)
        if t is None:
            if not allow_saturation:
                raise UnreachableDepth(f"lift never reaches depth {depth:.6g}")
            t, saturated = contour.t_limit, True
        sides.append(t)
    return TruncatedContour(contour, beta, eps, -sides[1], sides[0], saturated)


def truncate_at_depth(contour, depth, beta=None, **kw):
    beta = contour.k if beta is None else beta
    return truncate_contour(contour, beta, math.exp(-beta * depth), **kw)


# -------------------------------------------------------------------- panels


@dataclass(frozen=True)
class PanelDiscretization:
    panels: np.ndarray        # (P, 2) parameter intervals
    t: np.ndarray
    z: np.ndarray
    dz: np.ndarray
    w: np.ndarray
    panel_of: np.ndarray
    nodes_per_panel: int
    d: float
    L_C: float
    truncated: TruncatedContour = None

    @property
    def n(self):
        return self.t.size

    @property
    def wdz(self):
        return self.w * self.dz

    def integrate(self, values):
        return np.sum(self.wdz * values, axis=-1)

    def in_channel(self):
        return np.abs(self.t) <= self.d + 1e-12

    def is_real(self):
        return np.abs(self.z.imag) == 0.0


def _lattice(a, b, h, anchor):
    """Breakpoints strictly inside (a, b) on the lattice anchor + j h."""
    j0 = math.floor((a - anchor) / h) + 1
    j1 = math.ceil((b - anchor) / h) - 1
    pts = anchor + h * np.arange(j0, j1 + 1)
    return pts[(pts > a + 1e-12 * h) & (pts < b - 1e-12 * h)]


def _refine(edges, targets):
    edges = list(edges)
    for x0, dist in targets:
        changed = True
        while changed:
            changed = False
            out = [edges[0]]
            for a, b in zip(edges[:-1], edges[1:]):
                gap = 0.0 if a <= x0 <= b else min(abs(x0 - a), abs(x0 - b))
                if b - a > max(dist, gap) * 1.0000001 and b - a > 1e-9:
                    out.append(0.5 * (a + b))
                    changed = True
                out.append(b)
            edges = out
    return np.array(edges)


def panel_edges(t_lo, t_hi, d, L_C, max_panel_len, channel_panel_len=None, refine=(),
                breaks=()):
    """Panel breakpoints; ``breaks`` (e.g. jumps of q) split channel panels."""
    hc = channel_panel_len or max_panel_len
    h = max_panel_len
    L = L_C if math.isfinite(L_C) else max(-t_lo, t_hi)
    edges = {t_lo, t_hi}
    for x in (-d, d, -L, L):
        if t_lo < x < t_hi:
            edges.add(x)
    # channel: uniform panels
    a, b = max(-d, t_lo), min(d, t_hi)
    inner = sorted({a, b} | {float(x) for x in breaks if a < x < b})
    for lo, hi in zip(inner[:-1], inner[1:]):
        n = max(1, math.ceil((hi - lo) / hc - 1e-9))
        edges.update(np.linspace(lo, hi, n + 1).tolist())
    # flat shoulders: uniform panels
    for a, b in ((max(-L, t_lo), min(-d, t_hi)), (max(d, t_lo), min(L, t_hi))):
        if b > a:
            n = max(1, math.ceil((b - a) / h - 1e-9))
            edges.update(np.linspace(a, b, n + 1).tolist())
    # lifted tails: lattice anchored at +-L so shared panels do not move with t_max
    if t_hi > L:
        edges.update(_lattice(L, t_hi, h, L).tolist())
    if t_lo < -L:
        edges.update(_lattice(t_lo, -L, h, -L).tolist())
    edges = np.array(sorted(edges))
    keep = np.concatenate([[True], np.diff(edges) > 1e-12])
    edges = edges[keep]
    if refine:
        edges = _refine(edges, refine)
    return edges


def panelize(truncated, max_panel_len, nodes_per_panel=16, d=0.0, channel_panel_len=None,
             refine=(), breaks=()):
    """Gauss-Legendre panels on the truncated parameter interval."""
    if not max_panel_len > 0:
        raise ConfigError("max_panel_len must be positive")
    c = truncated.parent
    edges = panel_edges(truncated.t_lo, truncated.t_hi, d, c.L_C, max_panel_len,
                        channel_panel_len, refine, breaks)
    return panelize_edges(edges, c, nodes_per_panel, d, truncated)


def panelize_edges(edges, contour, nodes_per_panel=16, d=0.0, truncated=None):
    x, w = gauss_legendre(nodes_per_panel)
    a, b = edges[:-1], edges[1:]
    half = 0.5 * (b - a)
    mid = 0.5 * (a + b)
    t = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    ww = (half[:, None] * w[None, :]).ravel()
    z = contour.z(t)
    flat = np.abs(t) <= contour.L_C
    z = np.where(flat, t + 0j, z)
    dz = np.where(flat, 1.0 + 0j, contour.dz(t))
    panel_of = np.repeat(np.arange(a.size), nodes_per_panel)
    return PanelDiscretization(np.column_stack([a, b]), t, z, dz, ww, panel_of,
                               nodes_per_panel, d, contour.L_C, truncated)


def real_line_panels(a, b, max_panel_len, nodes_per_panel=16, d=0.0, refine=(), breaks=(),
                     channel_panel_len=None):
    """Panels on a real segment, used for real-line reference solves."""
    c = build_admissible_contour("real", t_limit=max(abs(a), abs(b)))
    edges = panel_edges(a, b, d, math.inf, max_panel_len, channel_panel_len, (), breaks)
    edges = set(edges.tolist())
    edges = np.array(sorted(edges))
    if refine:
        edges = _refine(edges, refine)
    return panelize_edges(edges, c, nodes_per_panel, d)


# -------------------------------------------------------- singular quadrature

def _log_moments(s, n):
    """Integrals of log|s - t| P_m(t) over [-1, 1] for m < n."""
    if abs(abs(s) - 1.0) < 1e-13:
        m = np.arange(n)
        mom = np.where(m == 0, 2 * math.log(2.0) - 2.0, -2.0 / np.maximum(m * (m + 1), 1))
        return mom * (np.sign(s) ** m)
    if abs(s) < 1.0:
        q = np.zeros(n + 1)
        q[0] = 0.5 * math.log((1 + s) / (1 - s))
        if n >= 1:
            q[1] = s * q[0] - 1.0
        for m in range(1, n):
            q[m + 1] = ((2 * m + 1) * s * q[m] - m * q[m - 1]) / (m + 1)
        mom = np.empty(n)
        ap, am = abs(s + 1), abs(s - 1)
        mom[0] = (ap * math.log(ap) if ap > 0 else 0.0) + (am * math.log(am) if am > 0 else 0.0) - 2.0
        for m in range(1, n):
            mom[m] = (2.0 / (2 * m + 1)) * (q[m + 1] - q[m - 1])
        return mom
    x, w = gauss_legendre(200)
    vals = legendre.legvander(x, n - 1)
    return (w * np.log(np.abs(s - x))) @ vals


def log_weights(s, n):
    """Weights L_j with sum_j L_j p(x_j) = int_{-1}^{1} log|s - t| p(t) dt.

    Exact for polynomials of degree < n sampled at the n Gauss-Legendre nodes.
    """
    x, w = gauss_legendre(n)
    P = legendre.legvander(x, n - 1)              # P[j, m] = P_m(x_j)
    mom = _log_moments(float(s), n)
    scale = (2 * np.arange(n) + 1) / 2.0
    return w * (P @ (scale * mom))


def bernstein_radius(zeta):
    """Bernstein-ellipse parameter of a point relative to [-1, 1]."""
    zeta = np.asarray(zeta, dtype=complex)
    r = zeta + np.sqrt(zeta - 1) * np.sqrt(zeta + 1)
    return np.maximum(np.abs(r), 1.0 / np.maximum(np.abs(r), 1e-300))


def near_weights(zeta, n):
    """Weights for log|t - zeta| and 1/(t - zeta) against panel nodes.

    Monomial moments by forward recurrence, mapped to node weights through
    the transposed Vandermonde system. Meant for targets close to [-1, 1]
    (Bernstein radius below ~3), where the recurrence is stable.
    """
    x, _ = gauss_legendre(n)
    zeta = complex(zeta)
    la, lb = np.log(1 - zeta), np.log(-1 - zeta)
    p = np.empty(n + 1, dtype=complex)
    p[0] = la - lb
    for k in range(n):
        p[k + 1] = zeta * p[k] + (1 - (-1) ** (k + 1)) / (k + 1)
    kk = np.arange(n)
    logm = (la - (-1.0) ** (kk + 1) * lb) / (kk + 1) - p[1:] / (kk + 1)
    V = np.vander(x, n, increasing=True)
    lam_c = np.linalg.solve(V.T, p[:n])
    lam_l = np.linalg.solve(V.T, logm)
    return lam_l.real, lam_c
