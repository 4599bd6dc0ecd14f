"""Boundary data, layer potentials and total fields.

Each half-plane carries its own medium: for x1 < 0 the field is
u_i^l + S_l[tau] - D_l[sigma], for x1 > 0 it is u_i^r + S_r[tau] - D_r[sigma].
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .bie import BoundaryData, Density
from .errors import ConfigError, SlopeConditionUnmet
from .geometry import bernstein_radius, gauss_legendre, log_weights, near_weights
from .modes import eval_mode

NEAR_RADIUS = 3.0   # Bernstein radius below which panels get near-singular weights


@dataclass(frozen=True)
class IncidentField:
    """Prescribed incoming fields u_i^l and u_i^r.

    ``kind='point_source'``: ``sources`` maps 'l'/'r' to lists of points
    (y1, y2); u_i^m is the sum of G^m(x; y) over that list.
    ``kind='mode'``: a guided ``mode`` of medium ``medium`` travelling
    towards the interface with the given ``amplitude``.
    """
    kind: str
    sources: dict = field(default_factory=dict)
    medium: str = "r"
    mode: object = None
    amplitude: complex = 1.0

    def __post_init__(self):
        if self.kind == "point_source":
            for pts in self.sources.values():
                for y1, _ in pts:
                    if y1 == 0:
                        raise ConfigError("point sources must lie off the interface")
        elif self.kind == "mode":
            if self.mode is None or self.medium not in ("l", "r"):
                raise ConfigError("mode incidence needs a mode and a medium")
        else:
            raise ConfigError(f"unknown incident kind {self.kind!r}")

    def source_stations(self):
        if self.kind != "point_source":
            return []
        return [y2 for pts in self.sources.values() for _, y2 in pts]

    def _evaluator(self, evals, side):
        ev = evals[side]
        ys = [y2 for _, y2 in self.sources.get(side, []) if abs(y2) <= ev.cache.d]
        return ev.with_stations(ys) if ys else ev

    def _mode_field(self, x1, x2):
        m = self.mode
        v = eval_mode(m, np.asarray(x2, dtype=complex))
        # incoming from the right travels left: exp(-i xi x1); from the left: exp(+i xi x1)
        s = -1.0 if self.medium == "r" else 1.0
        e = np.exp(1j * s * m.xi * x1)
        return self.amplitude * v * e, self.amplitude * 1j * s * m.xi * v * e

    def on_side(self, side, evals, x1, x2):
        """(u_i, d1 u_i) for medium ``side`` at real targets (x1, x2)."""
        x1 = np.atleast_1d(np.asarray(x1, dtype=float))
        x2 = np.atleast_1d(np.asarray(x2, dtype=float))
        u = np.zeros(x1.shape, dtype=complex)
        du = np.zeros(x1.shape, dtype=complex)
        if self.kind == "mode":
            if side == self.medium:
                u, du = self._mode_field(x1, x2)
            return u, du
        ev = self._evaluator(evals, side)
        for y1, y2 in self.sources.get(side, []):
            G, dG = ev.green_matrix(x1 - y1, x2, [y2])
            u += G[:, 0]
            du -= dG[:, 0]
        return u, du

    def on_interface(self, side, evals, z):
        """(u_i, d1 u_i) at interface points (0, z), z on Gamma_C."""
        z = np.atleast_1d(np.asarray(z, dtype=complex))
        if self.kind == "mode":
            if side != self.medium:
                return np.zeros_like(z), np.zeros_like(z)
            return self._mode_field(np.zeros(z.shape), z)
        u = np.zeros(z.shape, dtype=complex)
        du = np.zeros(z.shape, dtype=complex)
        ev = self._evaluator(evals, side)
        for y1, y2 in self.sources.get(side, []):
            # reciprocity: G((0, z); y) = G(y; (0, z)) and d/dx1 becomes d/dy1
            G, dG = ev.green_matrix([y1], [y2], z)
            u += G[0]
            du += dG[0]
        return u, du


def interface_data(incident, evals, z):
    ul, dul = incident.on_interface("l", evals, z)
    ur, dur = incident.on_interface("r", evals, z)
    return ur - ul, dur - dul


def boundary_data_point_source(incident, disc, evals):
    """f_D = u_i^r - u_i^l and f_N = d1 u_i^r - d1 u_i^l at the nodes."""
    if incident.kind != "point_source":
        raise ConfigError("expected point-source incidence")
    fD, fN = interface_data(incident, evals, disc.z)
    return BoundaryData(fD, fN, disc, lambda z: interface_data(incident, evals, z),
                        {"alpha": 0.5, "beta": evals["l"].k})


def boundary_data_mode(incident, disc, system):
    """Raw mode data and the modified right-hand side -K[raw]."""
    if incident.kind != "mode":
        raise ConfigError("expected mode incidence")
    contour = disc.truncated.parent if disc.truncated is not None else None
    if contour is None or not contour.c_lo > 0:
        raise SlopeConditionUnmet("mode data needs a contour with a certified slope condition")
    fD, fN = interface_data(incident, None, disc.z)
    raw = BoundaryData(fD, fN, disc, lambda z: interface_data(incident, None, z))
    kD, kC = system.apply_K(raw.f_D, raw.f_N)
    rhs = BoundaryData(-kD, -kC, disc)
    return raw, rhs


# ------------------------------------------------------------ layer fields

def _near_correction(ev, disc, x1, x2, G, dG, wdz):
    """Replace smooth-rule rows by near-singular rules on close real panels.

    Returns corrected per-node weights (T, N) for tau (single layer) and
    sigma (double layer) in place of G * wdz and dG * wdz.
    """
    WS = G * wdz[None, :]
    WD = dG * wdz[None, :]
    n = disc.nodes_per_panel
    a, b = disc.panels[:, 0], disc.panels[:, 1]
    mid, half = 0.5 * (a + b), 0.5 * (b - a)
    real_pan = np.array([np.all(disc.z[p * n:(p + 1) * n].imag == 0)
                         for p in range(len(mid))])
    _, gw = gauss_legendre(n)
    cache = ev.cache
    for i in range(x1.size):
        zeta = (x2[i] + 1j * x1[i] - mid) / half
        close = np.nonzero(real_pan & (bernstein_radius(zeta) < NEAR_RADIUS))[0]
        for p in close:
            sl = slice(p * n, (p + 1) * n)
            t = disc.z[sl].real
            r = np.sqrt(x1[i] ** 2 + (x2[i] - t) ** 2)
            kp = _local_k(cache, x2[i], t)
            A = -special.j0(kp * r) / (2 * math.pi)
            Adl = -x1[i] * kp * special.j1(kp * r) / (2 * math.pi * r)
            h = half[p]
            w = disc.w[sl]
            if x1[i] == 0:
                # on the interface the double layer vanishes; only the log part is singular
                LW = h * (log_weights(zeta[p].real, n) + math.log(h) * gw)
                WS[i, sl] = (G[i, sl] - A * np.log(r)) * w + A * LW
                WD[i, sl] = 0.0
                continue
            lam_l, lam_c = near_weights(zeta[p], n)
            LW = h * (lam_l + math.log(h) * gw)
            CW = np.imag(lam_c)
            WS[i, sl] = (G[i, sl] - A * np.log(r)) * w + A * LW
            WD[i, sl] = ((dG[i, sl] - x1[i] / (2 * math.pi * r * r) - Adl * np.log(r)) * w
                         + Adl * LW + CW / (2 * math.pi))
    return WS, WD


def _local_k(cache, x2, t):
    if abs(x2) > cache.d:
        return np.full(t.shape, cache.k)
    inside = np.abs(t) <= cache.d
    out = np.full(t.shape, cache.k)
    if np.any(inside):
        u = cache.station_index([x2])[0]
        v = cache.station_index(t[inside])
        kp, _ = cache.local_params(u, v)
        out[inside] = kp
    return out


def layer_field(density, ev, x1, x2, near=True):
    """S[tau] - D[sigma] for one medium at real targets (x1 != 0)."""
    x1 = np.atleast_1d(np.asarray(x1, dtype=float))
    x2 = np.atleast_1d(np.asarray(x2, dtype=float))
    if np.any(x1 == 0):
        raise ConfigError("layer potentials are evaluated off the interface")
    disc = density.disc
    if not np.any(density.sigma) and not np.any(density.tau):
        return np.zeros(x1.shape, dtype=complex)
    G, dG = ev.green_matrix(x1, x2, disc.z)
    if near:
        WS, WD = _near_correction(ev, disc, x1, x2, G, dG, disc.wdz)
    else:
        WS, WD = G * disc.wdz, dG * disc.wdz
    return WS @ density.tau - WD @ density.sigma


def green_identity(ev, disc, source, x1, x2):
    """Both sides of Green's representation for u = G(., source) of one medium.

    Returns (lhs, rhs) where lhs = S[d1 u] - D[u] over the discretised
    contour and rhs is u, u/2 or 0 for x1 < 0, = 0, > 0. The source must
    lie in x1 > 0.
    """
    x1 = np.atleast_1d(np.asarray(x1, dtype=float))
    x2 = np.atleast_1d(np.asarray(x2, dtype=float))
    y1, y2 = source
    if not y1 > 0:
        raise ConfigError("the identity is posed with the source in x1 > 0")
    # reciprocity gives u and d1 u on the contour from one target row
    G, dG = ev.green_matrix([y1], [y2], disc.z)
    u, du = G[0], dG[0]
    Gx, dGx = ev.green_matrix(x1, x2, disc.z)
    WS, WD = _near_correction(ev, disc, x1, x2, Gx, dGx, disc.wdz)
    lhs = WS @ du - WD @ u
    ux = ev.green_matrix(x1 - y1, x2, [y2])[0][:, 0]
    rhs = np.where(x1 < 0, ux, np.where(x1 == 0, 0.5 * ux, 0.0))
    return lhs, rhs


@dataclass(frozen=True)
class FieldRequest:
    x1: np.ndarray
    x2: np.ndarray
    fields: tuple = ("scattered", "incoming", "total")

    def __post_init__(self):
        x1 = np.asarray(self.x1, dtype=float)
        if np.any(x1 == 0):
            raise ConfigError("field targets must avoid x1 = 0")
        object.__setattr__(self, "x1", x1)
        object.__setattr__(self, "x2", np.asarray(self.x2, dtype=float))

    def points(self):
        X1, X2 = np.meshgrid(self.x1, self.x2, indexing="ij")
        return X1.ravel(), X2.ravel()


def total_field(request, incident, density, evals):
    """Dict of flat arrays keyed by field kind, plus the target coordinates."""
    x1, x2 = request.points()
    scat = np.zeros(x1.shape, dtype=complex)
    inc = np.zeros(x1.shape, dtype=complex)
    for side, mask in (("l", x1 < 0), ("r", x1 > 0)):
        if np.any(mask):
            scat[mask] = layer_field(density, evals[side], x1[mask], x2[mask])
            inc[mask] = incident.on_side(side, evals, x1[mask], x2[mask])[0]
    out = {"x1": x1, "x2": x2}
    if "scattered" in request.fields:
        out["scattered"] = scat
    if "incoming" in request.fields:
        out["incoming"] = inc
    if "total" in request.fields:
        out["total"] = inc + scat
    return out


def one_sided_limits(fun, x2, h=1e-3):
    """Richardson limits of fun(x1, x2) as x1 -> 0- and 0+ (values, d/dx1).

    Uses x1 in {h, 2h, 4h}; the field is smooth up to the interface on each
    side, so quadratic extrapolation removes the O(h) and O(h^2) terms.
    """
    x2 = np.atleast_1d(np.asarray(x2, dtype=float))
    res = {}
    for sgn, name in ((-1.0, "minus"), (1.0, "plus")):
        f1, f2, f4 = (fun(np.full(x2.shape, sgn * m * h), x2) for m in (1, 2, 4))
        val = (8 * f1 - 6 * f2 + f4) / 3.0
        der = (-4 * f1 + 5 * f2 - f4) / (2 * sgn * h)
        res[name] = (val, der)
    return res
