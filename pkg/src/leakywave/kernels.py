"""Interface kernels k_D and k_C from the difference of the two media.

At x1 = y1 = 0,

    k_D(x2, y2) = int (wt_r - wt_l) dxi,    k_C(x2, y2) = int xi^2 (wt_r - wt_l) dxi,

i.e. k_D = w_r - w_l and k_C = -d^2/dx1^2 (w_r - w_l). Differences are taken
node by node before summation. Channel pairs closer than the local radius
are split as A log|x2 - y2| + B, with A from the local model in closed form;
the Nystrom assembly integrates the A part against log-weights.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .errors import ConfigError, FitUnstable, SeparationTooSmall
from .greens import (INV_2PI, LOCAL_RADIUS, _model, local_kernels, local_pairs, pair_sums,
                     synthesize)
from .specfun import alpha_star

KINDS = ("kD", "kC")


def _bump_profile(t):
    # smooth step: 0 for t <= 0, 1 for t >= 1
    t = np.clip(t, 0.0, 1.0)
    a = np.where(t > 0, np.exp(-1.0 / np.where(t > 0, t, 1.0)), 0.0)
    b = np.where(t < 1, np.exp(-1.0 / np.where(t < 1, 1.0 - t, 1.0)), 0.0)
    return a / (a + b)


class KernelEvaluator:
    """Kernel values on Gamma_C x Gamma_C for two media sharing a contour."""

    def __init__(self, cache_l, cache_r, L_C, delta_min=None, local_radius=LOCAL_RADIUS):
        if cache_l.contour is not cache_r.contour:
            raise ConfigError("media caches must share one Fourier contour")
        if not np.array_equal(cache_l.stations, cache_r.stations) or cache_l.d != cache_r.d:
            raise ConfigError("media caches must share stations and channel")
        self.cl, self.cr = cache_l, cache_r
        self.k = cache_l.k
        self.d = cache_l.d
        self.L_C = L_C
        self.delta_min = 1e-3 * self.d if delta_min is None else delta_min
        self.eps_bump = (L_C - self.d) / 3.0 if math.isfinite(L_C) else math.inf
        self.local_radius = local_radius
        self.identical = (cache_l.potential is cache_r.potential
                          or np.array_equal(cache_l.W, cache_r.W)
                          and np.array_equal(cache_l.phi_minus, cache_r.phi_minus))

    @property
    def stations(self):
        return self.cl.stations

    def with_stations(self, extra):
        cl = self.cl.with_stations(extra)
        cr = self.cr.with_stations(extra) if cl is not self.cl else self.cr
        if cl is not self.cl:
            cr = cr if np.array_equal(cr.stations, cl.stations) else self.cr.with_stations(
                cl.stations)
        return KernelEvaluator(cl, cr, self.L_C, self.delta_min, self.local_radius)

    # ------------------------------------------------------------ internals

    def _local_fourier(self, u, v, delta):
        xi = self.cl.xi
        out = 0.0
        for sgn, c in ((1.0, self.cr), (-1.0, self.cl)):
            kp, c2 = c.local_params(u, v)
            a = alpha_star(xi[None, :], kp[:, None], check=False)
            out = out + sgn * _model(a, c2[:, None], delta[:, None])
        return -INV_2PI * out

    def _local_closed(self, u, v, delta):
        A_D = B_D = A_C = B_C = 0.0
        for sgn, c in ((1.0, self.cr), (-1.0, self.cl)):
            kp, c2 = c.local_params(u, v)
            aD, bD, aC, bC = local_kernels(kp, c2, delta)
            A_D, B_D = A_D + sgn * aD, B_D + sgn * bD
            A_C, B_C = A_C + sgn * aC, B_C + sgn * bC
        return A_D, B_D, A_C, B_C

    # ------------------------------------------------------------- public

    def split(self, x2, y2):
        """Kernel blocks (T, N) as (A_D, B_D, A_C, B_C, local_mask).

        For pairs inside ``local_mask`` the kernels are A log|x2 - y2| + B;
        elsewhere A = 0 and B is the kernel value.
        """
        x2 = np.atleast_1d(np.asarray(x2, dtype=complex))
        y2 = np.atleast_1d(np.asarray(y2, dtype=complex))
        T, N = x2.size, y2.size
        A_D = np.zeros((T, N), dtype=complex)
        A_C = np.zeros((T, N), dtype=complex)
        mask = np.zeros((T, N), dtype=bool)
        if self.identical:
            return A_D, A_D.copy(), A_C, A_C.copy(), mask
        ti, tr = self.cl.refs(x2)
        si, sr = self.cl.refs(y2)
        om, xi = self.cl.contour.weights, self.cl.xi
        W = [np.broadcast_to(2.0 * om, (T, om.size)),
             np.broadcast_to(2.0 * om * xi * xi, (T, om.size))]
        kD, kC = synthesize([(self.cr, 1.0), (self.cl, -1.0)], ti, tr, W, si, sr)
        rows, cols, delta = local_pairs(self.cl, ti, tr, si, sr, self.local_radius)
        if rows.size:
            U, V = ti[rows], si[cols]
            fD, fC = pair_sums(W, rows, lambda sl: self._local_fourier(U[sl], V[sl], delta[sl]),
                               xi.size)
            aD, bD, aC, bC = self._local_closed(U, V, delta)
            kD[rows, cols] += bD - fD
            kC[rows, cols] += bC - fC
            A_D[rows, cols] = aD
            A_C[rows, cols] = aC
            mask[rows, cols] = True
        return A_D, kD, A_C, kC, mask

    def matrix(self, kind, x2, y2, check=True):
        """Kernel values (T, N); channel pairs below delta_min are refused."""
        if kind not in KINDS:
            raise ConfigError(f"kind must be one of {KINDS}")
        A_D, B_D, A_C, B_C, mask = self.split(x2, y2)
        x2 = np.atleast_1d(np.asarray(x2, dtype=complex))
        y2 = np.atleast_1d(np.asarray(y2, dtype=complex))
        delta = np.abs(x2[:, None] - y2[None, :])
        if check and np.any(mask & (delta < self.delta_min)):
            raise SeparationTooSmall("channel pair closer than delta_min")
        A, B = (A_D, B_D) if kind == "kD" else (A_C, B_C)
        with np.errstate(divide="ignore", invalid="ignore"):
            logd = np.where(mask, np.log(np.where(mask, delta, 1.0)), 0.0)
        return A * logd + B

    def bump(self, y2):
        """Smooth cutoff: 1 on [-d-eps, d+eps], 0 beyond L_C - eps (by Re y2)."""
        t = np.abs(np.asarray(y2, dtype=complex).real)
        if not math.isfinite(self.eps_bump):
            return np.ones_like(t)
        e = self.eps_bump
        inner, outer = self.d + e, self.L_C - e
        return 1.0 - _bump_profile((t - inner) / (outer - inner))


def kernel_kD(ev, x2, y2):
    return complex(ev.matrix("kD", [x2], [y2])[0, 0])


def kernel_kC(ev, x2, y2):
    return complex(ev.matrix("kC", [x2], [y2])[0, 0])


def kernel_split_kC0(ev, x2, y2):
    return complex(ev.bump(y2)) * kernel_kC(ev, x2, y2) if ev.bump(y2) != 0 else 0j


def kernel_split_kC1(ev, x2, y2):
    return kernel_kC(ev, x2, y2) - kernel_split_kC0(ev, x2, y2)


@dataclass(frozen=True)
class AsymptoticFit:
    C: complex
    C1: complex
    rate: float
    residual: float
    power: float = math.nan     # fitted decay power of |kernel| e^{k Im Z}


_QUADRANT = {"++": (1, 1), "+-": (1, -1), "-+": (-1, 1), "--": (-1, -1)}


def kernel_asymptotic_fit(ev, kernel, quadrant="++", window=(20.0, 200.0), n=40, z_of=None):
    """Fit kernel * Z^p * exp(-ik Z) = C + C1/Z along x2 = s_x t, y2 = s_y t.

    Z = s_x x2 + s_y y2 = 2t (the sum of distances from the origin), p = 1/2
    for kD and 3/2 for kC. ``z_of`` maps the real parameter t to contour
    points (identity on a real-line contour). The correction rate is
    measured separately from the decay of |product - C| on the window.
    """
    if kernel not in KINDS:
        raise ConfigError(f"kernel must be one of {KINDS}")
    sx, sy = _QUADRANT[quadrant]
    p = 0.5 if kernel == "kD" else 1.5
    t = np.geomspace(window[0], window[1], n)
    z_of = (lambda s: s + 0j) if z_of is None else z_of
    x2, y2 = z_of(sx * t), z_of(sy * t)
    vals = np.array([ev.matrix(kernel, [a], [b], check=False)[0, 0] for a, b in zip(x2, y2)])
    Z = sx * x2 + sy * y2
    prod = vals * Z ** p * np.exp(-1j * ev.k * Z)
    scale = np.max(np.abs(prod))
    if scale == 0:
        return AsymptoticFit(0j, 0j, math.nan, 0.0, math.nan)
    env = np.abs(vals) * np.exp(ev.k * Z.imag)
    power = -np.polyfit(np.log(np.abs(Z)), np.log(env), 1)[0]
    M = np.column_stack([np.ones_like(Z), 1.0 / Z])
    coef, *_ = np.linalg.lstsq(M, prod, rcond=None)
    resid = np.linalg.norm(M @ coef - prod) / np.linalg.norm(prod)
    if resid > 0.1:
        raise FitUnstable(f"relative fit residual {resid:.3g} exceeds 10%")
    err = np.abs(prod - coef[0])
    good = err > 1e-14 * scale
    rate = -np.polyfit(np.log(np.abs(Z[good])), np.log(err[good]), 1)[0] if good.sum() > 2 \
        else math.inf
    return AsymptoticFit(complex(coef[0]), complex(coef[1]), float(rate), float(resid),
                         float(power))
