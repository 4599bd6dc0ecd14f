"""End-to-end setup shared by the CLI, the tests and the examples."""

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .bie import assemble_system, solve_system
from .errors import ConfigError, OutOfRegion
from .geometry import (build_admissible_contour, panelize, preset_potential,
                       tabulated_potential, truncate_at_depth, truncate_contour)
from .greens import GreensEvaluator, build_fourier_contour, build_transverse_cache
from .kernels import KernelEvaluator
from .modes import find_modes
from .potentials import (FieldRequest, IncidentField, boundary_data_mode,
                         boundary_data_point_source, layer_field, one_sided_limits,
                         total_field)

EDGE_PAD = 0.5   # channel padding when q does not vanish at its support edge


def make_potential(spec):
    """Potential from a preset name or a dict spec."""
    if isinstance(spec, str):
        return preset_potential(spec)
    spec = dict(spec)
    if "pieces" in spec:
        return tabulated_potential(spec["breaks"], spec["pieces"], spec.get("name", "tabulated"))
    name = spec.pop("preset", spec.pop("name", None))
    if name is None:
        raise ConfigError("medium spec needs a preset name")
    return preset_potential(name, **spec)


def channel_halfwidth(*pots):
    d = max(p.d for p in pots)
    for p in pots:
        edge = abs(p(np.array([p.d - 1e-12, -p.d + 1e-12]))).max()
        if abs(p.d - d) < 1e-12 and edge > 1e-14:
            return d + EDGE_PAD
    return d


def breakpoints(*pots):
    pts = set()
    for p in pots:
        pts.update(float(x) for x in p.breakpoints)
    return sorted(pts)


@dataclass
class Setup:
    k: float
    q_l: object
    q_r: object
    d: float
    contour: object
    truncated: object
    disc: object
    kernels: KernelEvaluator
    greens: dict
    timings: dict = field(default_factory=dict)


def build_setup(q_l, q_r, k=3.0, contour=None, depth=None, beta=None, eps=None,
                panel_len=1.0, channel_panel_len=0.5, nodes=16, extra_stations=(),
                field_x1_max=3.0, kernel_s_cap=400.0, field_s_cap=400.0, n_steps=4000):
    """Contour, panels, transverse caches and evaluators for two media."""
    t0 = time.perf_counter()
    timings = {}
    d = channel_halfwidth(q_l, q_r)
    contour = contour or build_admissible_contour("erf", k=k, d=d)
    if depth is not None:
        trunc = truncate_at_depth(contour, depth, beta if beta is not None else k)
    else:
        beta = k if beta is None else beta
        eps = 1e-12 if eps is None else eps
        trunc = truncate_contour(contour, beta, eps)
    disc = panelize(trunc, panel_len, nodes, d, channel_panel_len,
                    breaks=breakpoints(q_l, q_r))
    chan = disc.z[disc.in_channel()].real
    extra = np.asarray([x for x in np.ravel(extra_stations) if abs(x) <= d], dtype=float)
    stations = np.concatenate([chan, extra])
    xi_top = k * math.sqrt(1.0 + max(q_l.M_q, q_r.M_q))
    sep = max(2.0 * (trunc.t_max - d), 1.0)
    fk = build_fourier_contour(k, "kernel_kC", separation_max=sep, xi_top=xi_top,
                               s_cap=kernel_s_cap, d=d)
    caches = [build_transverse_cache(q, k, fk, stations, d, n_steps) for q in (q_l, q_r)]
    timings["kernel_caches"] = time.perf_counter() - t0
    kev = KernelEvaluator(caches[0], caches[1], contour.L_C)
    ff = build_fourier_contour(k, "field", separation_max=sep, xi_top=xi_top,
                               s_cap=field_s_cap, x1_max=field_x1_max, d=d)
    greens = {s: GreensEvaluator(build_transverse_cache(q, k, ff, stations, d, n_steps))
              for s, q in (("l", q_l), ("r", q_r))}
    timings["field_caches"] = time.perf_counter() - t0 - timings["kernel_caches"]
    return Setup(k, q_l, q_r, d, contour, trunc, disc, kev, greens, timings)


def solve_point_sources(setup, incident, schur=False):
    t0 = time.perf_counter()
    system = assemble_system(setup.disc, setup.kernels)
    t1 = time.perf_counter()
    data = boundary_data_point_source(incident, setup.disc, setup.greens)
    density = solve_system(system, data, schur=schur)
    setup.timings["assemble"] = t1 - t0
    setup.timings["solve"] = time.perf_counter() - t1
    return system, data, density


def solve_mode(setup, incident, schur=False):
    t0 = time.perf_counter()
    system = assemble_system(setup.disc, setup.kernels)
    raw, rhs = boundary_data_mode(incident, setup.disc, system)
    tilde = solve_system(system, rhs, schur=schur)
    setup.timings["assemble_solve"] = time.perf_counter() - t0
    total = tilde + type(tilde)(raw.f_D, raw.f_N, setup.disc)
    return system, raw, rhs, tilde, total


def check_targets(contour, x1, x2):
    """Refuse real targets the contour has lifted over: need |Im z(x2)| < |x1| / 2.

    Where the deformation at abscissa x2 reaches the branch points x2 +- i x1
    the layer potentials no longer continue the field to (x1, x2).
    """
    x1 = np.atleast_1d(np.asarray(x1, dtype=float))
    x2 = np.atleast_1d(np.asarray(x2, dtype=float))
    lift = np.abs(contour.z(x2).imag)
    bad = lift >= 0.5 * np.abs(x1)
    if np.any(bad):
        i = int(np.argmax(bad))
        raise OutOfRegion(f"target ({x1[i]}, {x2[i]}) lies under the lifted contour "
                          f"(|Im z| = {lift[i]:.3g})")


def side_field(setup, incident, density, x1, x2):
    """Total field u_i + S[tau] - D[sigma] at arbitrary real targets (x1 != 0)."""
    x1 = np.atleast_1d(np.asarray(x1, dtype=float))
    x2 = np.atleast_1d(np.asarray(x2, dtype=float))
    out = np.zeros(x1.shape, dtype=complex)
    for side, mask in (("l", x1 < 0), ("r", x1 > 0)):
        if np.any(mask):
            ev = setup.greens[side]
            out[mask] = (layer_field(density, ev, x1[mask], x2[mask])
                         + incident.on_side(side, setup.greens, x1[mask], x2[mask])[0])
    return out


def interface_jumps(setup, incident, density, x2, h=1e-3):
    """Max jumps of u and d1 u across x1 = 0, from one-sided limits."""
    lim = one_sided_limits(lambda a, b: side_field(setup, incident, density, a, b), x2, h)
    (vm, dm), (vp, dp) = lim["minus"], lim["plus"]
    return float(np.max(np.abs(vp - vm))), float(np.max(np.abs(dp - dm)))
