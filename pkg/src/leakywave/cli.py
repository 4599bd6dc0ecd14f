"""Command-line driver: JSON config in, JSON report and CSV grids out.

    leakywave <command> --config run.json [--out dir]

Exit status is 0 when every acceptance metric of the command passes, 1 when
any fails and 2 for configuration errors.
"""

import argparse
import copy
import csv
import json
import math
import platform
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy
from scipy import optimize

from . import __version__
from .bie import dump_matrix, weighted_norm
from .errors import ConfigError, LeakyWaveError, OutOfRegion
from .geometry import build_admissible_contour, panelize, truncate_at_depth
from .greens import (GreensEvaluator, build_fourier_contour, build_transverse_cache,
                     fd_residual, fd_stations)
from .kernels import KernelEvaluator, kernel_asymptotic_fit
from .modes import find_modes
from .pipeline import (breakpoints, build_setup, channel_halfwidth, check_targets,
                       interface_jumps, make_potential, solve_mode, solve_point_sources)
from .potentials import FieldRequest, IncidentField, green_identity, total_field

COMMANDS = ("modes", "green-selftest", "solve", "truncation-sweep", "kernel-asymptotics")

# reference frequencies for k = 3, to four decimals
REFERENCE_MODES = {
    "qa_left": (3.7401, 4.6783, 6.2958, 7.5942),
    "qa_right": (4.1378, 5.9297),
    "qb_right": (3.2274, 3.5503, 3.8083, 4.0022, 4.2164),
}

THRESHOLDS = {
    "mode_reference_rtol": 1e-4,
    "mode_oracle_rtol": 1e-9,
    "reciprocity": 1e-8,
    "green_identity": 1e-5,
    "fd_residual": 1e-3,
    "solve_residual": 1e-10,
    "null_ratio": 1e-4,
    "transmission_jump": 1e-4,
    "degenerate": 1e-10,
    "sweep_slope_rtol": 0.15,
    "eps_halving": [1.5, 3.0],
    "decay_power_tol": 0.1,
    "correction_rate": [0.8, 1.2],
    "envelope_factor": 5.0,
    "identical_kernels": 1e-12,
    "contour_independence": 1e-6,
}

DEFAULTS = {
    "k": 3.0,
    "seed": 0,
    "media": {"l": "qa_left", "r": "qa_right"},
    "contour": {"kind": "erf"},
    "truncation": {"depth": 4.0},
    "discretization": {"panel_len": 1.0, "channel_panel_len": 0.5, "nodes": 16,
                       "n_steps": 4000},
    "fourier": {"kernel_s_cap": 400.0, "field_s_cap": 400.0},
    "field_grid": {"x1": [-2.0, -1.0, -0.5, -0.25, 0.25, 0.5, 1.0, 2.0],
                   "x2": {"start": -6.0, "stop": 6.0, "num": 13}},
    "incident": {"kind": "point_source", "sources": {"l": [[1.0, 0.5]], "r": [[-1.5, 1.0]]}},
    "solve": {"expect_null": None, "transmission_x2": [-2.0, 0.0, 1.0, 2.5],
              "dump_matrix": False, "schur": False, "compare_contour": None},
    "selftest": {"source": [0.1, 1.0], "depth": 39.527,
                 "contour": {"kind": "erf", "A": 20.0, "t0": 40.0, "s": 5.0},
                 "identity_points": [[-1.0, 0.3], [-0.5, 2.0], [-2.0, -7.0], [0.0, 0.37],
                                     [0.0, 3.0], [0.4, -0.5], [1.0, 6.0]],
                 "fd_points": [[0.9, 1.0], [-1.0, 0.2], [0.5, -2.0], [-0.6, 3.9],
                               [2.0, -0.3], [0.1, 1.95]],
                 "fd_h": 1e-4, "reciprocity_pairs": 6,
                 "grid": {"x1": {"start": -2.0, "stop": 2.0, "num": 9},
                          "x2": {"start": -4.0, "stop": 4.0, "num": 9}}},
    "sweep": {"depths": [1.0, 2.0, 3.0, 4.0], "reference_depth": 9.0,
              "beta_eff": None, "halving_depth": 2.0,
              "contour": {"kind": "ramp", "slope": 1.0, "L_pad": 1.5},
              "incident": {"kind": "point_source",
                           "sources": {"l": [[-1.0, 0.5]], "r": [[1.5, 1.0]]}},
              "grid": {"x1": [-1.5, -0.5, 0.5, 1.5],
                       "x2": {"start": -3.8, "stop": 4.2, "num": 9}}},
    "asymptotics": {"window": [20.0, 200.0], "n": 40, "separation_max": 400.0,
                    "envelope_points": [[20.0, 25.0], [30.0, 40.0], [45.0, 20.0],
                                        [60.0, 55.0]]},
    "thresholds": {},
}

SECTIONS = set(DEFAULTS) | {"output", "modes"}


def _merge(base, extra):
    out = copy.deepcopy(base)
    for key, val in extra.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict) and key not in (
                "contour", "incident"):
            out[key] = _merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


def _axis(spec, name):
    if isinstance(spec, dict):
        try:
            return np.linspace(float(spec["start"]), float(spec["stop"]), int(spec["num"]))
        except KeyError as exc:
            raise ConfigError(f"{name}: range needs start, stop, num") from exc
    arr = np.asarray(spec, dtype=float).ravel()
    if arr.size == 0:
        raise ConfigError(f"{name}: empty axis")
    return arr


@dataclass
class RunConfig:
    """Validated run configuration; ``raw`` is echoed into every report."""
    raw: dict

    @classmethod
    def from_dict(cls, data):
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(data) - SECTIONS
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(_merge(DEFAULTS, data))
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path):
        try:
            with open(path, encoding="utf-8") as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(data)

    def validate(self):
        r = self.raw
        if not (isinstance(r["k"], (int, float)) and r["k"] > 0):
            raise ConfigError("k must be a positive number")
        if set(r["media"]) != {"l", "r"}:
            raise ConfigError("media needs exactly the keys 'l' and 'r'")
        for spec in r["media"].values():
            make_potential(spec)
        tr = r["truncation"]
        if "depth" not in tr and "eps" not in tr:
            raise ConfigError("truncation needs a depth or an eps")
        if "eps" in tr and not 0 < tr["eps"] < 1:
            raise ConfigError("truncation eps must lie in (0, 1)")
        if "depth" in tr and not tr["depth"] > 0:
            raise ConfigError("truncation depth must be positive")
        disc = r["discretization"]
        if not (disc["panel_len"] > 0 and disc["channel_panel_len"] > 0):
            raise ConfigError("panel lengths must be positive")
        if int(disc["nodes"]) < 2:
            raise ConfigError("need at least two nodes per panel")
        _axis(r["field_grid"]["x1"], "field_grid.x1")
        _axis(r["field_grid"]["x2"], "field_grid.x2")
        if np.any(_axis(r["field_grid"]["x1"], "field_grid.x1") == 0):
            raise ConfigError("field_grid.x1 must avoid the interface x1 = 0")
        if len(r["sweep"]["depths"]) < 3:
            raise ConfigError("truncation sweep needs at least three depths")
        unknown = set(r["thresholds"]) - set(THRESHOLDS)
        if unknown:
            raise ConfigError(f"unknown thresholds: {sorted(unknown)}")

    # convenience accessors
    def __getitem__(self, key):
        return self.raw[key]

    @property
    def k(self):
        return float(self.raw["k"])

    def threshold(self, name):
        return self.raw["thresholds"].get(name, THRESHOLDS[name])

    def media(self):
        return make_potential(self.raw["media"]["l"]), make_potential(self.raw["media"]["r"])

    def contour(self, d, spec=None):
        spec = dict(self.raw["contour"] if spec is None else spec)
        kind = spec.pop("kind", "erf")
        if kind == "ramp":
            pad = spec.pop("L_pad", 1.0)
            spec.setdefault("L", d + pad)
        return build_admissible_contour(kind, k=self.k, d=d, **spec)

    def require_targets(self, contour, x1, x2, what):
        X1, X2 = np.meshgrid(x1, x2, indexing="ij")
        try:
            check_targets(contour, X1.ravel(), X2.ravel())
        except OutOfRegion as exc:
            raise ConfigError(f"{what}: {exc}") from exc

    def grid(self):
        g = self.raw["field_grid"]
        return _axis(g["x1"], "field_grid.x1"), _axis(g["x2"], "field_grid.x2")

    def incident(self, q_r=None, q_l=None, spec=None):
        spec = self.raw["incident"] if spec is None else spec
        kind = spec.get("kind")
        if kind == "point_source":
            src = {side: [tuple(map(float, p)) for p in pts]
                   for side, pts in spec.get("sources", {}).items()}
            return IncidentField("point_source", src)
        if kind == "mode":
            medium = spec.get("medium", "r")
            pot = q_r if medium == "r" else q_l
            modes = find_modes(pot, self.k)
            idx = int(spec.get("index", 0))
            if not 0 <= idx < len(modes):
                raise ConfigError(f"mode index {idx} out of range ({len(modes)} modes)")
            return IncidentField("mode", medium=medium, mode=modes.modes[idx],
                                 amplitude=complex(spec.get("amplitude", 1.0)))
        raise ConfigError(f"unknown incident kind {kind!r}")

    def setup(self, extra_stations=(), depth=None, contour=None):
        q_l, q_r = self.media()
        d = channel_halfwidth(q_l, q_r)
        tr = self.raw["truncation"]
        disc = self.raw["discretization"]
        four = self.raw["fourier"]
        x1, _ = self.grid()
        kw = {"depth": depth} if depth is not None else (
            {"depth": tr["depth"]} if "depth" in tr else {"eps": tr["eps"]})
        return build_setup(q_l, q_r, k=self.k, contour=contour or self.contour(d),
                           beta=tr.get("beta"), panel_len=disc["panel_len"],
                           channel_panel_len=disc["channel_panel_len"], nodes=int(disc["nodes"]),
                           extra_stations=extra_stations, field_x1_max=float(np.abs(x1).max()),
                           kernel_s_cap=four["kernel_s_cap"], field_s_cap=four["field_s_cap"],
                           n_steps=int(disc["n_steps"]), **kw)


@dataclass
class Report:
    command: str
    config: dict
    metrics: dict = field(default_factory=dict)
    acceptance: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)

    def check(self, name, value, threshold, passed):
        self.acceptance[name] = {"value": _jsonable(value), "threshold": _jsonable(threshold),
                                 "passed": bool(passed)}

    def skip(self, name, reason):
        self.acceptance[name] = {"skipped": reason}

    @property
    def passed(self):
        return all(a.get("passed", True) for a in self.acceptance.values())

    def to_dict(self):
        return {"command": self.command, "passed": self.passed,
                "acceptance": self.acceptance, "metrics": _jsonable(self.metrics),
                "config": self.config, "timings": self.timings,
                "versions": {"leakywave": __version__, "numpy": np.__version__,
                             "scipy": scipy.__version__, "python": platform.python_version()}}

    def write(self, out_dir):
        path = Path(out_dir) / f"{self.command}.json"
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        return path


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (complex, np.complexfloating)):
        return {"re": float(x.real), "im": float(x.imag)}
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, float) and not math.isfinite(x):
        return str(x)
    return x


def write_grid(path, x1, x2, values):
    """CSV with header x1,x2,re_u,im_u."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["x1", "x2", "re_u", "im_u"])
        for a, b, u in zip(np.ravel(x1), np.ravel(x2), np.ravel(values)):
            w.writerow([repr(float(a)), repr(float(b)), repr(float(u.real)),
                        repr(float(u.imag))])


# ------------------------------------------------------------------ oracles

def square_well_modes(k, height, halfwidth):
    """Guided frequencies of a square well from its even/odd dispersion relations."""
    top = k * math.sqrt(1.0 + height)
    pmax = math.sqrt(top * top - k * k)

    def kap(p):
        return math.sqrt(max(pmax * pmax - p * p, 0.0))

    # even: kappa = p tan(p a); odd: kappa = -p cot(p a)
    even = lambda p: p * math.sin(p * halfwidth) - kap(p) * math.cos(p * halfwidth)
    odd = lambda p: p * math.cos(p * halfwidth) + kap(p) * math.sin(p * halfwidth)
    roots = []
    grid = np.linspace(1e-12, pmax, 20001)
    for f in (even, odd):
        vals = np.array([f(p) for p in grid])
        for i in np.nonzero(np.sign(vals[:-1]) * np.sign(vals[1:]) < 0)[0]:
            p = optimize.brentq(f, grid[i], grid[i + 1], xtol=1e-15, rtol=1e-15)
            if 0 < p < pmax:
                roots.append(math.sqrt(top * top - p * p))
    return sorted(roots)


# ----------------------------------------------------------------- commands

def cmd_modes(cfg):
    rep = Report("modes", cfg.raw)
    specs = cfg.raw.get("modes", {}).get("media")
    if specs is None:
        specs = list(dict.fromkeys(json.dumps(s, sort_keys=True)
                                   for s in cfg.raw["media"].values()))
        specs = [json.loads(s) for s in specs]
    tables = []
    for spec in specs:
        t0 = time.perf_counter()
        pot = make_potential(spec)
        ms = find_modes(pot, cfg.k)
        tables.append({"potential_id": pot.name, "k": cfg.k,
                       "frequencies": [m.xi for m in ms.modes],
                       "normalization": "L2 over the line, v(d) > 0",
                       "tail_coefficients": [[m.C_minus, m.C_plus] for m in ms.modes]})
        rep.timings[pot.name] = time.perf_counter() - t0
        ref = REFERENCE_MODES.get(pot.name)
        freqs = ms.frequencies
        if ref is not None and cfg.k == 3.0:
            err = max(min(abs(f - r) / r for f in freqs) if freqs.size else math.inf
                      for r in ref)
            tol = cfg.threshold("mode_reference_rtol")
            rep.check(f"{pot.name}_reference", err, tol, err < tol)
        elif pot.is_zero:
            rep.check(f"{pot.name}_empty", len(ms), 0, len(ms) == 0)
        else:
            rep.skip(f"{pot.name}_reference", "no reference table for this medium")
        if pot.name in ("qb_right", "square_well"):
            height = float(pot(np.array([0.0]))[0])
            halfwidth = pot.pieces[int(pot.piece_index(0.0))][1]
            oracle = square_well_modes(cfg.k, height, halfwidth)
            if len(oracle) == len(freqs):
                err = float(np.max(np.abs(np.array(oracle) - freqs) / np.array(oracle)))
            else:
                err = math.inf
            tol = cfg.threshold("mode_oracle_rtol")
            rep.check(f"{pot.name}_dispersion_oracle", err, tol, err < tol)
    rep.metrics["tables"] = tables
    return rep, {}


def _selftest_medium(cfg, pot, rep, out):
    st = cfg.raw["selftest"]
    k = cfg.k
    name = pot.name
    d = channel_halfwidth(pot)
    spec = dict(st["contour"])
    contour = build_admissible_contour(spec.pop("kind"), k=k, d=d, **spec)
    tr = truncate_at_depth(contour, float(st["depth"]), k)
    disc = panelize(tr, cfg.raw["discretization"]["panel_len"],
                    int(cfg.raw["discretization"]["nodes"]), d,
                    cfg.raw["discretization"]["channel_panel_len"], breaks=breakpoints(pot))
    ip = np.asarray(st["identity_points"], dtype=float)
    fp = np.asarray(st["fd_points"], dtype=float)
    h = float(st["fd_h"])
    g1 = _axis(st["grid"]["x1"], "selftest.grid.x1")
    g2 = _axis(st["grid"]["x2"], "selftest.grid.x2")
    rng = np.random.default_rng(cfg.raw["seed"])
    pairs = rng.uniform(-d, d, size=(int(st["reciprocity_pairs"]), 2))
    source = tuple(map(float, st["source"]))
    stations = np.concatenate([disc.z[disc.in_channel()].real, ip[:, 1],
                               fd_stations(fp[:, 1], h), g2, pairs.ravel(), [source[1]]])
    stations = stations[np.abs(stations) <= d]
    t0 = time.perf_counter()
    x1max = max(2.5, float(np.abs(ip[:, 0]).max()) + abs(source[0]),
                float(np.abs(g1).max()) + abs(source[0]))
    fc = build_fourier_contour(k, "field", separation_max=2 * (tr.t_max - d),
                               xi_top=k * math.sqrt(1 + pot.M_q), s_cap=cfg.raw["fourier"][
                                   "field_s_cap"], x1_max=x1max, d=d)
    ev = GreensEvaluator(build_transverse_cache(pot, k, fc, stations, d,
                                                int(cfg.raw["discretization"]["n_steps"])))
    rep.timings[f"{name}_cache"] = time.perf_counter() - t0

    # reciprocity on the interface
    a, b = pairs[:, 0], pairs[:, 1]
    Gab = np.array([ev.green_matrix([0.0], [x], [y])[0][0, 0] for x, y in zip(a, b)])
    Gba = np.array([ev.green_matrix([0.0], [y], [x])[0][0, 0] for x, y in zip(a, b)])
    rec = float(np.max(np.abs(Gab - Gba)))
    rep.check(f"{name}_reciprocity", rec, cfg.threshold("reciprocity"),
              rec < cfg.threshold("reciprocity"))

    res = fd_residual(ev, source, fp[:, 0], fp[:, 1], h)
    rep.check(f"{name}_fd_residual", float(res.max()), cfg.threshold("fd_residual"),
              res.max() < cfg.threshold("fd_residual"))

    lhs, rhs = green_identity(ev, disc, source, ip[:, 0], ip[:, 1])
    dev = np.abs(lhs - rhs)
    rep.check(f"{name}_green_identity", float(dev.max()), cfg.threshold("green_identity"),
              dev.max() < cfg.threshold("green_identity"))
    rep.metrics[name] = {"identity_points": ip, "identity_deviation": dev,
                         "identity_regime": np.sign(ip[:, 0]), "fd_residual": res,
                         "reciprocity": rec, "fourier_nodes": fc.size,
                         "contour_nodes": disc.n, "truncation_t": tr.t_max}
    X1, X2 = np.meshgrid(g1, g2, indexing="ij")
    G = ev.green_matrix(X1.ravel() - source[0], X2.ravel(), [source[1]])[0][:, 0]
    out[f"green_{name}.csv"] = (X1.ravel(), X2.ravel(), G)
    rep.timings[f"{name}_total"] = time.perf_counter() - t0


def cmd_green_selftest(cfg):
    rep = Report("green-selftest", cfg.raw)
    out = {}
    seen = set()
    for pot in cfg.media():
        if pot.name in seen:
            continue
        seen.add(pot.name)
        _selftest_medium(cfg, pot, rep, out)
    return rep, out


def _grid_stations(cfg, extra=(), grid=None):
    x2 = cfg.grid()[1] if grid is None else grid[1]
    x2s = np.asarray(cfg.raw["solve"]["transmission_x2"], dtype=float)
    return np.concatenate([x2, x2s, np.ravel(extra)])


def _solve(cfg, setup, incident):
    """(system, boundary data, density to evaluate fields with, tilde density or None)."""
    schur = cfg.raw["solve"]["schur"]
    if incident.kind == "mode":
        system, raw, _, tilde, total = solve_mode(setup, incident, schur=schur)
        return system, raw, total, tilde
    system, data, dens = solve_point_sources(setup, incident, schur=schur)
    return system, data, dens, None


def is_fictitious(incident):
    """Every source sits in the half-plane opposite its own medium."""
    if incident.kind != "point_source" or not incident.sources:
        return False
    sgn = {"l": 1.0, "r": -1.0}
    return all(sgn[side] * y1 > 0 for side, pts in incident.sources.items() for y1, _ in pts)


def cmd_solve(cfg):
    rep = Report("solve", cfg.raw)
    t0 = time.perf_counter()
    q_l, q_r = cfg.media()
    incident = cfg.incident(q_r=q_r, q_l=q_l)
    x1, x2 = cfg.grid()
    d = channel_halfwidth(q_l, q_r)
    xs = np.asarray(cfg.raw["solve"]["transmission_x2"], dtype=float)
    cfg.require_targets(cfg.contour(d), x1, x2, "field_grid")
    cfg.require_targets(cfg.contour(d), [4e-3], xs, "solve.transmission_x2")
    setup = cfg.setup(_grid_stations(cfg, incident.source_stations()))
    system, data, dens, tilde = _solve(cfg, setup, incident)
    rep.timings.update(setup.timings)
    fields = total_field(FieldRequest(x1, x2), incident, dens, setup.greens)
    out = {f"field_{name}.csv": (fields["x1"], fields["x2"], fields[name])
           for name in ("total", "scattered", "incoming")}
    sup_u = float(np.max(np.abs(fields["total"])))
    sup_ui = float(np.max(np.abs(fields["incoming"])))
    beta = cfg.raw["truncation"].get("beta") or cfg.k
    rep.metrics.update({"nodes": setup.disc.n, "condition": dens.cond,
                        "residual": dens.residual, "sup_total": sup_u, "sup_incoming": sup_ui,
                        "truncation_t": setup.truncated.t_max,
                        "density_weighted_norm": weighted_norm(dens.sigma, setup.disc.z, 0.25,
                                                               beta)})
    rep.check("solve_residual", dens.residual, cfg.threshold("solve_residual"),
              dens.residual < cfg.threshold("solve_residual"))

    expect_null = cfg.raw["solve"]["expect_null"]
    if expect_null is None:
        expect_null = is_fictitious(incident)
    if expect_null:
        ratio = sup_u / sup_ui
        rep.check("null_ratio", ratio, cfg.threshold("null_ratio"),
                  ratio < cfg.threshold("null_ratio"))
    else:
        rep.skip("null_ratio", "sources are not all fictitious")

    jv, jd = interface_jumps(setup, incident, dens, xs)
    tol = cfg.threshold("transmission_jump")
    rep.metrics["jump_value"], rep.metrics["jump_derivative"] = jv, jd
    rep.check("transmission_jump", max(jv, jd), tol, max(jv, jd) < tol)

    tol = cfg.threshold("degenerate")
    if setup.kernels.identical:
        kmax = float(np.max(np.abs(system.matrix - np.eye(system.matrix.shape[0]))))
        rep.check("degenerate_K", kmax, tol, kmax < tol)
        if tilde is not None:
            tf = float(np.abs(np.concatenate([tilde.sigma, tilde.tau])).max())
            rep.check("degenerate_tilde_density", tf, tol, tf < tol)
            X1, X2 = np.meshgrid(x1, x2, indexing="ij")
            mode = incident._mode_field(X1.ravel(), X2.ravel())[0]
            err = float(np.max(np.abs(fields["total"] - mode)))
            rep.check("degenerate_scattered", err, tol, err < tol)
        else:
            err = float(np.max(np.abs(np.concatenate([dens.sigma - data.f_D,
                                                      dens.tau - data.f_N]))))
            rep.check("degenerate_density", err, tol, err < tol)
    else:
        rep.skip("degenerate", "media differ")

    other = cfg.raw["solve"]["compare_contour"]
    if other is not None:
        cfg.require_targets(cfg.contour(d, other), x1, x2, "field_grid")
        setup2 = cfg.setup(_grid_stations(cfg, incident.source_stations()),
                           contour=cfg.contour(setup.d, other))
        _, _, dens2, _ = _solve(cfg, setup2, incident)
        f2 = total_field(FieldRequest(x1, x2), incident, dens2, setup2.greens)
        diff = float(np.max(np.abs(f2["total"] - fields["total"])))
        rep.metrics["contour_field_difference"] = diff
        tol = cfg.threshold("contour_independence")
        rep.check("contour_independence", diff, tol, diff < tol)
    else:
        rep.skip("contour_independence", "no second contour configured")

    if cfg.raw["solve"]["dump_matrix"]:
        out["matrix.bin"] = system.matrix
    rep.timings["total"] = time.perf_counter() - t0
    return rep, out


def sweep_errors(cfg, depths, reference_depth):
    """Sup field error at each depth against the reference depth, on the sweep grid."""
    sw = cfg.raw["sweep"]
    q_l, q_r = cfg.media()
    d = channel_halfwidth(q_l, q_r)
    contour = cfg.contour(d, sw["contour"])
    incident = cfg.incident(q_r=q_r, q_l=q_l, spec=sw["incident"])
    grid = (_axis(sw["grid"]["x1"], "sweep.grid.x1"), _axis(sw["grid"]["x2"], "sweep.grid.x2"))
    cfg.require_targets(contour, *grid, "sweep.grid")
    fields = {}
    for D in sorted(set(depths) | {reference_depth}):
        setup = cfg.setup(_grid_stations(cfg, incident.source_stations(), grid), depth=D,
                          contour=contour)
        _, _, dens, _ = _solve(cfg, setup, incident)
        fields[D] = total_field(FieldRequest(*grid), incident, dens, setup.greens)["total"]
    ref = fields[reference_depth]
    return [float(np.max(np.abs(fields[D] - ref))) for D in depths]


def cmd_truncation_sweep(cfg):
    rep = Report("truncation-sweep", cfg.raw)
    sw = cfg.raw["sweep"]
    t0 = time.perf_counter()
    beta = sw["beta_eff"] if sw["beta_eff"] is not None else 2.0 * cfg.k
    depths = [float(x) for x in sw["depths"]]
    D0 = float(sw["halving_depth"])
    D1 = D0 + math.log(2.0) / beta       # exp(-beta D1) = exp(-beta D0) / 2
    errs = sweep_errors(cfg, depths + [D0, D1], float(sw["reference_depth"]))
    e_sweep, (e0, e1) = errs[:len(depths)], errs[len(depths):]
    slope = float(np.polyfit(depths, np.log(e_sweep), 1)[0])
    rel = abs(slope + beta) / beta
    rep.metrics.update({"depths": depths, "errors": e_sweep, "slope": slope, "beta_eff": beta,
                        "halving_depths": [D0, D1], "halving_errors": [e0, e1]})
    rep.check("sweep_slope", rel, cfg.threshold("sweep_slope_rtol"),
              rel < cfg.threshold("sweep_slope_rtol"))
    factor = e0 / e1
    lo, hi = cfg.threshold("eps_halving")
    rep.check("eps_halving", factor, [lo, hi], lo <= factor <= hi)
    rep.timings["total"] = time.perf_counter() - t0
    return rep, {}


def asymptotic_evaluator(cfg, q_l=None, q_r=None):
    """Kernel evaluator on the real line, resolved for separations up to the window."""
    if q_l is None:
        q_l, q_r = cfg.media()
    d = channel_halfwidth(q_l, q_r)
    a = cfg.raw["asymptotics"]
    fk = build_fourier_contour(cfg.k, "kernel_kC", separation_max=float(a["separation_max"]),
                               xi_top=cfg.k * math.sqrt(1 + max(q_l.M_q, q_r.M_q)),
                               s_cap=cfg.raw["fourier"]["kernel_s_cap"], d=d)
    st = np.linspace(-d, d, 5)
    n = int(cfg.raw["discretization"]["n_steps"])
    caches = [build_transverse_cache(q, cfg.k, fk, st, d, n) for q in (q_l, q_r)]
    return KernelEvaluator(caches[0], caches[1], math.inf), d


def cmd_kernel_asymptotics(cfg):
    rep = Report("kernel-asymptotics", cfg.raw)
    a = cfg.raw["asymptotics"]
    t0 = time.perf_counter()
    ev, d = asymptotic_evaluator(cfg)
    ramp = cfg.contour(d, {"kind": "ramp", "L": d + 1.0, "slope": 1.0})
    pts = np.asarray(a["envelope_points"], dtype=float)
    fits = {}
    tol = cfg.threshold("decay_power_tol")
    lo, hi = cfg.threshold("correction_rate")
    fac = cfg.threshold("envelope_factor")
    for kern, p in (("kD", 0.5), ("kC", 1.5)):
        for quad, (sx, sy) in (("++", (1, 1)), ("+-", (1, -1)), ("-+", (-1, 1)),
                               ("--", (-1, -1))):
            f = kernel_asymptotic_fit(ev, kern, quad, tuple(a["window"]), int(a["n"]))
            x2, y2 = ramp.z(sx * pts[:, 0]), ramp.z(sy * pts[:, 1])
            vals = np.array([ev.matrix(kern, [u], [v], check=False)[0, 0]
                             for u, v in zip(x2, y2)])
            Z = sx * x2 + sy * y2
            env = abs(f.C) * np.abs(Z) ** -p * np.exp(-cfg.k * (np.abs(x2.imag)
                                                              + np.abs(y2.imag)))
            ratio = np.abs(vals) / env
            key = f"{kern}{quad}"
            fits[key] = {"C": f.C, "C1": f.C1, "rate": f.rate, "power": f.power,
                         "residual": f.residual, "envelope_ratio": ratio}
            rep.check(f"{key}_power", f.power, [p - tol, p + tol], abs(f.power - p) <= tol)
            rep.check(f"{key}_rate", f.rate, [lo, hi], lo <= f.rate <= hi)
            worst = float(max(ratio.max(), 1.0 / ratio.min()))
            rep.check(f"{key}_envelope", worst, fac, worst <= fac)
    rep.metrics["fits"] = fits
    # identical media: the difference kernels vanish
    q_l, _ = cfg.media()
    twin, _ = asymptotic_evaluator(cfg, q_l, make_potential(cfg.raw["media"]["l"]))
    twin.identical = False     # force the full difference synthesis
    z = np.concatenate([ev.stations[1:-1], [25.0, -40.0]]) + 0j
    w = np.roll(z, 1)      # no coincident pairs

    def along(kev, kind):
        return np.array([kev.matrix(kind, [a], [b])[0, 0] for a, b in zip(z, w)])

    typical = float(np.abs(along(ev, "kC")).max())
    resid = float(max(np.abs(along(twin, kind)).max() for kind in ("kD", "kC")))
    tol = cfg.threshold("identical_kernels")
    rep.check("identical_media_kernels", resid / typical, tol, resid <= tol * typical)
    rep.timings["total"] = time.perf_counter() - t0
    return rep, {}


HANDLERS = {
    "modes": cmd_modes,
    "green-selftest": cmd_green_selftest,
    "solve": cmd_solve,
    "truncation-sweep": cmd_truncation_sweep,
    "kernel-asymptotics": cmd_kernel_asymptotics,
}


def run(command, cfg, out_dir):
    rep, files = HANDLERS[command](cfg)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, payload in files.items():
        if name.endswith(".bin"):
            dump_matrix(out_dir / name, payload)
        else:
            write_grid(out_dir / name, *payload)
    rep.write(out_dir)
    return rep


def main(argv=None):
    parser = argparse.ArgumentParser(prog="leakywave", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True, help="JSON run configuration")
    parser.add_argument("--out", default=None, help="output directory")
    args = parser.parse_args(argv)
    try:
        cfg = RunConfig.load(args.config)
        out = args.out or cfg.raw.get("output") or "leakywave_out"
        rep = run(args.command, cfg, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except LeakyWaveError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    for name, acc in rep.acceptance.items():
        status = "skip" if "skipped" in acc else ("pass" if acc["passed"] else "FAIL")
        shown = acc.get("skipped", acc.get("value"))
        print(f"{status:4s}  {name}: {shown}")
    return 0 if rep.passed else 1


if __name__ == "__main__":
    sys.exit(main())
