"""Command-line front end: scenario ingestion, experiment orchestration, manifests and rendering.

Every subcommand writes its CSV artifacts first and then renders SVGs from
those CSVs, so ``render`` reproduces the same bytes from a finished run.
Exit status: 0 all verdicts pass, 1 some verdict fails, 2 invalid input,
3 numerical abort.
"""

from __future__ import annotations

import argparse
import copy
import os
import sys
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from . import render as R
from .analysis import (boundary_observability, boundary_trace, decay_fit, default_horizon, interior_observability,
                       lyapunov_check, observe, pair_data, perturbed_energy_diagnostics, quasi_stability_fit, run_pairs,
                       transfer_region, unique_continuation_probe, window_contractions)
from .coarea import coarea_check, level_set_family, prism_bound_check
from .config import ConfigError, ScenarioConfig, load_config
from .geometry import Domain, GeometryError, Grid, NotConverged, SpeedField, build_grid, first_dirichlet_eigenvalue
from .rays import RayState, Sampler, check_gcc, gcc_time_from_potential, trace_ray
from .regions import (ControlRegion, InfeasibleBudget, boundary_partition, build_admissible_region,
                      build_overlap_decomposition, check_epsilon_controllable, preset_region, verify_escape_conditions)
from .wave import (CFLViolation, DampingCoefficient, HypothesisViolation, Nonlinearity, NumericalAbort, WaveOperator,
                   gaussian_beam, random_data, sine_modes, solve_semilinear, time_step)

SUBCOMMANDS = ("region", "gcc", "coarea", "simulate", "observe", "quasistab")
MANIFEST = "manifest.json"
BUILD_LIMIT = 8192


# ---------------------------------------------------------------------------
# scenario assembly


def make_domain(cfg: ScenarioConfig) -> Domain:
    s = cfg.domain.speed
    speed = SpeedField.constant(s.value) if s.kind == "constant" else SpeedField.gaussian_bump(s.amplitude, tuple(s.center), s.width)
    if cfg.domain.shape == "square":
        return Domain.unit_square(speed) if cfg.domain.width == 1.0 else Domain.rectangle(cfg.domain.width, cfg.domain.width, speed)
    if cfg.domain.shape == "rectangle":
        return Domain.rectangle(cfg.domain.width, cfg.domain.height, speed)
    return Domain.polygon(cfg.domain.vertices, speed)


def make_nonlinearity(cfg: ScenarioConfig) -> Nonlinearity:
    c = cfg.nonlinearity
    if c.f == "zero":
        nl = Nonlinearity.zero(c.g_slope)
    elif c.f == "cubic":
        nl = Nonlinearity.cubic(c.kappa, c.g_slope)
    else:
        nl = Nonlinearity.linear(c.k, c.g_slope)
    return nl.with_arctan_damping(c.beta) if c.g == "arctan" else nl


def grid_info(grid: Grid) -> dict:
    return {"origin": list(grid.origin), "h": grid.h, "nx": grid.nx, "ny": grid.ny, "bbox": list(grid.domain.bbox),
            "resolution": grid.resolution}


@dataclass
class Scenario:
    """Resolved scenario: grids, region and the values filled in for unset defaults."""

    cfg: ScenarioConfig
    domain: Domain
    grid: Grid
    _op: WaveOperator | None = None
    _lam1: float | None = None
    region: ControlRegion | None = None
    region_grid: Grid | None = None
    region_native: ControlRegion | None = None
    build: object = None
    T_gcc: float | None = None

    @property
    def op(self) -> WaveOperator:
        if self._op is None:
            self._op = WaveOperator(self.grid)
        return self._op

    @property
    def lam1(self) -> float:
        if self._lam1 is None:
            self._lam1 = float(first_dirichlet_eigenvalue(self.grid))
        return self._lam1

    def resolve_region(self) -> ControlRegion:
        if self.region is not None:
            return self.region
        rc = self.cfg.region
        if rc.kind == "admissible":
            eps0 = rc.epsilon0 if rc.epsilon0 is not None else rc.epsilon / 2
            rc.epsilon0 = eps0
            if rc.build_resolution is not None:
                bgrid = build_grid(self.domain, rc.build_resolution)
                try:
                    self.build = build_admissible_region(bgrid, rc.epsilon, eps0, rc.k)
                except InfeasibleBudget as exc:
                    raise ConfigError("region.build_resolution", f"{exc} (smallest feasible epsilon here {exc.eps_min:g})") from None
            else:
                r = self.cfg.resolution
                while True:
                    bgrid = build_grid(self.domain, r)
                    try:
                        self.build = build_admissible_region(bgrid, rc.epsilon, eps0, rc.k)
                        break
                    except InfeasibleBudget:
                        r *= 2
                        if r > BUILD_LIMIT:
                            raise ConfigError("region.epsilon", f"no feasible build resolution up to {BUILD_LIMIT}") from None
                rc.build_resolution = r
            self.region_grid = bgrid
            self.region_native = self.build.omega
            self.T_gcc = gcc_time_from_potential(self.build.potential, bgrid).T
            self.region = self.build.omega if bgrid.resolution == self.grid.resolution else transfer_region(self.build.omega, self.grid)
        elif rc.kind == "preset":
            try:
                self.region = preset_region(rc.preset, self.grid, **rc.params)
            except TypeError as exc:
                raise ConfigError("region.params", str(exc)) from None
            self.region_grid, self.region_native = self.grid, self.region
        else:
            header, rows = R.read_csv(rc.mask_file)
            if header != ["label", "i", "j0", "j1"]:
                raise ConfigError("region.mask_file", "expected columns label,i,j0,j1")
            masks = R.runs_to_masks(rows, self.grid.shape)
            if "omega" not in masks:
                raise ConfigError("region.mask_file", "no rows labelled 'omega'")
            self.region = ControlRegion.from_cells(self.grid, masks["omega"], name=Path(rc.mask_file).stem)
            self.region_grid, self.region_native = self.grid, self.region
        return self.region

    def horizon(self) -> float:
        if self.cfg.solver.T is None:
            self.cfg.solver.T = float(default_horizon(self.grid, self.T_gcc))
        return self.cfg.solver.T

    def damping(self) -> DampingCoefficient:
        d = self.cfg.damping
        if d.where == "none":
            return DampingCoefficient.none(self.grid)
        if d.where == "uniform":
            return DampingCoefficient.uniform(self.grid, d.a0)
        return DampingCoefficient.on_region(self.resolve_region(), d.a0, d.background)

    def data(self, count: int | None = None):
        dc = self.cfg.experiment.data
        n = dc.count if count is None else count
        if dc.kind == "random":
            return random_data(self.grid, dc.seed, n, dc.modes, dc.norm, self.op)
        if dc.kind == "eigenmode":
            u0 = sine_modes(self.grid, [(1, 1)])
            u0 = u0 * dc.norm / np.sqrt(self.op.grad_sq(u0.reshape(self.op.N, 1)))[0]
            return u0, np.zeros_like(u0)
        return gaussian_beam(self.grid, dc.beam_width, dc.beam_n, norm=dc.norm, op=self.op)


def scenario(cfg: ScenarioConfig) -> Scenario:
    try:
        dom = make_domain(cfg)
        return Scenario(cfg, dom, build_grid(dom, cfg.resolution))
    except GeometryError as exc:
        raise ConfigError("domain", str(exc)) from None


# ---------------------------------------------------------------------------
# run records


@dataclass
class Run:
    sub: str
    out: Path
    verdicts: dict = field(default_factory=dict)
    constants: dict = field(default_factory=dict)
    reports: dict = field(default_factory=dict)
    grids: dict = field(default_factory=dict)
    files: list = field(default_factory=list)

    def csv(self, name, header, rows):
        R.write_csv(self.out / name, header, rows)
        self.files.append(name)

    def svg(self, name, fn, *args, **kw):
        fn(self.out / name, *args, **kw)
        self.files.append(name)

    @property
    def passed(self) -> bool:
        return all(bool(v) for v in self.verdicts.values())


def write_manifest(run: Run, cfg: ScenarioConfig) -> Path:
    dc = cfg.experiment.data
    man = {
        "tool": "gcclab", "version": __version__, "subcommand": run.sub, "config": cfg.to_dict(),
        "seeds": {"data": dc.seed, "pairs": dc.seed, "pair_perturbation": dc.seed + 7919},
        "grids": run.grids, "verdicts": run.verdicts, "constants": run.constants, "reports": run.reports,
        "passed": run.passed,
        "files": [{"name": n, "sha256": R.sha256(run.out / n), "bytes": (run.out / n).stat().st_size} for n in sorted(set(run.files))],
    }
    return R.write_json(run.out / MANIFEST, man)


def _segment_rows(label, grid: Grid, sel):
    s = grid.segments
    return [(label, *s.p0[k], *s.p1[k]) for k in np.flatnonzero(sel)]


def _mask_rows(grid: Grid, masks: dict):
    rows = []
    for label, m in masks.items():
        rows += R.mask_runs(label, m)
    return rows


# ---------------------------------------------------------------------------
# renderers: each reads only CSVs and the manifest


def _load_masks(out: Path, info: dict, name="region_masks.csv"):
    header, rows = R.read_csv(out / name)
    masks = R.runs_to_masks(rows, (info["nx"], info["ny"]))
    return masks


def _load_segments(out: Path, name="region_segments.csv"):
    header, rows = R.read_csv(out / name)
    segs = {}
    for r in rows:
        segs.setdefault(r[0], []).append(((float(r[1]), float(r[2])), (float(r[3]), float(r[4]))))
    return segs


def render_region(out: Path, man: dict):
    info = man["grids"]["region"]
    masks = _load_masks(out, info)
    order = {k: masks[k] for k in ("V", "omega") if k in masks}
    return R.region_svg(out / "region.svg", info["bbox"], info["h"], info["origin"], order, _load_segments(out))


def render_rays(out: Path, man: dict):
    info = man["grids"]["region"]
    masks = _load_masks(out, info)
    c = R.columns(out / "ray_paths.csv")
    paths = []
    if len(c["ray"]):
        for k in np.unique(c["ray"]):
            sel = c["ray"] == k
            paths.append(np.stack([c["x"][sel], c["y"][sel]], 1))
    return R.rays_svg(out / "rays.svg", info["bbox"], paths, {"omega": masks["omega"]} if "omega" in masks else {},
                      info["h"], info["origin"])


def render_energy(out: Path, man: dict):
    c = R.columns(out / "energy.csv")
    ys = {"E": c["E"], "totalE": c["totalE"]}
    return R.curve_svg(out / "energy.svg", c["t"], ys, logy=bool(np.all(c["E"] > 0)))


def render_field(out: Path, man: dict):
    info = man["grids"]["simulation"]
    c = R.columns(out / "field.csv")
    made = []
    for k in np.unique(c["snapshot"]).astype(int):
        sel = c["snapshot"] == k
        F = np.zeros((info["nx"], info["ny"]))
        F[c["i"][sel].astype(int), c["j"][sel].astype(int)] = c["u"][sel]
        made.append(R.heatmap_svg(out / f"field_{k}.svg", F, info["bbox"]))
    return made


def render_ratios(out: Path, man: dict):
    c = R.columns(out / "ratios.csv")
    return R.curve_svg(out / "ratios.svg", c["datum"], {"interior": c["interior"], "boundary": c["boundary"]}, logy=True,
                       markers=True)


def render_fit(out: Path, man: dict):
    c = R.columns(out / "fit.csv")
    finite = np.isfinite(c["C_B"]) & (c["C_B"] > 0)
    R.curve_svg(out / "fit.svg", c["zeta"][finite], {"C_B": c["C_B"][finite]}, logy=True)
    p = R.columns(out / "pairs.csv")
    t = np.unique(p["t"])
    D = p["D2"].reshape(len(t), -1)
    L = p["L3sq"].reshape(len(t), -1)
    return R.curve_svg(out / "pairs.svg", t, {"max D2": D.max(1), "max L3sq": L.max(1)}, logy=True)


def render_contours(out: Path, man: dict):
    info = man["grids"]["simulation"]
    c = R.columns(out / "contours.csv")
    paths = [np.array([[c["x0"][k], c["y0"][k]], [c["x1"][k], c["y1"][k]]]) for k in range(len(c["x0"]))]
    return R.rays_svg(out / "contours.svg", info["bbox"], paths)


RENDERERS = {"region": render_region, "rays": render_rays, "energy": render_energy, "field": render_field,
             "ratios": render_ratios, "fit": render_fit, "contours": render_contours}
PRODUCES = {"region": ["region"], "gcc": ["rays"], "coarea": ["contours"], "simulate": ["energy", "field"],
            "observe": ["ratios"], "quasistab": ["fit"]}
SVG_FILES = {"region": ["region.svg"], "rays": ["rays.svg"], "energy": ["energy.svg"], "ratios": ["ratios.svg"],
             "fit": ["fit.svg", "pairs.svg"], "contours": ["contours.svg"]}


def _render_all(run: Run, sub: str):
    man = {"grids": run.grids}
    for what in PRODUCES[sub]:
        res = RENDERERS[what](run.out, man)
        paths = res if isinstance(res, list) else [res]
        run.files += [Path(p).name for p in paths]
        if what == "fit":
            run.files.append("pairs.svg")


# ---------------------------------------------------------------------------
# subcommands


def _region_artifacts(sc: Scenario, run: Run):
    region = sc.resolve_region()
    g = sc.region_grid
    run.grids["region"] = grid_info(g)
    omega = sc.region_native
    masks = {"omega": omega.cells}
    segs = []
    if sc.build is not None:
        masks = {"V": sc.build.V, "omega": omega.cells, "complement": sc.build.complement}
        part = boundary_partition(sc.build.potential, g, omega)
        segs = _segment_rows("gamma0", g, part.gamma0) + _segment_rows("gamma1", g, part.gamma1)
    else:
        segs = _segment_rows("omega_trace", g, omega.boundary)
    run.csv("region_masks.csv", ["label", "i", "j0", "j1"], _mask_rows(g, masks))
    run.csv("region_segments.csv", ["label", "x0", "y0", "x1", "y1"], segs)
    return region


def cmd_region(sc: Scenario, run: Run):
    _region_artifacts(sc, run)
    rc = sc.cfg.region
    g = sc.region_grid
    omega = sc.region_native
    m = omega.measure
    rows = [("omega", m.interior, m.boundary, m.total)]
    run.constants.update({"measure_interior": m.interior, "measure_boundary": m.boundary, "measure_total": m.total})
    if sc.build is not None:
        b = sc.build
        for name, mp in b.measures.items():
            rows.append((name, mp.interior, mp.boundary, mp.total))
        rep = verify_escape_conditions(b.potential, b.V, g, 1e-6)
        dec = build_overlap_decomposition(g, b)
        cond = [(k, c.passed, c.worst, c.note) for k, c in rep.conditions.items()]
        cond += [(f"decomposition.{k}", v, float("nan"), "") for k, v in dec.checks.items()]
        run.csv("conditions.csv", ["condition", "passed", "worst", "note"], cond)
        run.verdicts["measure_below_epsilon"] = bool(m.total < rc.epsilon)
        run.verdicts["escape_conditions"] = rep.passed
        run.verdicts["decomposition"] = all(dec.checks.values())
        run.constants.update({"build_resolution": g.resolution, "layers": b.layers, "T_gcc": sc.T_gcc,
                              "subdomains": len(dec.omegas), "overlap_edges": len(dec.edges)})
        run.reports["escape"] = rep.summary()
    else:
        ok, _ = check_epsilon_controllable(omega, rc.epsilon)
        run.verdicts["epsilon_controllable"] = ok
    run.constants["epsilon"] = rc.epsilon
    run.csv("measures.csv", ["set", "interior", "boundary", "total"], rows)
    _render_all(run, "region")


def cmd_gcc(sc: Scenario, run: Run):
    _region_artifacts(sc, run)
    gc = sc.cfg.experiment.gcc
    omega = sc.region_native
    if sc.build is not None:
        T = sc.T_gcc
    else:
        T = sc.cfg.solver.T if sc.cfg.solver.T is not None else gc.t_max
    rep = check_gcc(sc.domain, omega, T, Sampler(gc.n_pos, gc.n_dir), gc.corner_policy)
    run.csv("trapped_rays.csv", ["x", "y", "dx", "dy"], [tuple(r) for r in rep.trapped])
    rows = []
    t_show = min(T, 2.0 * sc.domain.diameter / sc.domain.speed.c_min)
    for k, r in enumerate(rep.trapped[: gc.paths]):
        res = trace_ray(sc.domain, RayState(r[:2], r[2:] * sc.domain.speed.value(r[0], r[1])), None, t_show, record_path=True)
        rows += [(k, float(x), float(y)) for x, y in np.asarray(res.path)[:, :2]]
    run.csv("ray_paths.csv", ["ray", "x", "y"], rows)
    run.verdicts["gcc"] = rep.passed
    s = rep.summary()
    run.constants.update({"T": T, "T_hat": rep.T_hat, "hit_fraction": rep.hit_fraction, "trapped": s["trapped"],
                          "samples": rep.samples, "corner_terminated": rep.corner_terminated})
    run.reports["gcc"] = s
    _render_all(run, "gcc")


def _square_cases(grid: Grid):
    x0, x1, y0, y1 = grid.domain.bbox
    cx, cy = 0.5 * (x0 + x1), 0.5 * (y0 + y1)

    def r(x, y):
        return np.hypot(x - cx, y - cy)

    def gr(x, y):
        d = np.maximum(r(x, y), 1e-300)
        return (x - cx) / d, (y - cy) / d

    return {
        "x1": (lambda x, y: x - x0, lambda x, y: (np.ones_like(x), np.zeros_like(x))),
        "x1_squared": (lambda x, y: (x - x0) ** 2, lambda x, y: (2 * (x - x0), np.zeros_like(x))),
        "radial": (r, gr),
    }


def cmd_coarea(sc: Scenario, run: Run):
    region = _region_artifacts(sc, run)
    run.grids["simulation"] = grid_info(sc.grid)
    lv = sc.cfg.experiment.levels
    rows = []
    res = {}
    for name, (phi, gphi) in _square_cases(sc.grid).items():
        c = coarea_check(phi, gphi, 1.0, sc.grid, lv)
        res[name] = c
        rows.append((name, sc.grid.resolution, lv, c.lhs, c.rhs, c.rel_error))
    run.csv("coarea.csv", ["case", "resolution", "levels", "lhs", "rhs", "rel_error"], rows)
    gamma = boundary_trace(region)
    prow = []
    if gamma.any():
        pr = prism_bound_check(gamma, region, lambda x, y: np.ones_like(x), sc.grid)
        for k, a in enumerate(pr.arcs):
            prow.append((k, a["segments"], a["length"], a["thickness_cells"], a["h_p"], a["C_g"], a["boundary"], a["prism"],
                         a["normal_variation"], a["chain_ok"], a["literal_ok"]))
        run.verdicts["prism_chain"] = pr.chain_ok
        run.constants["prism_C_hat"] = pr.C_hat
    run.csv("prism.csv", ["arc", "segments", "length", "thickness_cells", "h_p", "C_g", "boundary", "prism", "normal_variation",
                          "chain_ok", "literal_ok"], prow)
    fam = level_set_family(_square_cases(sc.grid)["x1_squared"][0], 1.0, sc.grid, 16, keep_segments=True)
    crow = [(float(t), *s[0], *s[1]) for t, segs in zip(fam.levels, fam.segments) for s in segs]
    run.csv("contours.csv", ["level", "x0", "y0", "x1", "y1"], crow)
    run.verdicts["linear_identity"] = res["x1"].rel_error <= 1e-12
    run.verdicts["quadratic_identity"] = res["x1_squared"].rel_error < 1e-2
    run.constants.update({f"rel_error_{k}": v.rel_error for k, v in res.items()})
    _render_all(run, "coarea")


def cmd_simulate(sc: Scenario, run: Run):
    cfg = sc.cfg
    run.grids["simulation"] = grid_info(sc.grid)
    damping = sc.damping()
    if cfg.damping.where == "region":
        _region_artifacts(sc, run)
    nl = make_nonlinearity(cfg)
    T = sc.horizon()
    dt, steps = time_step(sc.grid, T, cfg.solver.dt, cfg.solver.cfl)
    u0, u1 = sc.data(count=1)
    traj = solve_semilinear(sc.grid, u0[..., :1], u1[..., :1], damping, nl, T=T, dt=dt, cfl=cfg.solver.cfl, lam1=sc.lam1,
                            snap_every=steps, op=sc.op)
    tr = traj.trace
    every = max(1, steps // cfg.experiment.output_times)
    t, E, tot, dis, res = (np.asarray(a).ravel() for a in tr.rows(every))
    run.csv("energy.csv", ["t", "E", "totalE", "dissipation", "residual"], zip(t, E, tot, dis, res))
    frows = []
    I, J = np.nonzero(sc.grid.inside)
    for k in range(traj.u.shape[0]):
        U = traj.u[k, :, 0].reshape(sc.grid.shape)
        frows += [(k, float(traj.snap_times[k]), int(i), int(j), float(U[i, j])) for i, j in zip(I, J)]
    run.csv("field.csv", ["snapshot", "t", "i", "j", "u"], frows)
    ly = lyapunov_check(traj, damping, nl)
    rate = tr.max_residual_rate()
    totE = np.asarray(tr.totalE).ravel()
    drift = float(np.abs(totE - totE[0]).max() / max(abs(totE[0]), 1e-300))
    run.verdicts["energy_nonincreasing"] = ly.monotone
    run.verdicts["residual_rate"] = rate < 1e-4
    conservative = not np.any(damping.a > 0)
    if conservative:
        run.verdicts["energy_drift"] = drift < 1e-6
    if ly.status == "not stationary":
        run.verdicts["stationary"] = False
    run.constants.update({"T": T, "dt": dt, "steps": steps, "energy_drift": drift, "residual_rate": rate,
                          "E0": float(totE[0]), "E_T": float(totE[-1]), "lyapunov_status": ly.status, "lambda1": sc.lam1})
    if not conservative and cfg.nonlinearity.f == "zero":
        fit = decay_fit(tr.t_half, np.asarray(tr.E).ravel())
        run.constants.update({"decay_rate": fit.rate, "decay_residual": fit.residual})
    _render_all(run, "simulate")


def cmd_observe(sc: Scenario, run: Run):
    cfg = sc.cfg
    region = _region_artifacts(sc, run)
    run.grids["simulation"] = grid_info(sc.grid)
    T = sc.horizon()
    data = sc.data()
    gamma = boundary_trace(region)
    obs = observe(sc.grid, region, T, data, gamma=gamma, dt=cfg.solver.dt, cfl=cfg.solver.cfl, keep_integrals=True, op=sc.op)
    th = cfg.experiment.threshold
    inter = interior_observability(sc.grid, region, T, data, threshold=th, run=obs)
    bnd = boundary_observability(sc.grid, gamma, region, T, data, threshold=th, run=obs)
    uc = unique_continuation_probe(sc.grid, region, T, data, run=obs)
    keep = obs.denom > 0
    interior = np.where(keep, obs.omega_grad / np.where(keep, obs.denom, 1), np.nan)
    boundary = np.where(keep, obs.boundary / np.where(keep, obs.denom, 1), np.nan)
    const = np.full(len(keep), np.nan)
    ok = np.zeros(len(keep), bool)
    const[keep], ok[keep] = bnd.bridge_constants, bnd.bridge_ok
    run.csv("ratios.csv", ["datum", "interior", "boundary", "unique_continuation", "bridge_constant", "bridge_ok"],
            [(k, interior[k], boundary[k], uc.ratios[k], const[k], ok[k]) for k in range(len(keep))])
    run.verdicts["interior_observability"] = inter.passed
    run.verdicts["bridge"] = bool(bnd.bridge_ok.all())
    run.verdicts["unique_continuation"] = uc.consistent
    run.constants.update({"T": T, "k_hat_T": inter.k_hat, "k_hat_boundary": bnd.observability.k_hat, "uc_floor": uc.floor,
                          "ensemble": inter.size, "omega_measure": region.measure.total,
                          "bridge_constant_max": float(np.nanmax(const)) if np.isfinite(const).any() else 0.0})
    run.reports["interior"] = inter.summary()
    _render_all(run, "observe")


def cmd_quasistab(sc: Scenario, run: Run):
    cfg = sc.cfg
    ex = cfg.experiment
    run.grids["simulation"] = grid_info(sc.grid)
    damping = sc.damping()
    if cfg.damping.where == "region":
        _region_artifacts(sc, run)
    nl = make_nonlinearity(cfg)
    T = sc.horizon()
    z1, z2 = pair_data(sc.grid, ex.data.seed, ex.pairs, ex.data.norm, ex.pair_spread, sc.op)
    pr = run_pairs(sc.grid, z1, z2, damping, nl, T, dt=cfg.solver.dt, cfl=cfg.solver.cfl, lam1=sc.lam1, op=sc.op)
    idx = np.unique(np.round(np.linspace(0, len(pr.t) - 1, ex.output_times)).astype(int))
    t, D2, L3 = pr.t[idx], pr.D2[idx], pr.L3sq[idx]
    fit = quasi_stability_fit(t, D2, L3)
    run.csv("pairs.csv", ["t", "pair", "D2", "L3sq"],
            [(t[i], p, D2[i, p], L3[i, p]) for i in range(len(t)) for p in range(D2.shape[1])])
    run.csv("fit.csv", ["zeta", "C_B"], zip(fit.zetas, fit.C_B))
    run.verdicts["quasi_stability"] = fit.passed
    run.constants.update({"T": T, "zeta_hat": fit.zeta_hat, "C_B_hat": fit.C_B_hat, "margin": fit.margin,
                          "zeta_contraction": fit.zeta_contraction, "pairs": fit.pairs, "output_times": fit.times})
    if damping.a0 > 0:
        try:
            pe = perturbed_energy_diagnostics(pr, ex.mu, ex.eta, sc.lam1, damping.a0, nl.m1)
        except ValueError as exc:
            raise ConfigError("experiment.mu", str(exc)) from None
        run.verdicts["sandwich"] = pe.sandwich_ok
        run.constants.update({"beta1": pe.beta1, "beta2": pe.beta2, "sandwich_lower_margin": pe.lower_margin,
                              "sandwich_upper_margin": pe.upper_margin, "C_fit": pe.C_fit})
    if cfg.nonlinearity.f == "zero" and nl.g_slope is not None:
        wc = window_contractions(pr.t, pr.D2, T / ex.windows, ex.windows)
        run.verdicts["window_composition"] = wc.agree
        run.constants.update({"window_gammas": wc.gammas.tolist(), "zeta_window": wc.zeta, "window_spread": wc.spread})
    _render_all(run, "quasistab")


COMMANDS = {"region": cmd_region, "gcc": cmd_gcc, "coarea": cmd_coarea, "simulate": cmd_simulate, "observe": cmd_observe,
            "quasistab": cmd_quasistab}


# ---------------------------------------------------------------------------
# entry points


def output_dir(sub: str, flag: str | None, cfg: ScenarioConfig) -> Path:
    if flag:
        return Path(flag)
    if cfg.output_dir:
        return Path(cfg.output_dir)
    root = os.environ.get("GCCLAB_OUT")
    return Path(root) / sub if root else Path("gcclab_out") / sub


def _set_path(d: dict, path: str, value):
    keys = path.split(".")
    cur = d
    for k in keys[:-1]:
        nxt = cur.get(k)
        if nxt is None:
            nxt = cur[k] = {}
        if not isinstance(nxt, dict):
            raise ConfigError(path, f"{k} is not a section")
        cur = nxt
    cur[keys[-1]] = value


def config_from_args(args) -> ScenarioConfig:
    if args.config:
        p = Path(args.config)
        if not p.exists():
            raise ConfigError("", f"config file not found: {p}")
        try:
            raw = yaml.safe_load(p.read_text()) or {}
        except yaml.YAMLError as exc:
            raise ConfigError("", f"invalid YAML: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError("", "config must be a mapping")
    else:
        raw = {}
    raw = copy.deepcopy(raw)
    flags = {"epsilon": "region.epsilon", "epsilon0": "region.epsilon0", "k": "region.k",
             "build_resolution": "region.build_resolution", "resolution": "resolution", "T": "solver.T", "cfl": "solver.cfl",
             "seed": "experiment.data.seed", "count": "experiment.data.count"}
    for attr, path in flags.items():
        v = getattr(args, attr, None)
        if v is not None:
            _set_path(raw, path, v)
    if getattr(args, "preset", None):
        _set_path(raw, "region.kind", "preset")
        _set_path(raw, "region.preset", args.preset)
    if getattr(args, "mask", None):
        _set_path(raw, "region.kind", "mask")
        _set_path(raw, "region.mask_file", args.mask)
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise ConfigError("", f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        _set_path(raw, k.strip(), yaml.safe_load(v))
    return load_config(raw)


def execute(sub: str, cfg: ScenarioConfig, out: Path) -> Run:
    out.mkdir(parents=True, exist_ok=True)
    run = Run(sub, out)
    sc = scenario(cfg)
    COMMANDS[sub](sc, run)
    write_manifest(run, cfg)
    return run


def _print_run(run: Run):
    status = "PASS" if run.passed else "FAIL"
    print(f"{run.sub}: {status}  ({run.out / MANIFEST})")
    for k, v in run.verdicts.items():
        print(f"  [{'ok' if v else 'FAIL'}] {k}")
    for k, v in run.constants.items():
        print(f"  {k} = {v:.6g}" if isinstance(v, float) else f"  {k} = {v}")


def cmd_report(path: Path) -> int:
    mans = sorted(path.rglob(MANIFEST)) if path.is_dir() else [path]
    if not mans:
        print(f"error: no {MANIFEST} under {path}", file=sys.stderr)
        return 2
    ok = True
    import json
    for m in mans:
        man = json.loads(m.read_text())
        bad = [f["name"] for f in man["files"] if not (m.parent / f["name"]).exists() or R.sha256(m.parent / f["name"]) != f["sha256"]]
        passed = man["passed"] and not bad
        ok &= passed
        print(f"{man['subcommand']:<10} {man['config']['name']:<24} {'PASS' if passed else 'FAIL'}  {m.parent}")
        for k, v in man["verdicts"].items():
            print(f"    [{'ok' if v else 'FAIL'}] {k}")
        for k, v in man["constants"].items():
            print(f"    {k} = {v:.6g}" if isinstance(v, float) else f"    {k} = {v}")
        for name in bad:
            print(f"    [FAIL] inventory mismatch: {name}")
    return 0 if ok else 1


def cmd_render(manifest: Path, what: str) -> int:
    import json
    if not manifest.exists():
        raise FileNotFoundError(f"missing artifact: {manifest}")
    man = json.loads(manifest.read_text())
    out = manifest.parent
    names = [what] if what != "all" else PRODUCES[man["subcommand"]]
    for w in names:
        res = RENDERERS[w](out, man)
        for p in res if isinstance(res, list) else [res]:
            print(p)
    return 0


def replay(manifest: Path, out: Path | None = None) -> tuple[bool, list]:
    """Re-run a manifest's resolved configuration and compare CSV hashes; returns (identical, mismatches)."""
    import json
    man = json.loads(Path(manifest).read_text())
    cfg = load_config(man["config"])
    cfg.output_dir = None
    tmp = None
    if out is None:
        tmp = tempfile.TemporaryDirectory()
        out = Path(tmp.name)
    try:
        execute(man["subcommand"], cfg, Path(out))
        bad = []
        for f in man["files"]:
            if f["name"].endswith(".csv"):
                p = Path(out) / f["name"]
                if not p.exists() or R.sha256(p) != f["sha256"]:
                    bad.append(f["name"])
        return not bad, bad
    finally:
        if tmp is not None:
            tmp.cleanup()


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gcclab", description="Control regions, ray certification and damped-wave experiments.")
    ap.add_argument("--version", action="version", version=f"gcclab {__version__}")
    sp = ap.add_subparsers(dest="sub", required=True)
    for name in SUBCOMMANDS:
        p = sp.add_parser(name)
        p.add_argument("config", nargs="?", help="scenario YAML file")
        p.add_argument("--out", help="output directory")
        p.add_argument("--epsilon", type=float)
        p.add_argument("--epsilon0", type=float)
        p.add_argument("--k", type=int)
        p.add_argument("--build-resolution", dest="build_resolution", type=int)
        p.add_argument("--preset", help="omega1 | omega2 | omega3 | corner | whole")
        p.add_argument("--mask", help="run-length mask CSV with an 'omega' label")
        p.add_argument("--resolution", type=int)
        p.add_argument("--T", type=float)
        p.add_argument("--cfl", type=float)
        p.add_argument("--seed", type=int)
        p.add_argument("--count", type=int)
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config field by dotted path")
    p = sp.add_parser("report")
    p.add_argument("path", help="manifest file or directory searched recursively")
    p = sp.add_parser("render")
    p.add_argument("manifest")
    p.add_argument("--what", default="all", choices=["all", *RENDERERS])
    p = sp.add_parser("replay")
    p.add_argument("manifest")
    p.add_argument("--out")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.sub == "report":
            return cmd_report(Path(args.path))
        if args.sub == "render":
            return cmd_render(Path(args.manifest), args.what)
        if args.sub == "replay":
            same, bad = replay(Path(args.manifest), Path(args.out) if args.out else None)
            print("identical" if same else "mismatch: " + ", ".join(bad))
            return 0 if same else 1
        cfg = config_from_args(args)
        run = execute(args.sub, cfg, output_dir(args.sub, args.out, cfg))
        _print_run(run)
        return 0 if run.passed else 1
    except ConfigError as exc:
        print(f"config error at {exc.path or '<root>'}: {exc}", file=sys.stderr)
        return 2
    except HypothesisViolation as exc:
        print(f"config error at nonlinearity: {exc}", file=sys.stderr)
        return 2
    except CFLViolation as exc:
        print(f"config error at solver: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalAbort as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return 3
    except NotConverged as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
