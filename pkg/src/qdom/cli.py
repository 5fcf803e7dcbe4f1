"""Configuration-driven command line front end.

``qdom run config.json`` executes one pipeline (balayage, one-phase,
two-phase, multi-phase, verify-null, pompeiu, scatter, permittivity),
writes requested fields (CSV + raw raster), masks, PGM heatmaps and a
deterministic JSON report echoing the config and every hypothesis check.

Exit codes: 0 all checks passed, 2 config/schema error, 3 a mathematical
hypothesis was violated (the report is still written), 4 solver failure.
``QDOM_OUT`` overrides the output directory.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from . import balayage as bal
from . import grid as gr
from . import linsolve as ls
from . import multiphase as mp
from . import scatter as sc
from . import specfun as sf
from . import twophase as tp
from . import verify as vf

_HYPOTHESIS_ERRORS = (bal.CapacityError, mp.HypothesisError,
                      sc.AdmissibilityError, sc.TotalFieldZeroError,
                      sc.PermittivityError, ls.IndefiniteOperatorError,
                      gr.BoxTooSmallError, vf.ResolutionError)
_CONFIG_ERRORS = (gr.ConfigError, gr.PlacementError, KeyError, TypeError,
                  ValueError, json.JSONDecodeError)


class ConfigSchemaError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Config parsing
# ---------------------------------------------------------------------------

_TASKS = ("balayage", "one-phase", "two-phase", "multi-phase",
          "verify-null", "pompeiu", "scatter", "permittivity")


def _build_grid(block) -> gr.Grid:
    return gr.make_grid(block["n"], block["origin"], block["extent"],
                        block["cells"])


def _build_solver(block) -> ls.SolverConfig:
    block = block or {}
    return ls.SolverConfig(
        tol_rel=float(block.get("tol_rel", 1e-9)),
        max_iter=block.get("max_iter"),
        relaxation=float(block.get("relaxation", 1.7)),
        sweep=block.get("sweep", "redblack"),
    )


def _build_phase(block, grid: gr.Grid) -> mp.PhaseSpec:
    atoms = [(tuple(a[0]), float(a[1])) for a in block.get("atoms", [])]
    radius = float(block.get("mollify_radius", 4.0 * grid.h))
    if atoms:
        mu = gr.deposit_measure(grid, atoms, radius)
    else:
        mu = gr.GridMeasure(grid, grid.zeros(), atoms=[])
    return mp.PhaseSpec(k=float(block.get("k", 0.0)),
                        lam=float(block.get("lambda", 1.0)),
                        mu=mu, label=block.get("label", ""))


def _kstar_guard(grid: gr.Grid, ks) -> None:
    kbox = ls.box_kstar(grid)
    for k in ks:
        if k >= kbox:
            raise ls.IndefiniteOperatorError(
                f"k = {k} is not below the first Dirichlet eigenvalue guard "
                f"k_* = {kbox:.6g} of the computational box")


# ---------------------------------------------------------------------------
# Output helpers
# ---------------------------------------------------------------------------

def _sanitize(obj):
    if isinstance(obj, dict):
        return {k: _sanitize(v) for k, v in obj.items()
                if not isinstance(v, (np.ndarray, gr.ScalarField, gr.Mask))}
    if isinstance(obj, (list, tuple)):
        return [_sanitize(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    return obj


def write_pgm(values: np.ndarray, path, lo=None, hi=None) -> None:
    """8-bit binary PGM with a linear gray ramp over [min, max]."""
    lo = float(np.min(values)) if lo is None else lo
    hi = float(np.max(values)) if hi is None else hi
    span = hi - lo if hi > lo else 1.0
    gray = np.clip((values - lo) / span * 255.0, 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{gray.shape[1]} {gray.shape[0]}\n255\n".encode())
        fh.write(gray.tobytes())


class _Sink:
    def __init__(self, outdir: Path, formats, heatmap: bool):
        self.outdir = outdir
        self.formats = formats
        self.heatmap = heatmap
        self.files: list[str] = []

    def field(self, f: gr.ScalarField, name: str) -> None:
        if "csv" in self.formats:
            p = self.outdir / f"{name}.csv"
            gr.write_csv(f, p)
            self.files.append(p.name)
        if "raster" in self.formats:
            p = self.outdir / f"{name}.f64"
            gr.write_raster(f, p)
            self.files.append(p.name)
        if self.heatmap:
            self._pgm(f.values, name)

    def mask(self, m: gr.Mask, name: str) -> None:
        self.field(gr.ScalarField(m.grid, m.flags.astype(float)), name)

    def sign_field(self, f: gr.ScalarField, tol: float, name: str) -> None:
        sign = np.where(f.values > tol, 1.0, np.where(f.values < -tol, -1.0, 0.0))
        self.field(gr.ScalarField(f.grid, sign), name)

    def _pgm(self, values: np.ndarray, name: str) -> None:
        if values.ndim == 2:
            p = self.outdir / f"{name}.pgm"
            write_pgm(values, p)
            self.files.append(p.name)
        else:
            for axis in range(values.ndim):
                sl = [slice(None)] * values.ndim
                sl[axis] = values.shape[axis] // 2
                p = self.outdir / f"{name}.x{axis}.pgm"
                write_pgm(values[tuple(sl)], p)
                self.files.append(p.name)


# ---------------------------------------------------------------------------
# Pipelines: each returns (report dict, passed flag)
# ---------------------------------------------------------------------------

def _check(checks: list, name: str, passed: bool, **details) -> bool:
    entry = {"name": name, "passed": bool(passed)}
    entry.update(details)
    checks.append(entry)
    return bool(passed)


def _run_balayage(cfg, grid, solver, sink):
    phase = _build_phase(cfg["phases"][0], grid)
    k = phase.k
    _kstar_guard(grid, [k])
    res = bal.partial_balayage(phase.mu, k, config=solver)
    struct = bal.structure_check(res, phase.mu)
    checks: list = []
    _check(checks, "capacity_guard", res.diagnostics["capacity"] != "violated",
           classification=res.diagnostics["capacity"],
           mass=phase.mu.total_mass,
           capacity=sf.max_capacity(grid.n, k))
    _check(checks, "swept_density_structure", struct["passed"], **struct)
    tol_quad = float(cfg.get("quadrature_tol", 0.02))
    fam = vf.helmholtz_test_family(grid, k, n_dirs=4)
    qrep = vf.quadrature_residual(res.omega, phase.mu, k, fam)
    _check(checks, "one_phase_quadrature_identity",
           qrep.max_residual <= tol_quad, max_residual=qrep.max_residual,
           tolerance=tol_quad)
    sink.field(res.U, "potential")
    sink.field(res.V, "partial_reduction")
    sink.field(res.W, "gap")
    sink.mask(res.omega, "noncontact_mask")
    report = {"checks": checks, "diagnostics": _sanitize(res.diagnostics),
              "boundary_excess": res.boundary_excess,
              "quadrature": _sanitize(qrep.members)}
    return report, all(c["passed"] for c in checks)


def _run_one_phase(cfg, grid, solver, sink):
    phase = _build_phase(cfg["phases"][0], grid)
    _kstar_guard(grid, [phase.k])
    v = mp.minimize_one_phase(phase, grid, solver)
    e = mp.energy([v], [phase], grid)
    op = ls.OperatorSpec(grid=grid, k=phase.k)
    comp = np.minimum(v.values, op.apply(v.values) - phase.forcing(grid))
    comp_norm = float(np.max(np.abs(comp)))
    scale = max(1.0, float(np.max(np.abs(phase.forcing(grid)))))
    checks: list = []
    _check(checks, "complementarity", comp_norm <= 1e-7 * scale,
           residual=comp_norm)
    _check(checks, "negative_energy_iff_nonempty",
           (e < 0) == bool(np.any(v.values > 1e-8)), energy=e)
    sink.field(v, "minimizer")
    sink.mask(gr.Mask(grid, v.values > 1e-8), "positivity_mask")
    return {"checks": checks, "energy": e}, all(c["passed"] for c in checks)


def _two_phase_results(cfg, grid, solver):
    p_plus = _build_phase(cfg["phases"][0], grid)
    p_minus = _build_phase(cfg["phases"][1], grid)
    _kstar_guard(grid, [p_plus.k, p_minus.k])
    method = cfg.get("method", "both")
    out = {}
    if method in ("balayage", "both"):
        if p_plus.k != p_minus.k:
            raise mp.HypothesisError("the balayage route needs equal wavenumbers")
        out["balayage"] = tp.construct_two_phase_balayage(
            p_plus.mu, p_minus.mu, p_plus.k, config=solver)
    if method in ("minimization", "both"):
        f1 = gr.ScalarField(grid, p_plus.forcing(grid))
        f2 = gr.ScalarField(grid, p_minus.forcing(grid))
        out["minimization"] = tp.minimize_scalar_two_phase(
            p_plus.k, p_minus.k, f1, f2, config=solver)
    return p_plus, p_minus, out


def _run_two_phase(cfg, grid, solver, sink):
    p_plus, p_minus, results = _two_phase_results(cfg, grid, solver)
    checks: list = []
    primary = results.get("balayage") or results["minimization"]
    for name, res in results.items():
        _check(checks, f"{name}_converged",
               res.diagnostics.get("converged", True),
               iterations=res.diagnostics.get("iterations",
                                              res.diagnostics.get("sweeps")))
        supp_p = p_plus.mu.density > 0
        supp_m = p_minus.mu.density > 0
        _check(checks, f"{name}_source_support",
               bool(np.all(res.D_plus.flags[supp_p]))
               and bool(np.all(res.D_minus.flags[supp_m])))
        if "checks" in res.diagnostics:
            for cname, ok in res.diagnostics["checks"].items():
                if isinstance(ok, bool):
                    _check(checks, f"{name}_{cname}", ok)
    if len(results) == 2:
        cv = tp.cross_validate(results["balayage"], results["minimization"])
        _check(checks, "route_agreement_masks",
               cv["symdiff_plus_outside_collar"] == 0
               and cv["symdiff_minus_outside_collar"] == 0, **cv)
        _check(checks, "route_agreement_l2", cv["l2_relative"] <= 0.05,
               l2_relative=cv["l2_relative"])
    if p_plus.k == p_minus.k and p_plus.k > 0:
        tol_quad = float(cfg.get("quadrature_tol", 0.02))
        fam = vf.helmholtz_test_family(grid, p_plus.k, n_dirs=4)
        qrep = vf.quadrature_residual((primary.D_plus, primary.D_minus),
                                      (p_plus.mu, p_minus.mu),
                                      p_plus.k, fam)
        _check(checks, "two_phase_quadrature_identity",
               qrep.max_residual <= tol_quad, max_residual=qrep.max_residual,
               tolerance=tol_quad)
    sink.field(primary.u, "signed_solution")
    sink.sign_field(primary.u, primary.tol_phase, "phase_sign")
    sink.mask(primary.D_plus, "mask_plus")
    sink.mask(primary.D_minus, "mask_minus")
    report = {"checks": checks,
              "diagnostics": {n: _sanitize(r.diagnostics)
                              for n, r in results.items()}}
    return report, all(c["passed"] for c in checks)


def _run_multi_phase(cfg, grid, solver, sink):
    specs = [_build_phase(b, grid) for b in cfg["phases"]]
    _kstar_guard(grid, [s.k for s in specs])
    state = mp.minimize_segregated(specs, grid, solver)
    checks: list = []
    _check(checks, "sweep_converged", state.converged, sweeps=state.sweeps)
    masks = state.masks()
    overlap = 0
    for i in range(len(masks)):
        for j in range(i + 1, len(masks)):
            overlap += int(np.sum(masks[i].flags & masks[j].flags))
    _check(checks, "segregation", overlap == 0, overlapping_cells=overlap)
    energy_ok = all(b <= a + 1e-9 * (1 + abs(a)) for a, b in
                    zip(state.energy_history, state.energy_history[1:]))
    _check(checks, "energy_monotone", energy_ok, energy=state.energy)
    residuals = {}
    for i in range(len(specs)):
        for j in range(i + 1, len(specs)):
            _, sup = mp.local_pde_residual(state, i, j, specs)
            residuals[f"{i}-{j}"] = sup
    if len({s.k for s in specs}) == 1:
        sup_rep = mp.support_checks(state, specs, config=solver)
        _check(checks, "support_comparison", sup_rep["passed"],
               **_sanitize(sup_rep))
    for i, f in enumerate(state.fields):
        sink.field(f, f"phase_{i}")
    report = {"checks": checks, "energy": state.energy,
              "energy_history": state.energy_history,
              "pair_residuals": residuals}
    return report, all(c["passed"] for c in checks)


def _verify_grid_profile(cfg, grid):
    block = cfg.get("verify", {})
    k = float(block.get("k", 1.0))
    m = int(block.get("m", 1))
    u, D = vf.null_qd_profile(grid, k, m)
    return block, k, m, u, D


def _run_verify_null(cfg, grid, solver, sink):
    block, k, m, u, D = _verify_grid_profile(cfg, grid)
    fam = vf.helmholtz_test_family(grid, k,
                                   n_dirs=int(block.get("n_dirs", 4)),
                                   centers=block.get("centers", ()))
    qrep = vf.quadrature_residual(D, None, k, fam)
    checks: list = []
    tol_quad = float(cfg.get("quadrature_tol", 0.02))
    _check(checks, "null_quadrature_identity", qrep.max_residual <= tol_quad,
           max_residual=qrep.max_residual, members=len(fam.members),
           tolerance=tol_quad)
    sink.field(u, "null_profile")
    sink.mask(D, "null_ball")
    return ({"checks": checks, "quadrature": _sanitize(qrep.members)},
            all(c["passed"] for c in checks))


def _run_pompeiu(cfg, grid, solver, sink):
    block, k, m, u, D = _verify_grid_profile(cfg, grid)
    idrep = vf.pompeiu_identities(u, D, k)
    ts = block.get("t_values", [round(-2 + 0.25 * i, 2) for i in range(21)])
    scan = vf.saddle_scan(u, D, k, ts)
    checks: list = []
    _check(checks, "energy_identities", idrep["passed"],
           **{kk: vv for kk, vv in idrep.items() if kk != "passed"})
    _check(checks, "saddle_parabola", scan["max_deviation"] <= 0.02,
           max_deviation=scan["max_deviation"])
    _check(checks, "ray_maximum_at_one", scan["argmax_at_one"],
           argmax_t=scan["argmax_t"])
    sink.field(u, "null_profile")
    return ({"checks": checks, "identities": _sanitize(idrep),
             "saddle": _sanitize({k2: v for k2, v in scan.items() if k2 != "scan"}),
             "saddle_scan": scan["scan"]},
            all(c["passed"] for c in checks))


def _run_scatter(cfg, grid, solver, sink, want_permittivity=False):
    block = cfg.get("scatter", {})
    p_plus, p_minus, results = _two_phase_results(cfg, grid, solver)
    two = results.get("balayage") or results["minimization"]
    k0 = float(block.get("k0", 0.25))
    _kstar_guard(grid, [])
    u0 = sc.make_incident(grid, k0, block.get("incident",
                                              {"kind": "radial", "scale": 10.0,
                                               "sign": -1.0}))
    adm = sc.admissibility_check(u0, two)
    checks: list = []
    _check(checks, "incident_admissibility", adm["passed"], **_sanitize(adm))
    if not adm["passed"]:
        raise sc.AdmissibilityError("incident field is not negative on the "
                                    "free boundaries")
    res = sc.build_contrasts(
        two, u0,
        lam_plus=float(cfg["phases"][0].get("lambda", 1.0)),
        lam_minus=float(cfg["phases"][1].get("lambda", 1.0)),
        k_plus=p_plus.k, k_minus=p_minus.k,
        mu_plus=p_plus.mu, mu_minus=p_minus.mu)
    sup = sc.nonscattering_residual(res, u0, two)
    ident = float(np.max(np.abs(res.q.values * res.total.values
                                + res.h_field.values)))
    _check(checks, "construction_identity", ident <= 1e-10 * max(
        1.0, float(np.max(np.abs(res.h_field.values)))), value=ident)
    margin = gr.margin_flags(grid, 2)
    _check(checks, "scattered_field_compact_support",
           float(np.max(np.abs(two.u.values[margin]))) <= two.tol_phase)
    for ring_name, mask, rho in (("plus", two.D_plus, res.rho_plus),
                                 ("minus", two.D_minus, res.rho_minus)):
        collar = mask.flags & gr.boundary_collar(mask.flags, 2)
        if collar.any():
            _check(checks, f"contrast_positive_near_boundary_{ring_name}",
                   bool(np.min(rho.values[collar]) > 0.0),
                   minimum=float(np.min(rho.values[collar])))
    sink.field(res.q, "contrast")
    sink.field(res.rho_plus, "rho_plus")
    sink.field(res.rho_minus, "rho_minus")
    sink.field(res.total, "total_field")
    report = {"checks": checks, "residual_norm": sup,
              "boundary_limits": _sanitize(res.boundary_limits)}
    if want_permittivity:
        radius = float(cfg.get("permittivity", {}).get(
            "radius", 0.45 * min(grid.extent)))
        eps, prep = sc.reconstruct_permittivity(res.q, radius, config=solver)
        _check(checks, "permittivity_positive", prep["psi_min"] > 0.0,
               **_sanitize(prep))
        sink.field(eps, "permittivity")
        report["permittivity"] = _sanitize(prep)
    return report, all(c["passed"] for c in checks)


_PIPELINES = {
    "balayage": _run_balayage,
    "one-phase": _run_one_phase,
    "two-phase": _run_two_phase,
    "multi-phase": _run_multi_phase,
    "verify-null": _run_verify_null,
    "pompeiu": _run_pompeiu,
    "scatter": _run_scatter,
    "permittivity": lambda cfg, grid, solver, sink: _run_scatter(
        cfg, grid, solver, sink, want_permittivity=True),
}


# ---------------------------------------------------------------------------
# Entry points
# ---------------------------------------------------------------------------

def run(config_path: str) -> int:
    try:
        with open(config_path) as fh:
            cfg = json.load(fh)
        task = cfg["task"]
        if task not in _TASKS:
            raise ConfigSchemaError(f"unknown task {task!r}; expected one of {_TASKS}")
        grid = _build_grid(cfg["grid"])
        solver = _build_solver(cfg.get("solver"))
        out_block = cfg.get("output", {})
        outdir = Path(os.environ.get("QDOM_OUT") or out_block.get("directory", "qdom-out"))
        formats = out_block.get("formats", ["csv", "raster"])
        heatmap = bool(out_block.get("heatmap", True))
    except (ConfigSchemaError, *_CONFIG_ERRORS) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    outdir.mkdir(parents=True, exist_ok=True)
    sink = _Sink(outdir, formats, heatmap)
    report = {"task": task, "config": cfg, "version": __version__,
              "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime())}
    try:
        body, passed = _PIPELINES[task](cfg, grid, solver, sink)
        report.update(_sanitize(body))
        report["passed"] = bool(passed)
        code = 0 if passed else 3
    except _HYPOTHESIS_ERRORS as exc:
        report["error"] = {"type": type(exc).__name__, "message": str(exc)}
        report["passed"] = False
        code = 3
    except ls.SolverError as exc:
        report["error"] = {"type": type(exc).__name__, "message": str(exc)}
        report["passed"] = False
        code = 4
    report["artifacts"] = sorted(set(sink.files))
    with open(outdir / "report.json", "w") as fh:
        json.dump(report, fh, sort_keys=True, indent=2)
        fh.write("\n")
    print(f"{task}: {'ok' if code == 0 else 'FAILED'} "
          f"(exit {code}); report at {outdir / 'report.json'}")
    for c in report.get("checks", []):
        print(f"  [{'pass' if c['passed'] else 'FAIL'}] {c['name']}")
    return code


def render(field_path: str, out_path: str) -> int:
    try:
        f = gr.read_raster(field_path)
    except Exception as exc:
        print(f"cannot read field: {exc}", file=sys.stderr)
        return 2
    values = f.values
    if values.ndim == 2:
        write_pgm(values, out_path)
        print(f"wrote {out_path}")
    else:
        base = Path(out_path)
        for axis in range(values.ndim):
            sl = [slice(None)] * values.ndim
            sl[axis] = values.shape[axis] // 2
            p = base.with_suffix(f".x{axis}{base.suffix or '.pgm'}")
            write_pgm(values[tuple(sl)], p)
            print(f"wrote {p}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="qdom",
        description="quadrature domains for the Helmholtz operator: "
                    "construction, verification, and invisible contrasts")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="execute a pipeline from a JSON config")
    p_run.add_argument("config")
    p_render = sub.add_parser("render", help="render a raster field to PGM")
    p_render.add_argument("field")
    p_render.add_argument("out")
    sub.add_parser("version", help="print the package version")
    args = parser.parse_args(argv)
    if args.command == "run":
        return run(args.config)
    if args.command == "render":
        return render(args.field, args.out)
    print(__version__)
    return 0


if __name__ == "__main__":
    sys.exit(main())
