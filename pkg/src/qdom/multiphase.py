"""Segregated energy minimization for multi-phase quadrature domains.

Each phase i carries a wavenumber k_i, a background density lambda_i > 0 and
a nonnegative measure mu_i; its forcing is f_i = mu_i - lambda_i.  The
energy of a nonnegative field u_i is

    E_i(u_i) = int |grad u_i|^2 - k_i^2 u_i^2 - 2 f_i u_i,

and a segregated state minimizes sum_i E_i over tuples of nonnegative fields
with pairwise disjoint positivity sets.

The one-phase minimizer is the exact solution of an obstacle problem
(projected SOR).  For m phases we run Gauss-Seidel sweeps: phase i is
re-minimized on the complement of the other phases' current positivity sets,
which keeps the state segregated by construction and lowers the energy at
every sub-step; a final projection removes sub-threshold dust.  Fixed points
of this sweep satisfy the pairwise PDE checked by
:func:`local_pde_residual`; global minimality is not certified.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .grid import (Grid, GridError, GridMeasure, Mask, ScalarField,
                   boundary_collar, dilate, gradient_sq_integral, laplacian,
                   margin_flags, require_compact_support)
from .linsolve import OperatorSpec, SolverConfig, SolverError, psor_lcp

TOL_PHASE_FLOOR = 1e-8


class HypothesisError(ValueError):
    """A theorem hypothesis needed by the requested check does not hold."""


@dataclass
class PhaseSpec:
    k: float
    lam: float | ScalarField
    mu: GridMeasure
    label: str = ""

    def __post_init__(self):
        if self.k < 0.0:
            raise ValueError("phase wavenumber must be >= 0")
        lam_min = (float(np.min(self.lam.values))
                   if isinstance(self.lam, ScalarField) else float(self.lam))
        if lam_min <= 0.0:
            raise ValueError("lambda must be bounded below by a positive constant")

    def lam_values(self, grid: Grid):
        if isinstance(self.lam, ScalarField):
            if not self.lam.grid.same_as(grid):
                raise GridError("lambda field lives on a different grid")
            return self.lam.values
        return float(self.lam)

    def forcing(self, grid: Grid) -> np.ndarray:
        """f = mu - lambda as nodal values."""
        if not self.mu.grid.same_as(grid):
            raise GridError("phase measure lives on a different grid")
        return self.mu.density - self.lam_values(grid)


@dataclass
class SegregatedState:
    grid: Grid
    fields: list  # ScalarField per phase
    tol_phase: float
    converged: bool = True
    sweeps: int = 0
    energy: float = 0.0
    energy_history: list = field(default_factory=list)

    def masks(self) -> list:
        return [Mask(self.grid, f.values > self.tol_phase) for f in self.fields]


def _phase_tol(values: np.ndarray, config: SolverConfig) -> float:
    return max(TOL_PHASE_FLOOR, 10.0 * config.tol_rel * float(np.max(np.abs(values))))


def energy(fields, specs, grid: Grid) -> float:
    """sum_i ( |grad u_i|^2 - k_i^2 |u_i|^2 - 2 f_i u_i ) dx."""
    if isinstance(fields, ScalarField):
        fields = [fields]
    if isinstance(specs, PhaseSpec):
        specs = [specs]
    if len(fields) != len(specs):
        raise ValueError("one spec per field required")
    total = 0.0
    vol = grid.cell_volume
    for f, spec in zip(fields, specs):
        u = f.values
        total += gradient_sq_integral(u, grid.h)
        total -= spec.k ** 2 * vol * float(np.sum(u * u))
        total -= 2.0 * vol * float(np.sum(spec.forcing(grid) * u))
    return total


def minimize_one_phase(spec: PhaseSpec, grid: Grid,
                       config: SolverConfig | None = None,
                       domain: Mask | None = None,
                       init: ScalarField | None = None) -> ScalarField:
    """Unique minimizer of the phase energy over nonnegative fields.

    Solved as the obstacle problem u >= 0, (-Laplace_h - k^2) u >= f with
    nodewise complementarity.  Requires k below the Dirichlet guard of the
    active region (indefiniteness surfaces as a solver error).
    """
    config = config or SolverConfig()
    op = OperatorSpec(grid=grid, k=spec.k, domain=domain)
    rhs = ScalarField(grid, spec.forcing(grid))
    v = psor_lcp(op, rhs, lower=0.0, config=config, init=init)
    if np.any(v.values > 0.0):
        require_compact_support(v.values, grid, _phase_tol(v.values, config),
                                what=f"one-phase minimizer {spec.label or ''}")
    return v


def minimize_segregated(specs, grid: Grid, config: SolverConfig | None = None,
                        max_sweeps: int = 200) -> SegregatedState:
    """Gauss-Seidel fixed point of the segregated minimization.

    Starts from the one-phase minimizers (which contain the supports of any
    segregated minimizer when all k_i agree), then cyclically re-minimizes
    each phase on the complement of the others.  Energy is checked to be
    non-increasing after every sweep.  m = 2 delegates to the scalar
    two-phase route and splits the signed minimizer.
    """
    config = config or SolverConfig()
    specs = list(specs)
    m = len(specs)
    if m == 0:
        raise ValueError("need at least one phase")
    if m == 1:
        v = minimize_one_phase(specs[0], grid, config)
        tol = _phase_tol(v.values, config)
        e = energy([v], specs, grid)
        return SegregatedState(grid, [v], tol, True, 0, e, [e])
    if m == 2:
        from .twophase import minimize_scalar_two_phase
        f1 = ScalarField(grid, specs[0].forcing(grid))
        f2 = ScalarField(grid, specs[1].forcing(grid))
        res = minimize_scalar_two_phase(specs[0].k, specs[1].k, f1, f2,
                                        config=config, max_sweeps=max_sweeps)
        up = ScalarField(grid, np.maximum(res.u.values, 0.0))
        um = ScalarField(grid, np.maximum(-res.u.values, 0.0))
        e = energy([up, um], specs, grid)
        return SegregatedState(grid, [up, um], res.tol_phase,
                               res.diagnostics.get("converged", True),
                               res.diagnostics.get("sweeps", 0), e, [e])

    fields = [minimize_one_phase(s, grid, config) for s in specs]
    tol = max(_phase_tol(f.values, config) for f in fields)
    _project_largest(fields, tol)
    e_prev = energy(fields, specs, grid)
    history = [e_prev]
    converged = False
    sweeps = 0
    for sweeps in range(1, max_sweeps + 1):
        changed = False
        for i, spec in enumerate(specs):
            others = np.zeros(grid.cells, dtype=bool)
            for j, f in enumerate(fields):
                if j != i:
                    others |= f.values > tol
            allowed = Mask(grid, ~others)
            old_mask = fields[i].values > tol
            fields[i] = minimize_one_phase(spec, grid, config, domain=allowed,
                                           init=fields[i])
            if np.any((fields[i].values > tol) != old_mask):
                changed = True
        _project_largest(fields, tol)
        e_now = energy(fields, specs, grid)
        history.append(e_now)
        if e_now > e_prev + 1e-10 * (1.0 + abs(e_prev)):
            raise SolverError(
                f"energy increased across sweep {sweeps}: {e_prev} -> {e_now}")
        stalled = abs(e_now - e_prev) <= 1e-10 * (1.0 + abs(e_now))
        e_prev = e_now
        if not changed and stalled:
            converged = True
            break
    return SegregatedState(grid, fields, tol, converged, sweeps, e_prev, history)


def _project_largest(fields, tol: float) -> None:
    """Keep only the largest phase at each node (ties: lowest index wins)."""
    stack = np.stack([f.values for f in fields])
    winner = np.argmax(stack, axis=0)  # first max wins ties
    anyone = np.max(stack, axis=0) > tol
    for i, f in enumerate(fields):
        f.values[~((winner == i) & anyone) & (f.values > 0.0)] = 0.0


def local_pde_residual(state: SegregatedState, i: int, j: int, specs
                       ) -> tuple[ScalarField, float]:
    """Residual of the pairwise equation for phases i, j.

    Delta(u_i - u_j) + k_i^2 u_i - k_j^2 u_j + f_i chi_i - f_j chi_j,
    evaluated away from the other phases, the box margin, and a 2-cell
    collar of the two free boundaries (where the first-order mask error
    dominates).  Returns the residual field and its max-norm over that
    region.
    """
    grid = state.grid
    if i == j:
        return ScalarField(grid, grid.zeros()), 0.0
    ui, uj = state.fields[i].values, state.fields[j].values
    chi_i = ui > state.tol_phase
    chi_j = uj > state.tol_phase
    fi = specs[i].forcing(grid)
    fj = specs[j].forcing(grid)
    res = (laplacian(ui - uj, grid.h) + specs[i].k ** 2 * ui
           - specs[j].k ** 2 * uj + fi * chi_i - fj * chi_j)
    region = ~margin_flags(grid, 2)
    for ell, f in enumerate(state.fields):
        if ell not in (i, j):
            region &= ~dilate(f.values > state.tol_phase, 2)
    region &= ~boundary_collar(chi_i, 2)
    region &= ~boundary_collar(chi_j, 2)
    sup = float(np.max(np.abs(res[region]))) if region.any() else 0.0
    return ScalarField(grid, np.where(region, res, 0.0)), sup


def support_checks(state: SegregatedState, specs, open_sets=None,
                   config: SolverConfig | None = None) -> dict:
    """Support comparisons against the unconstrained one-phase minimizers.

    (a) every phase support must sit inside the positivity set of its
    one-phase minimizer v_i (up to a 1-cell collar);
    (b) for user-supplied open sets where the phase density exceeds lambda,
    the set must be covered by the phase support (again up to a collar).
    All phases must share one wavenumber; this comparison is meaningless
    otherwise and is refused.
    """
    config = config or SolverConfig()
    grid = state.grid
    ks = {s.k for s in specs}
    if len(ks) != 1:
        raise HypothesisError("support comparison requires equal wavenumbers "
                              f"(got {sorted(ks)})")
    report = {"phases": []}
    for i, spec in enumerate(specs):
        v = minimize_one_phase(spec, grid, config)
        v_pos = dilate(v.values > state.tol_phase, 1)
        u_mask = state.fields[i].values > state.tol_phase
        violations_a = int(np.sum(u_mask & ~v_pos))
        entry = {"label": spec.label or str(i),
                 "support_outside_one_phase_cells": violations_a}
        if open_sets is not None and open_sets[i] is not None:
            u_set = open_sets[i].flags
            lam = spec.lam_values(grid)
            lam_max = float(np.max(lam * np.ones(grid.cells))) if np.ndim(lam) else float(lam)
            mu_min = float(np.min(spec.mu.density[u_set])) if u_set.any() else 0.0
            if mu_min <= lam_max:
                entry["density_window"] = "hypothesis unmet"
            else:
                covered = dilate(u_mask, 1)
                entry["density_window"] = "checked"
                entry["window_outside_support_cells"] = int(np.sum(u_set & ~covered))
        report["phases"].append(entry)
    report["passed"] = all(p["support_outside_one_phase_cells"] == 0 and
                           p.get("window_outside_support_cells", 0) == 0
                           for p in report["phases"])
    return report
