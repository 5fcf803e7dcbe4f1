"""Invisible-contrast construction from two-phase solutions.

Given a signed compactly-supported solution u~ of the two-phase model
equation with sources inside its sign sets, and an incident field u0 with
(Laplace + k0^2) u0 = 0 that is strictly negative on both free boundaries,
the piecewise contrast

    rho_+ = -h / (u0 + u~) on D_+,   rho_- = +h / (u0 + u~) on D_-,
    h = -(k+^2 - k0^2) u~_+ + (k-^2 - k0^2) u~_- + lam_+ chi_+ - lam_- chi_-

makes the total field u = u0 + u~ solve

    (Laplace + k0^2 + rho_+ chi_+ - rho_- chi_-) u = 0

away from the (mollified) sources, with the scattered part u~ vanishing
identically outside a ball: the obstacle pair (D_+/-, rho_+/-) is invisible
to the probe u0.  Since u~ -> 0 at the free boundaries, the contrasts tend
to -lam_+/- / u0 > 0 there; a vanishing total field inside the obstacles is
a genuine obstruction and is reported as an error, never smoothed over.

The TE-mode reduction is also provided: given a 2D contrast q, the relative
permittivity profile making a cylindrical medium present exactly that
contrast solves Laplace(E^{-1/2}) + q E^{-1/2} = 0 on a disk with unit
boundary values, so E = psi^{-2} for the solution psi.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .grid import (Grid, GridError, Mask, ScalarField, boundary_collar,
                   dilate, laplacian, margin_flags)
from .linsolve import (IndefiniteOperatorError, OperatorSpec, SolverConfig,
                       cg_solve)
from .twophase import TwoPhaseResult
from .verify import ResolutionError, radial_profile, _unit_directions

_GATE_FACTOR = 4.0


class AdmissibilityError(ValueError):
    """Incident field fails the sign condition on the free boundaries."""


class TotalFieldZeroError(RuntimeError):
    """u0 + u~ vanishes inside the obstacles; the contrast would blow up."""


class PermittivityError(RuntimeError):
    """The reconstructed permittivity is not physically meaningful."""


@dataclass
class IncidentField:
    k0: float
    kind: str
    field: ScalarField
    gate_residual: float = 0.0
    params: dict = field(default_factory=dict)


@dataclass
class ScatterResult:
    rho_plus: ScalarField
    rho_minus: ScalarField
    q: ScalarField
    h_field: ScalarField
    total: ScalarField
    residual_norm: float = math.nan
    boundary_limits: dict = field(default_factory=dict)


def make_incident(grid: Grid, k0: float, spec: dict) -> IncidentField:
    """Assemble an incident field and enforce its residual gate.

    ``spec["kind"]`` selects either a Herglotz superposition of plane waves
    (``dirs`` count plus optional ``weights``, quadrature over the unit
    sphere) or a radial Bessel solution (``center``, ``scale``, ``sign``).
    """
    if k0 <= 0.0:
        raise ValueError("incident wavenumber must be positive")
    if k0 * grid.h > 0.8:
        raise ResolutionError(
            f"k0 h = {k0 * grid.h:.3g} > 0.8: the incident field is not "
            "resolved; increase the cell count")
    kind = spec.get("kind", "radial")
    coords = grid.coord_arrays()
    if kind == "herglotz":
        dirs = spec.get("dirs", 16)
        thetas = _unit_directions(grid.n, int(dirs))
        weights = spec.get("weights")
        if weights is None:
            # quadrature of unit density over the sphere of directions
            surface = 2.0 * math.pi if grid.n == 2 else 4.0 * math.pi
            weights = [surface / len(thetas)] * len(thetas)
        if len(weights) != len(thetas):
            raise ValueError("one weight per direction required")
        values = np.zeros(grid.cells)
        for w, theta in zip(weights, thetas):
            phase = k0 * sum(c * t for c, t in zip(coords, theta))
            values += float(w) * np.cos(phase)
        params = {"dirs": int(dirs)}
    elif kind == "radial":
        center = tuple(float(c) for c in spec.get("center", (0.0,) * grid.n))
        scale = float(spec.get("scale", 1.0))
        sign = float(spec.get("sign", -1.0))
        values = sign * scale * radial_profile(grid.n, k0,
                                               grid.radius_from(center))
        params = {"center": center, "scale": scale, "sign": sign}
    else:
        raise ValueError(f"unknown incident kind {kind!r}")

    interior = ~margin_flags(grid, 1)
    res = laplacian(values, grid.h) + k0 * k0 * values
    sup = float(np.max(np.abs(res[interior])))
    amp = float(np.max(np.abs(values)))
    gate = _GATE_FACTOR * grid.n / 12.0 * k0 ** 4 * grid.h ** 2 * max(amp, 1e-30)
    if sup > gate:
        raise ResolutionError(
            f"incident field fails the residual gate ({sup:.3e} > {gate:.3e}); "
            "increase the cell count")
    return IncidentField(k0=k0, kind=kind, field=ScalarField(grid, values),
                         gate_residual=sup, params=params)


def admissibility_check(u0: IncidentField, two_phase: TwoPhaseResult) -> dict:
    """u0 must be strictly negative on 1-cell collars of both free boundaries."""
    grid = u0.field.grid
    if not two_phase.u.grid.same_as(grid):
        raise GridError("incident field and two-phase result grids differ")
    amp = float(np.max(np.abs(u0.field.values)))
    delta = 1e-3 * amp
    worst = -math.inf
    for mask in (two_phase.D_plus, two_phase.D_minus):
        collar = boundary_collar(mask.flags, 1)
        if collar.any():
            worst = max(worst, float(np.max(u0.field.values[collar])))
    if worst == -math.inf:
        return {"passed": True, "vacuous": True, "max_on_boundary": None,
                "threshold": -delta}
    return {"passed": bool(worst <= -delta), "vacuous": False,
            "max_on_boundary": worst, "threshold": -delta}


def build_contrasts(two_phase: TwoPhaseResult, u0: IncidentField,
                    lam_plus: float = 1.0, lam_minus: float = 1.0,
                    k_plus: float | None = None, k_minus: float | None = None,
                    mu_plus=None, mu_minus=None) -> ScatterResult:
    """Build the piecewise contrasts making (D_+/-, rho_+/-) invisible to u0.

    Requires the admissibility check to pass and the total field u0 + u~ to
    stay away from zero on the obstacles (threshold 1e-3 sup|u0|); failing
    nodes are reported in the raised error.

    When the two-phase solution was driven by mollified sources, pass them
    as ``mu_plus`` / ``mu_minus``: their densities are bounded on the grid
    and must be absorbed into the contrast for the total-field equation to
    hold on their supports (they sit strictly inside D_+/-, so the boundary
    behavior of rho_+/- is untouched).
    """
    grid = two_phase.u.grid
    adm = admissibility_check(u0, two_phase)
    if not adm["passed"]:
        raise AdmissibilityError(
            f"incident field reaches {adm['max_on_boundary']:.3e} on a free "
            f"boundary (needs <= {adm['threshold']:.3e})")
    k0 = u0.k0
    kp = k0 if k_plus is None else float(k_plus)
    km = k0 if k_minus is None else float(k_minus)
    u = two_phase.u.values
    chi_p = two_phase.D_plus.flags
    chi_m = two_phase.D_minus.flags
    up = np.maximum(u, 0.0)
    um = np.maximum(-u, 0.0)
    h_field = (-(kp ** 2 - k0 ** 2) * up + (km ** 2 - k0 ** 2) * um
               + lam_plus * chi_p - lam_minus * chi_m)
    if mu_plus is not None:
        h_field = h_field - mu_plus.density
    if mu_minus is not None:
        h_field = h_field + mu_minus.density
    total = u0.field.values + u
    delta = 1e-3 * float(np.max(np.abs(u0.field.values)))
    obstacles = chi_p | chi_m
    bad = obstacles & (np.abs(total) < delta)
    if bad.any():
        idx = np.argwhere(bad)[:5]
        pts = [tuple(round(float(grid.axis_coords(a)[i[a]]), 4)
                     for a in range(grid.n)) for i in idx]
        raise TotalFieldZeroError(
            f"total field vanishes inside the obstacles at {int(bad.sum())} "
            f"nodes (first few: {pts}); choose a stronger or different u0")
    rho_p = np.where(chi_p, -h_field / np.where(chi_p, total, 1.0), 0.0)
    rho_m = np.where(chi_m, h_field / np.where(chi_m, total, 1.0), 0.0)
    q = np.where(obstacles, -h_field / np.where(obstacles, total, 1.0), 0.0)

    # interface nodes shared by both phases: contrast limits -lam/u0
    limits: dict = {"interface_nodes": 0}
    iface = dilate(chi_p, 1) & dilate(chi_m, 1) & ~(chi_p & chi_m)
    if iface.any():
        u0_vals = u0.field.values[iface]
        limits = {
            "interface_nodes": int(iface.sum()),
            "target_plus": float(np.mean(-lam_plus / u0_vals)),
            "target_minus": float(np.mean(-lam_minus / u0_vals)),
        }
        ring_p = chi_p & dilate(chi_m, 1)
        ring_m = chi_m & dilate(chi_p, 1)
        if ring_p.any():
            got = rho_p[ring_p]
            want = -lam_plus / u0.field.values[ring_p]
            limits["plus_rel_dev"] = float(np.max(np.abs(got - want)
                                                  / np.abs(want)))
        if ring_m.any():
            got = rho_m[ring_m]
            want = -lam_minus / u0.field.values[ring_m]
            limits["minus_rel_dev"] = float(np.max(np.abs(got - want)
                                                   / np.abs(want)))
    return ScatterResult(
        rho_plus=ScalarField(grid, rho_p),
        rho_minus=ScalarField(grid, rho_m),
        q=ScalarField(grid, q),
        h_field=ScalarField(grid, h_field * obstacles),
        total=ScalarField(grid, total),
        boundary_limits=limits,
    )


def nonscattering_residual(res: ScatterResult, u0: IncidentField,
                           two_phase: TwoPhaseResult, tol_phase: float | None = None
                           ) -> float:
    """Max-norm residual of the total-field equation, away from collars.

    Evaluates (Laplace_h + k0^2 + q) (u0 + u~) outside 2-cell collars of the
    free boundaries and off the outermost node ring (where the zero-exterior
    convention clips the incident field).  Also asserts that the scattered
    part u~ vanishes on the box margin: that is the meaning of
    "non-scattering" on a truncated domain.
    """
    grid = res.q.grid
    total = res.total.values
    residual = (laplacian(total, grid.h) + u0.k0 ** 2 * total
                + res.q.values * total)
    region = ~margin_flags(grid, 1)
    region &= ~boundary_collar(two_phase.D_plus.flags, 2)
    region &= ~boundary_collar(two_phase.D_minus.flags, 2)
    sup = float(np.max(np.abs(residual[region]))) if region.any() else 0.0
    tol = tol_phase if tol_phase is not None else two_phase.tol_phase
    margin = margin_flags(grid, 2)
    scattered_margin = float(np.max(np.abs(two_phase.u.values[margin])))
    if scattered_margin > tol:
        raise GridError(
            f"scattered field reaches {scattered_margin:.3e} at the box "
            f"margin (tol {tol:.3e}); the construction is not compactly "
            "supported on this box")
    res.residual_norm = sup
    return sup


def reconstruct_permittivity(q: ScalarField, R: float,
                             config: SolverConfig | None = None) -> tuple[ScalarField, dict]:
    """Recover the TE-mode permittivity profile from a 2D contrast.

    Solves Laplace_h psi + q psi = 0 on the disk of radius R (centered in
    the box) with psi = 1 outside, then returns E = psi^{-2} together with a
    report containing min psi and the interior self-residual.  Fails loudly
    if the operator -Laplace_h - q is not definite on the disk (wavenumber
    too close to an interior eigenvalue) or if psi loses positivity.
    """
    config = config or SolverConfig()
    grid = q.grid
    if grid.n != 2:
        raise GridError("the TE-mode reduction is two-dimensional")
    center = tuple(o + 0.5 * e for o, e in zip(grid.origin, grid.extent))
    if min(0.5 * e for e in grid.extent) < R + 2.0 * grid.h:
        raise GridError(f"box cannot hold the reconstruction disk R = {R}")
    disk = Mask(grid, grid.radius_from(center) < R)
    if not np.any(q.values[disk.flags]):
        # discrete maximum principle: harmonic with constant boundary data
        # is that constant, so psi = 1 and E = 1 exactly
        ones = ScalarField(grid, np.ones(grid.cells))
        return ones, {"psi_min": 1.0, "self_residual": 0.0,
                      "disk_cells": disk.count}
    op = OperatorSpec(grid=grid, k=0.0,
                      q=ScalarField(grid, -q.values), domain=disk)
    try:
        psi = cg_solve(op, ScalarField(grid, grid.zeros()), boundary=1.0,
                       config=config)
    except IndefiniteOperatorError as exc:
        raise IndefiniteOperatorError(
            "0 is too close to an eigenvalue of -Laplace - q on the disk; "
            "permittivity reconstruction is ill-posed here") from exc
    psi_min = float(np.min(psi.values[disk.flags]))
    if psi_min <= 0.0:
        raise PermittivityError(
            f"psi reaches {psi_min:.3e} <= 0 inside the disk; the contrast "
            "does not correspond to a real permittivity")
    eps = np.where(disk.flags, 1.0 / psi.values ** 2, 1.0)
    interior = dilate(~disk.flags, 1)
    self_res = laplacian(psi.values, grid.h) + q.values * psi.values
    sup = float(np.max(np.abs(self_res[disk.flags & ~interior])))
    report = {"psi_min": psi_min, "self_residual": sup,
              "disk_cells": disk.count}
    return ScalarField(grid, eps), report
