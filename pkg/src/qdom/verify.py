"""Quadrature-identity verification against exact Helmholtz solutions.

A k-quadrature domain D with measure mu satisfies

    int_D w dx = <mu, w>    for every w in L^1(D) with (Laplace + k^2) w = 0,

and its two-phase analog subtracts the minus-phase contributions.  This
module builds families of exact solutions (plane waves and radial Bessel
profiles), gates each member on its interior discrete-Helmholtz residual,
and evaluates the normalized quadrature residual for computed or closed-form
domains.

It also houses the closed-form null quadrature balls (domains satisfying the
identity with mu = 0): the radial profile

    u_m(x) = [phi(R_m) - phi(|x|)] / (k^2 phi(R_m)),   phi(r) = r^{(2-n)/2} J_{(n-2)/2}(k r),

supported on the ball of radius R_m = j_{n/2,m} / k, solves
(Laplace + k^2) u = chi_D with u and its gradient vanishing on the sphere.
On such solutions three integral identities pin the energy,

    |grad u|^2 = (n / 2k^2) |D|,   k^2 |u|^2 = ((n+2) / 2k^2) |D|,
    int u = |D| / k^2,

and the signed functional restricted to the ray {t u} is the exact parabola
(-t^2 + 2t) |D| / k^2 with its maximum at t = 1: the solution is a saddle,
never an extremum.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import specfun
from .grid import (Grid, GridError, GridMeasure, Mask, ScalarField,
                   boundary_collar, dilate, gradient_sq_integral, laplacian,
                   margin_flags)
from .multiphase import HypothesisError
from .twophase import scalar_energy

#: safety factor on the fourth-order truncation bound n k^4 h^2 / 12
_GATE_FACTOR = 4.0


class ResolutionError(RuntimeError):
    """Grid too coarse for the requested exact-solution family."""


@dataclass
class TestMember:
    name: str
    evaluate: object  # callable: tuple of coordinate arrays -> values
    field: ScalarField
    interior_residual: float = 0.0


@dataclass
class TestFamily:
    k: float
    grid: Grid
    members: list
    gate: float


@dataclass
class QuadratureReport:
    members: list  # per-member dicts
    max_residual: float
    norm_scale: float


def _unit_directions(n: int, count: int) -> np.ndarray:
    if n == 2:
        ang = 2.0 * math.pi * np.arange(count) / count
        return np.column_stack([np.cos(ang), np.sin(ang)])
    # deterministic golden-spiral points on S^2
    i = np.arange(count) + 0.5
    z = 1.0 - 2.0 * i / count
    phi = 2.0 * math.pi * i * (1.0 - 1.0 / ((1.0 + math.sqrt(5.0)) / 2.0))
    rho = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    return np.column_stack([rho * np.cos(phi), rho * np.sin(phi), z])


def radial_profile(n: int, k: float, r: np.ndarray) -> np.ndarray:
    """Radial Helmholtz solution |x|^{1-n/2} J_{n/2-1}(k |x|), normalized.

    Returns J_0(k r) in 2D and the spherical sinc sin(k r)/(k r) in 3D; both
    equal 1 at the center.
    """
    r = np.asarray(r, dtype=float)
    scalar = r.ndim == 0
    r = np.atleast_1d(r)
    if n == 2:
        out = specfun.j0_array(k * r)
    else:
        kr = k * r
        out = np.ones_like(kr)
        small = np.abs(kr) < 1e-6
        out[~small] = np.sin(kr[~small]) / kr[~small]
        out[small] = 1.0 - kr[small] ** 2 / 6.0
    return float(out[0]) if scalar else out


def helmholtz_test_family(grid: Grid, k: float, n_dirs: int = 4,
                          centers=()) -> TestFamily:
    """Plane waves (real and imaginary parts) plus radial members.

    Every member is validated: its interior discrete Helmholtz residual must
    stay below the fourth-order truncation gate, otherwise the grid is too
    coarse for this k and a :class:`ResolutionError` is raised.
    """
    if k <= 0.0:
        raise ValueError("test family requires k > 0")
    if k * grid.h > 0.8:
        raise ResolutionError(
            f"k h = {k * grid.h:.3g} > 0.8: fewer than ~8 nodes per "
            "wavelength, the truncation gate is meaningless; refine the grid")
    coords = grid.coord_arrays()
    members = []
    for j, theta in enumerate(_unit_directions(grid.n, n_dirs)):
        phase = sum(c * t for c, t in zip(coords, theta)) * k

        def ev_cos(pts, _t=theta):
            return np.cos(k * sum(p * ti for p, ti in zip(pts, _t)))

        def ev_sin(pts, _t=theta):
            return np.sin(k * sum(p * ti for p, ti in zip(pts, _t)))

        members.append(TestMember(f"plane_cos_{j}", ev_cos,
                                  ScalarField(grid, np.cos(phase))))
        members.append(TestMember(f"plane_sin_{j}", ev_sin,
                                  ScalarField(grid, np.sin(phase))))
    for j, center in enumerate(centers):
        center = tuple(float(c) for c in center)

        def ev_rad(pts, _c=center):
            r = np.sqrt(sum((p - ci) ** 2 for p, ci in zip(pts, _c)))
            return radial_profile(grid.n, k, r)

        members.append(TestMember(
            f"radial_{j}", ev_rad,
            ScalarField(grid, radial_profile(grid.n, k, grid.radius_from(center)))))

    gate = _GATE_FACTOR * grid.n / 12.0 * k ** 4 * grid.h ** 2
    interior = ~margin_flags(grid, 1)
    fam = TestFamily(k=k, grid=grid, members=members, gate=gate)
    for mem in members:
        res = laplacian(mem.field.values, grid.h) + k * k * mem.field.values
        sup = float(np.max(np.abs(res[interior])))
        amp = float(np.max(np.abs(mem.field.values)))
        mem.interior_residual = sup
        if sup > gate * max(amp, 1e-30):
            raise ResolutionError(
                f"family member {mem.name} fails the residual gate: "
                f"{sup:.3e} > {gate * amp:.3e}; refine the grid")
    return fam


def _as_pair(obj):
    if isinstance(obj, (tuple, list)):
        return obj[0], obj[1]
    return obj, None


def quadrature_residual(D_signed, mu_signed, k: float, family: TestFamily
                        ) -> QuadratureReport:
    """Normalized residuals of the (two-phase) quadrature identity.

    Per member: ( int_{D+} w - int_{D-} w - <mu+ - mu-, w> ) normalized by
    sup |w| over the verification ball times |D+ u D-|.  The measure pairing
    uses the atoms analytically when available (exact pairing), otherwise
    the mollified density; both values are reported.
    """
    d_plus, d_minus = _as_pair(D_signed)
    mu_plus, mu_minus = _as_pair(mu_signed)
    grid = family.grid
    if not d_plus.grid.same_as(grid):
        raise GridError("masks and family live on different grids")
    union = d_plus.flags | (d_minus.flags if d_minus is not None else False)
    vol = float(np.sum(union)) * grid.cell_volume
    if vol == 0.0:
        raise GridError("empty domain in quadrature check")
    # verification ball: smallest ball containing the masks, +10% margin
    coords = grid.coord_arrays()
    pts = np.argwhere(union)
    lo = [grid.axis_coords(a)[pts[:, a].min()] for a in range(grid.n)]
    hi = [grid.axis_coords(a)[pts[:, a].max()] for a in range(grid.n)]
    center = [(l + h) / 2.0 for l, h in zip(lo, hi)]
    radius = 1.1 * 0.5 * math.dist(lo, hi)
    ball = grid.radius_from(center) <= radius

    reports = []
    worst = 0.0
    for mem in family.members:
        w = mem.field.values
        lhs = grid.cell_volume * float(np.sum(w[d_plus.flags]))
        if d_minus is not None:
            lhs -= grid.cell_volume * float(np.sum(w[d_minus.flags]))
        pair_density = 0.0
        pair_atoms = 0.0
        has_atoms = True
        for sgn, mu in ((1.0, mu_plus), (-1.0, mu_minus)):
            if mu is None:
                continue
            pair_density += sgn * grid.cell_volume * float(np.sum(mu.density * w))
            if mu.atoms:
                for point, mass in mu.atoms:
                    pair_atoms += sgn * mass * float(mem.evaluate(point))
            elif np.any(mu.density):
                has_atoms = False
        pairing = pair_atoms if has_atoms else pair_density
        sup = float(np.max(np.abs(w[ball]))) if ball.any() else 1.0
        raw = lhs - pairing
        normalized = abs(raw) / max(sup * vol, 1e-300)
        worst = max(worst, normalized)
        reports.append({
            "member": mem.name,
            "residual": normalized,
            "raw": raw,
            "domain_integral": lhs,
            "pairing_atoms": pair_atoms,
            "pairing_density": pair_density,
            "sup_norm": sup,
        })
    return QuadratureReport(members=reports, max_residual=worst,
                            norm_scale=vol)


# ---------------------------------------------------------------------------
# Null quadrature balls and the energy identities
# ---------------------------------------------------------------------------

def null_qd_radius(n: int, k: float, m: int) -> float:
    return specfun.bessel_zero(0.5 * n, m) / k


def null_qd_profile(grid: Grid, k: float, m: int, center=None
                    ) -> tuple[ScalarField, Mask]:
    """Closed-form profile making B_{R_m} a null k-quadrature domain."""
    if k <= 0.0 or m < 1:
        raise ValueError("need k > 0 and m >= 1")
    n = grid.n
    R = null_qd_radius(n, k, m)
    if center is None:
        center = tuple(o + 0.5 * e for o, e in zip(grid.origin, grid.extent))
    for a in range(n):
        lo = center[a] - grid.origin[a]
        hi = grid.origin[a] + grid.extent[a] - center[a]
        if min(lo, hi) < R + 4.0 * grid.h:
            raise GridError(
                f"box cannot hold the null ball of radius {R:.4g} with margin")
    r = grid.radius_from(center)
    phi = _phi_radial(n, k, r)
    A = _phi_radial(n, k, np.array([R]))[0]
    values = np.where(r < R, (A - phi) / (k * k * A), 0.0)
    return ScalarField(grid, values), Mask(grid, r < R)


def _phi_radial(n: int, k: float, r: np.ndarray) -> np.ndarray:
    """phi(r) = r^{(2-n)/2} J_{(n-2)/2}(k r); finite at the origin."""
    if n == 2:
        return specfun.j0_array(k * r)
    # r^{-1/2} J_{1/2}(kr) = sqrt(2/(pi k)) sin(kr)/r
    out = np.empty_like(r)
    small = r < 1e-12
    out[~small] = math.sqrt(2.0 / (math.pi * k)) * np.sin(k * r[~small]) / r[~small]
    out[small] = math.sqrt(2.0 / (math.pi * k)) * k
    return out


def pompeiu_identities(u: ScalarField, D: Mask, k: float,
                       rel_tol: float = 0.02) -> dict:
    """Check the three energy identities of a solution supported on D.

    Requires u to vanish with small gradient on the boundary of D (validated
    on the first node ring outside D); on anything else the identities are
    meaningless and a :class:`HypothesisError` is raised.
    """
    grid = u.grid
    if not D.grid.same_as(grid):
        raise GridError("mask lives on a different grid")
    n = grid.n
    ring = dilate(D.flags, 1) & ~D.flags
    amp = float(np.max(np.abs(u.values)))
    bv_tol = 25.0 * grid.h ** 2 * max(1.0, k * k * amp)
    ring_max = float(np.max(np.abs(u.values[ring]))) if ring.any() else 0.0
    outer = ~dilate(D.flags, 1)
    outer_max = float(np.max(np.abs(u.values[outer]))) if outer.any() else 0.0
    if ring_max > bv_tol or outer_max > bv_tol:
        raise HypothesisError(
            f"field does not vanish on the domain boundary "
            f"(ring max {ring_max:.3e}, outside max {outer_max:.3e}, "
            f"gate {bv_tol:.3e})")
    vol = D.volume()
    grad_sq = gradient_sq_integral(u.values, grid.h)
    l2 = grid.cell_volume * float(np.sum(u.values ** 2))
    total = grid.cell_volume * float(np.sum(u.values))
    targets = {
        "gradient_energy": (grad_sq, n / (2.0 * k * k) * vol),
        "l2_energy": (k * k * l2, (n + 2.0) / (2.0 * k * k) * vol),
        "integral": (total, vol / (k * k)),
    }
    out = {"volume": vol, "boundary_ring_max": ring_max}
    ok = True
    for name, (got, want) in targets.items():
        rel = abs(got - want) / abs(want)
        out[name] = {"value": got, "target": want, "rel_error": rel}
        ok &= rel <= rel_tol
    out["passed"] = bool(ok)
    return out


def saddle_scan(u: ScalarField, D: Mask, k: float, t_values) -> dict:
    """Scan the signed functional along the ray {t u}.

    For a solution profile the discrete values must trace the parabola
    (-t^2 + 2t) |D| / k^2, with the maximum over the ray at t = 1 (the
    profile is a critical point but never a local extremum).
    """
    grid = u.grid
    t_values = [float(t) for t in t_values]
    vol = D.volume()
    grad_sq = gradient_sq_integral(u.values, grid.h)
    l2 = grid.cell_volume * float(np.sum(u.values ** 2))
    total = grid.cell_volume * float(np.sum(u.values))
    scan = []
    worst = 0.0
    for t in t_values:
        value = t * t * (grad_sq - k * k * l2) + 2.0 * t * total
        target = (-t * t + 2.0 * t) * vol / (k * k)
        dev = abs(value - target) / max(vol / (k * k), 1e-300)
        worst = max(worst, dev)
        scan.append({"t": t, "value": value, "target": target, "deviation": dev})
    values = [s["value"] for s in scan]
    argmax_t = t_values[int(np.argmax(values))]
    t_nearest_one = min(t_values, key=lambda t: abs(t - 1.0))
    return {
        "scan": scan,
        "max_deviation": worst,
        "argmax_t": argmax_t,
        "max_value": max(values),
        "argmax_at_one": bool(argmax_t == t_nearest_one),
    }


def saddle_direction_scan(u: ScalarField, phi: ScalarField, k: float,
                          t_values) -> dict:
    """Scan the signed functional along u + t phi for an eigen-direction phi.

    When phi is a Dirichlet eigenfield with eigenvalue above k^2 the
    increment g(t) - g(0) is a convex parabola in t, hence nonnegative on at
    least one side of t = 0; the report states which.
    """
    grid = u.grid
    f1 = -np.ones(grid.cells)
    f2 = np.ones(grid.cells)
    g0 = scalar_energy(u.values, grid, k, k, f1, f2)
    rows = []
    for t in t_values:
        g = scalar_energy(u.values + float(t) * phi.values, grid, k, k, f1, f2)
        rows.append({"t": float(t), "increment": g - g0})
    pos_ok = all(r["increment"] >= -1e-9 * (1.0 + abs(g0))
                 for r in rows if r["t"] >= 0.0)
    neg_ok = all(r["increment"] >= -1e-9 * (1.0 + abs(g0))
                 for r in rows if r["t"] <= 0.0)
    return {"base": g0, "rows": rows, "one_sided_nonnegative": bool(pos_ok or neg_ok),
            "nonnegative_side": "t>=0" if pos_ok else ("t<=0" if neg_ok else "none")}
