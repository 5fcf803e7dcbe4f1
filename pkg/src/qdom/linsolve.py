"""Matrix-free solvers for the discrete operator A = -Laplace_h - k^2 + q.

Three entry points:

* :func:`cg_solve` -- conjugate gradients on the active node set of a mask,
  complement nodes pinned to supplied boundary values.
* :func:`psor_lcp` -- projected SOR for the linear complementarity problem
  ``W >= lower, A W - rhs >= 0, (W - lower) . (A W - rhs) = 0`` (obstacle
  problems).  Sweeps are red-black by default; a lexicographic sweep is kept
  for cross-checking since the LCP solution is unique for definite A.
* :func:`min_eigenvalue` -- smallest Dirichlet eigenvalue of -Laplace_h on a
  mask by inverse power iteration, used as the k_* guard: every solve in
  this package assumes k below the first Dirichlet wavenumber.

A is positive definite on the active set exactly when k^2 (plus positive
parts of q) stays below the first Dirichlet eigenvalue; CG detects failure
of this through a nonpositive curvature p.Ap and reports it as
:class:`IndefiniteOperatorError` instead of returning garbage.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .grid import (Grid, GridError, Mask, ScalarField, laplacian,
                   neighbor_sum)


class SolverError(RuntimeError):
    """Iteration failed to converge."""


class IndefiniteOperatorError(SolverError):
    """Operator not positive definite on the active set (k too large?)."""


@dataclass
class SolverConfig:
    tol_rel: float = 1e-9
    max_iter: int | None = None  # default 200 * max(cells)
    relaxation: float = 1.7
    sweep: str = "redblack"  # or "lex"

    def __post_init__(self):
        if not (self.tol_rel > 0.0):
            raise ValueError("tol_rel must be positive")
        if not (0.0 < self.relaxation < 2.0):
            raise ValueError("relaxation must lie in (0, 2)")
        if self.sweep not in ("redblack", "lex"):
            raise ValueError(f"unknown sweep order {self.sweep!r}")

    def iters(self, grid: Grid) -> int:
        return self.max_iter if self.max_iter is not None else 200 * max(grid.cells)


@dataclass
class OperatorSpec:
    """A = -Laplace_h - k^2 + q restricted to the active nodes of ``domain``."""

    grid: Grid
    k: float = 0.0
    q: ScalarField | None = None
    domain: Mask | None = None

    def __post_init__(self):
        if self.k < 0.0:
            raise ValueError("k must be >= 0")
        # M-matrix guard: keeps the diagonal positive and the discrete
        # comparison principle valid on every sub-mask.
        if self.k ** 2 * self.grid.h ** 2 >= 2.0 * self.grid.n:
            raise ValueError(
                f"k^2 h^2 = {self.k**2 * self.grid.h**2:.3g} >= 2n; "
                "refine the grid or lower k")
        if self.q is not None and not self.q.grid.same_as(self.grid):
            raise GridError("coefficient q lives on a different grid")
        if self.domain is not None and not self.domain.grid.same_as(self.grid):
            raise GridError("domain mask lives on a different grid")

    @property
    def active(self) -> np.ndarray:
        if self.domain is None:
            return np.ones(self.grid.cells, dtype=bool)
        return self.domain.flags

    def qvalues(self) -> np.ndarray | float:
        return self.q.values if self.q is not None else 0.0

    def apply(self, values: np.ndarray) -> np.ndarray:
        out = -laplacian(values, self.grid.h) - (self.k ** 2) * values
        if self.q is not None:
            out = out + self.q.values * values
        return out

    def diagonal(self) -> np.ndarray:
        d = 2.0 * self.grid.n / self.grid.h ** 2 - self.k ** 2
        return d + self.qvalues() if self.q is not None else np.full(self.grid.cells, d)


def _as_full(boundary, grid: Grid) -> np.ndarray:
    if boundary is None:
        return grid.zeros()
    if isinstance(boundary, ScalarField):
        if not boundary.grid.same_as(grid):
            raise GridError("boundary field lives on a different grid")
        return boundary.values.astype(float)
    return np.full(grid.cells, float(boundary))


def cg_solve(op: OperatorSpec, rhs: ScalarField, boundary=None,
             config: SolverConfig | None = None,
             init: ScalarField | None = None) -> ScalarField:
    """Solve A x = rhs on the active set, x = boundary on the complement."""
    config = config or SolverConfig()
    if not rhs.grid.same_as(op.grid):
        raise GridError("rhs lives on a different grid")
    active = op.active
    ext = _as_full(boundary, op.grid)
    ext[active] = 0.0
    # lift the pinned values into the right-hand side
    b = np.where(active, rhs.values - op.apply(ext), 0.0)
    x = np.zeros_like(b)
    if init is not None:
        x = np.where(active, init.values - ext, 0.0)
    ax = op.apply(x)
    ax[~active] = 0.0
    r = b - ax
    p = r.copy()
    rr = float(np.sum(r * r))
    bnorm = math.sqrt(float(np.sum(b * b)))
    if bnorm == 0.0:
        return ScalarField(op.grid, ext)
    tol2 = (config.tol_rel * bnorm) ** 2
    for _ in range(config.iters(op.grid)):
        if rr <= tol2:
            break
        ap = op.apply(p)
        ap[~active] = 0.0
        pap = float(np.sum(p * ap))
        if pap <= 0.0:
            raise IndefiniteOperatorError(
                "nonpositive curvature in CG: operator is not positive definite "
                "on this mask; check k against min_eigenvalue")
        alpha = rr / pap
        x += alpha * p
        r -= alpha * ap
        rr_new = float(np.sum(r * r))
        p = r + (rr_new / rr) * p
        rr = rr_new
    else:
        raise SolverError(
            f"CG did not reach tol in {config.iters(op.grid)} iterations; "
            "operator may be nearly indefinite (check k against min_eigenvalue)")
    x[~active] = 0.0
    return ScalarField(op.grid, x + ext)


def _color_masks(grid: Grid, active: np.ndarray):
    idx = np.indices(grid.cells).sum(axis=0)
    even = (idx % 2 == 0)
    return active & even, active & ~even


def psor_lcp(op: OperatorSpec, rhs: ScalarField, lower=0.0, boundary=None,
             config: SolverConfig | None = None, init: ScalarField | None = None
             ) -> ScalarField:
    """Projected SOR for ``W >= lower, A W >= rhs`` with complementarity.

    ``lower`` may be a scalar or a field (use a large negative surrogate for
    an unconstrained solve).  Complement nodes are pinned to ``boundary``.
    """
    config = config or SolverConfig()
    if not rhs.grid.same_as(op.grid):
        raise GridError("rhs lives on a different grid")
    grid = op.grid
    active = op.active
    low = _as_full(lower, grid)
    ext = _as_full(boundary, grid)
    w = ext.copy()
    if init is not None:
        w[active] = np.maximum(init.values[active], low[active])
    else:
        w[active] = np.maximum(0.0, low[active])
    diag = op.diagonal()
    h2 = grid.h ** 2
    b = rhs.values
    omega = config.relaxation
    scale = max(float(np.max(np.abs(b[active]))) if np.any(active) else 0.0, 1e-30)
    tol = config.tol_rel * scale
    max_sweeps = config.iters(grid)

    if config.sweep == "lex":
        _psor_lex(w, b, low, active, diag, h2, op, omega, tol, max_sweeps)
    else:
        red, black = _color_masks(grid, active)
        converged = False
        for sweep in range(max_sweeps):
            for color in (red, black):
                gs = (b + neighbor_sum(w) / h2) / diag
                w[color] = np.maximum(low[color],
                                      (1.0 - omega) * w[color] + omega * gs[color])
            if sweep % 8 == 7 or sweep == max_sweeps - 1:
                if _lcp_residual(op, w, b, low, active) <= tol:
                    converged = True
                    break
        if not converged:
            raise SolverError(
                f"PSOR did not converge in {max_sweeps} sweeps "
                f"(complementarity residual > {tol:.3e})")
    return ScalarField(grid, w)


def _lcp_residual(op: OperatorSpec, w, b, low, active) -> float:
    r = op.apply(w) - b
    comp = np.minimum(w - low, r)
    comp[~active] = 0.0
    return float(np.max(np.abs(comp)))


def _psor_lex(w, b, low, active, diag, h2, op, omega, tol, max_sweeps):
    """Deterministic lexicographic sweeps (reference path; small grids)."""
    grid = op.grid
    idxs = np.argwhere(active)
    inv_h2 = 1.0 / h2
    shape = grid.cells
    for sweep in range(max_sweeps):
        for idx in idxs:
            s = 0.0
            for axis in range(grid.n):
                for step in (-1, 1):
                    j = idx.copy()
                    j[axis] += step
                    if 0 <= j[axis] < shape[axis]:
                        s += w[tuple(j)]
            t = tuple(idx)
            gs = (b[t] + s * inv_h2) / diag[t]
            w[t] = max(low[t], (1.0 - omega) * w[t] + omega * gs)
        if _lcp_residual(op, w, b, low, active) <= tol:
            return
    raise SolverError(f"PSOR (lex) did not converge in {max_sweeps} sweeps")


def min_eigenvalue(domain: Mask, config: SolverConfig | None = None
                   ) -> tuple[float, ScalarField]:
    """Smallest eigenvalue of -Laplace_h on the mask and its eigenfield.

    Inverse power iteration, each step a CG solve.  Returns (lambda_1, phi)
    with phi normalized positive, max |phi| = 1.  The guard wavenumber is
    k_* = sqrt(lambda_1).
    """
    config = config or SolverConfig()
    grid = domain.grid
    if domain.count == 0:
        raise GridError("cannot compute an eigenvalue on an empty mask")
    op = OperatorSpec(grid=grid, k=0.0, domain=domain)
    inner = SolverConfig(tol_rel=1e-8, max_iter=config.max_iter,
                         relaxation=config.relaxation)
    x = np.where(domain.flags, 1.0, 0.0)
    x /= math.sqrt(float(np.sum(x * x)))
    lam = None
    guess = None
    for _ in range(200):
        y = cg_solve(op, ScalarField(grid, x), config=inner, init=guess).values
        yx = float(np.sum(y * x))
        yy = float(np.sum(y * y))
        lam_new = yx / yy  # Rayleigh quotient of y since A y = x
        x = y / math.sqrt(yy)
        guess = ScalarField(grid, x / lam_new)  # warm start: A x ~ lam x
        if lam is not None and abs(lam_new - lam) <= 1e-7 * abs(lam_new):
            lam = lam_new
            break
        lam = lam_new
    else:
        raise SolverError("inverse power iteration did not settle in 200 steps")
    if float(np.sum(x)) < 0.0:
        x = -x
    x /= float(np.max(np.abs(x)))
    x[~domain.flags] = 0.0
    return float(lam), ScalarField(grid, x)


def kstar(domain: Mask, config: SolverConfig | None = None) -> float:
    lam, _ = min_eigenvalue(domain, config)
    return math.sqrt(lam)


def box_kstar(grid: Grid) -> float:
    """k_* of the full computational box, in closed form.

    With the zero exterior convention each axis is a Dirichlet chain whose
    smallest eigenvalue is (4/h^2) sin^2(pi / (2 (N+1))).
    """
    lam = sum(4.0 / grid.h ** 2 * math.sin(math.pi / (2.0 * (nc + 1))) ** 2
              for nc in grid.cells)
    return math.sqrt(lam)
