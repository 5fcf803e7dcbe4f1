"""Uniform rectangular grids, scalar fields, masks, and grid measures.

Conventions used throughout the package:

* Nodes are cell centers: coordinate ``origin + (index + 1/2) * h`` per axis,
  so a field array has shape ``cells``.  Spacing ``h`` is identical on every
  axis (the Helmholtz stencil stays isotropic).
* The computational box stands in for all of R^n.  Fields are extended by
  zero outside the box ("zero exterior convention"); any object that is
  supposed to be compactly supported must vanish within a 2-cell margin,
  otherwise the run aborts with a :class:`BoxTooSmallError`.
* Integration is the composite midpoint sum ``h^n * sum(values)``, summed
  with numpy's pairwise reduction so results are bitwise reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

MIN_CELLS = 16
_SPACING_RTOL = 1e-9


class GridError(ValueError):
    """Mismatched or invalid grid data."""


class ConfigError(GridError):
    """Invalid grid construction request (non-uniform spacing, too coarse)."""


class PlacementError(GridError):
    """A measure atom sits too close to the box boundary."""


class BoxTooSmallError(RuntimeError):
    """A compactly-supported field reaches the 2-cell box margin."""


@dataclass
class Grid:
    n: int
    origin: tuple
    extent: tuple
    cells: tuple
    h: float

    def axis_coords(self, axis: int) -> np.ndarray:
        return self.origin[axis] + (np.arange(self.cells[axis]) + 0.5) * self.h

    def coord_arrays(self):
        """Broadcastable coordinate arrays, one per axis."""
        return np.meshgrid(*[self.axis_coords(a) for a in range(self.n)],
                           indexing="ij", sparse=True)

    def radius_from(self, point) -> np.ndarray:
        coords = self.coord_arrays()
        r2 = sum((c - p) ** 2 for c, p in zip(coords, point))
        return np.sqrt(r2)

    def zeros(self) -> np.ndarray:
        return np.zeros(self.cells)

    @property
    def cell_volume(self) -> float:
        return self.h ** self.n

    def same_as(self, other: "Grid") -> bool:
        return (self.n == other.n and self.cells == other.cells
                and np.allclose(self.origin, other.origin)
                and abs(self.h - other.h) <= _SPACING_RTOL * self.h)


@dataclass
class ScalarField:
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != tuple(self.grid.cells):
            raise GridError(
                f"field shape {self.values.shape} != grid cells {self.grid.cells}")

    def copy(self) -> "ScalarField":
        return ScalarField(self.grid, self.values.copy())


@dataclass
class Mask:
    grid: Grid
    flags: np.ndarray

    def __post_init__(self):
        self.flags = np.asarray(self.flags, dtype=bool)
        if self.flags.shape != tuple(self.grid.cells):
            raise GridError(
                f"mask shape {self.flags.shape} != grid cells {self.grid.cells}")

    @property
    def count(self) -> int:
        return int(np.sum(self.flags))

    def volume(self) -> float:
        return self.count * self.grid.cell_volume


@dataclass
class GridMeasure:
    grid: Grid
    density: np.ndarray
    atoms: list = field(default_factory=list)
    total_mass: float = 0.0

    def __post_init__(self):
        self.density = np.asarray(self.density, dtype=float)
        if self.density.shape != tuple(self.grid.cells):
            raise GridError("measure density shape does not match grid")
        if np.any(self.density < 0.0):
            raise GridError("measure density must be nonnegative")
        self.total_mass = float(self.grid.cell_volume * np.sum(self.density))


def make_grid(n: int, origin, extent, cells) -> Grid:
    """Build a uniform grid over the box ``[origin, origin + extent]``.

    Spacing must come out identical on every axis and each axis needs at
    least 16 cells; otherwise a :class:`ConfigError` is raised.
    """
    n = int(n)
    if n not in (2, 3):
        raise ConfigError(f"dimension must be 2 or 3, got {n}")
    origin = tuple(float(v) for v in origin)
    extent = tuple(float(v) for v in extent)
    cells = tuple(int(c) for c in cells)
    if not (len(origin) == len(extent) == len(cells) == n):
        raise ConfigError("origin, extent and cells must all have length n")
    if any(c < MIN_CELLS for c in cells):
        raise ConfigError(f"grid too coarse: need >= {MIN_CELLS} cells per axis")
    if any(e <= 0 for e in extent):
        raise ConfigError("extent must be positive")
    spacings = [e / c for e, c in zip(extent, cells)]
    h = spacings[0]
    if any(abs(s - h) > _SPACING_RTOL * h for s in spacings):
        raise ConfigError(f"non-uniform spacing {spacings}; extent/cells must agree on all axes")
    return Grid(n=n, origin=origin, extent=extent, cells=cells, h=h)


def integrate(f: ScalarField, over: Mask | None = None) -> float:
    """Composite midpoint integral of ``f`` over a mask (or the whole box)."""
    if over is not None:
        if not f.grid.same_as(over.grid):
            raise GridError("field and mask live on different grids")
        return float(f.grid.cell_volume * np.sum(f.values[over.flags]))
    return float(f.grid.cell_volume * np.sum(f.values))


def laplacian(values: np.ndarray, h: float) -> np.ndarray:
    """Second-order 2n+1 point Laplacian with zero exterior values."""
    padded = np.pad(values, 1)
    n = values.ndim
    out = -2.0 * n * values
    for axis in range(n):
        lo = tuple(slice(1, -1) if a != axis else slice(0, -2) for a in range(n))
        hi = tuple(slice(1, -1) if a != axis else slice(2, None) for a in range(n))
        out = out + padded[lo] + padded[hi]
    return out / (h * h)


def neighbor_sum(values: np.ndarray) -> np.ndarray:
    """Sum of the 2n axis neighbors, zero outside the box."""
    padded = np.pad(values, 1)
    n = values.ndim
    out = np.zeros_like(values)
    for axis in range(n):
        lo = tuple(slice(1, -1) if a != axis else slice(0, -2) for a in range(n))
        hi = tuple(slice(1, -1) if a != axis else slice(2, None) for a in range(n))
        out += padded[lo]
        out += padded[hi]
    return out


def helmholtz_apply(f: ScalarField, k: float = 0.0) -> ScalarField:
    """(Laplace_h + k^2) f with the zero exterior convention."""
    if k < 0.0:
        raise GridError(f"wavenumber must be >= 0, got {k}")
    return ScalarField(f.grid, laplacian(f.values, f.grid.h) + (k * k) * f.values)


def gradient_sq_integral(values: np.ndarray, h: float) -> float:
    """Integral of |grad_h u|^2 by forward differences.

    Includes the edges into the zero exterior, so for fields supported away
    from the box margin this equals the quadratic form <u, -Laplace_h u>
    exactly.
    """
    padded = np.pad(values, 1)
    n = values.ndim
    total = 0.0
    for axis in range(n):
        cur = tuple(slice(1, -1) if a != axis else slice(0, -1) for a in range(n))
        nxt = tuple(slice(1, -1) if a != axis else slice(1, None) for a in range(n))
        d = padded[nxt] - padded[cur]
        total += float(np.sum(d * d))
    return total * h ** (n - 2)


def deposit_measure(grid: Grid, atoms, radius: float) -> GridMeasure:
    """Spread point atoms as uniform bumps on balls of the given radius.

    Each atom ``(point, mass)`` becomes ``mass / (discrete ball volume)`` on
    the nodes within ``radius`` of the point, so the grid integral of the
    density reproduces the total atomic mass exactly.
    """
    radius = float(radius)
    if radius < 2.0 * grid.h:
        raise PlacementError(f"mollification radius {radius} < 2h = {2*grid.h}")
    density = grid.zeros()
    kept = []
    for point, mass in atoms:
        point = tuple(float(p) for p in point)
        mass = float(mass)
        if mass < 0.0:
            raise GridError("atom masses must be nonnegative")
        for a in range(grid.n):
            lo_gap = point[a] - grid.origin[a]
            hi_gap = grid.origin[a] + grid.extent[a] - point[a]
            if min(lo_gap, hi_gap) < radius + 2.0 * grid.h:
                raise PlacementError(
                    f"atom at {point} closer than radius + 2h to the box boundary")
        ball = grid.radius_from(point) <= radius
        count = int(np.sum(ball))
        if count == 0:
            raise PlacementError(f"atom at {point} covers no grid node")
        density[ball] += mass / (count * grid.cell_volume)
        kept.append((point, mass))
    return GridMeasure(grid=grid, density=density, atoms=kept)


# ---------------------------------------------------------------------------
# Mask morphology (cross-shaped structuring element)
# ---------------------------------------------------------------------------

def dilate(flags: np.ndarray, steps: int = 1) -> np.ndarray:
    out = flags.copy()
    for _ in range(steps):
        out = out | (neighbor_sum(out.astype(float)) > 0.5)
    return out


def erode(flags: np.ndarray, steps: int = 1) -> np.ndarray:
    return ~dilate(~flags, steps)


def boundary_collar(flags: np.ndarray, width: int = 1) -> np.ndarray:
    """Nodes within ``width`` cells of the mask boundary (both sides)."""
    return dilate(flags, width) & ~erode(flags, width)


def margin_flags(grid: Grid, width: int = 2) -> np.ndarray:
    """Nodes within ``width`` cells of the box boundary."""
    flags = np.zeros(grid.cells, dtype=bool)
    for axis in range(grid.n):
        sl_lo = tuple(slice(None) if a != axis else slice(0, width) for a in range(grid.n))
        sl_hi = tuple(slice(None) if a != axis else slice(-width, None) for a in range(grid.n))
        flags[sl_lo] = True
        flags[sl_hi] = True
    return flags


def require_compact_support(values: np.ndarray, grid: Grid, tol: float,
                            width: int = 2, what: str = "field") -> None:
    m = margin_flags(grid, width)
    worst = float(np.max(np.abs(values[m]))) if np.any(m) else 0.0
    if worst > tol:
        raise BoxTooSmallError(
            f"box too small: {what} reaches {worst:.3e} on the {width}-cell margin "
            f"(tolerance {tol:.3e}); enlarge the extent")


# ---------------------------------------------------------------------------
# File formats: CSV dump and a raw float64 raster with a 64-byte text header
# ---------------------------------------------------------------------------

_HEADER_BYTES = 64


def write_csv(f: ScalarField, path) -> None:
    g = f.grid
    cols = [c.ravel() for c in np.meshgrid(*[g.axis_coords(a) for a in range(g.n)],
                                           indexing="ij")]
    cols.append(f.values.ravel())
    header = ",".join([f"x{a}" for a in range(g.n)] + ["value"])
    np.savetxt(path, np.column_stack(cols), delimiter=",", header=header,
               comments="", fmt="%.17g")


def _raster_header(g: Grid) -> bytes:
    for prec in (12, 10, 8, 6):
        fmt = f"%.{prec}g"
        parts = ["QDR1", str(g.n)]
        parts += [str(c) for c in g.cells]
        parts += [fmt % v for v in g.origin]
        parts.append(fmt % g.h)
        text = " ".join(parts)
        if len(text) < _HEADER_BYTES:
            return text.ljust(_HEADER_BYTES).encode("ascii")
    raise GridError("cannot encode raster header in 64 bytes")


def write_raster(f: ScalarField, path) -> None:
    """Raw little-endian float64 raster, row-major, 64-byte ASCII header."""
    with open(path, "wb") as fh:
        fh.write(_raster_header(f.grid))
        fh.write(np.ascontiguousarray(f.values, dtype="<f8").tobytes())


def read_raster(path) -> ScalarField:
    with open(path, "rb") as fh:
        header = fh.read(_HEADER_BYTES).decode("ascii").split()
        if not header or header[0] != "QDR1":
            raise GridError(f"{path} is not a qdom raster file")
        n = int(header[1])
        cells = tuple(int(v) for v in header[2:2 + n])
        origin = tuple(float(v) for v in header[2 + n:2 + 2 * n])
        h = float(header[2 + 2 * n])
        data = np.frombuffer(fh.read(), dtype="<f8").reshape(cells).copy()
    extent = tuple(c * h for c in cells)
    grid = Grid(n=n, origin=origin, extent=extent, cells=cells, h=h)
    return ScalarField(grid, data)
