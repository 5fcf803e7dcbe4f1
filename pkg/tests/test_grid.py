import math

import numpy as np
import pytest

from qdom import grid as G


def unit_bump(g, center, radius):
    """Smooth compactly supported test field."""
    r = g.radius_from(center)
    vals = np.where(r < radius, np.exp(-1.0 / np.maximum(1e-12, 1 - (r / radius) ** 2)), 0.0)
    return G.ScalarField(g, vals)


def test_make_grid_spacing():
    g = G.make_grid(2, (-5, -5), (10, 10), (200, 200))
    assert g.h == pytest.approx(0.05)
    g3 = G.make_grid(3, (-3, -3, -3), (6, 6, 6), (96, 96, 96))
    assert g3.h == pytest.approx(0.0625)


def test_make_grid_too_coarse():
    with pytest.raises(G.ConfigError):
        G.make_grid(2, (0, 0), (1, 1), (8, 8))


def test_make_grid_nonuniform_spacing():
    with pytest.raises(G.ConfigError):
        G.make_grid(2, (0, 0), (1, 2), (32, 32))


def test_integrate_constant_over_box():
    g = G.make_grid(2, (-5, -5), (10, 10), (200, 200))
    one = G.ScalarField(g, np.ones(g.cells))
    assert G.integrate(one) == pytest.approx(100.0, rel=1e-13)


def test_integrate_disk_area():
    g = G.make_grid(2, (-3, -3), (6, 6), (300, 300))  # h = 0.02
    disk = G.Mask(g, g.radius_from((0, 0)) < 2.0)
    one = G.ScalarField(g, np.ones(g.cells))
    assert G.integrate(one, disk) == pytest.approx(4 * math.pi, rel=0.01)


def test_integrate_odd_function_cancels():
    g = G.make_grid(2, (-1, -1), (2, 2), (64, 64))
    X, _ = g.coord_arrays()
    f = G.ScalarField(g, (X * np.ones(g.cells)) ** 3)
    assert abs(G.integrate(f)) <= 1e-12


def test_integrate_grid_mismatch():
    g1 = G.make_grid(2, (0, 0), (1, 1), (32, 32))
    g2 = G.make_grid(2, (0, 0), (1, 1), (64, 64))
    with pytest.raises(G.GridError):
        G.integrate(G.ScalarField(g1, np.ones(g1.cells)),
                    G.Mask(g2, np.ones(g2.cells, dtype=bool)))


def test_helmholtz_apply_zero():
    g = G.make_grid(2, (0, 0), (1, 1), (32, 32))
    z = G.ScalarField(g, np.zeros(g.cells))
    assert np.all(G.helmholtz_apply(z, 1.0).values == 0.0)


def test_helmholtz_apply_sine_laplacian():
    g = G.make_grid(2, (0, 0), (1, 1), (128, 128))
    X, Y = g.coord_arrays()
    f = G.ScalarField(g, np.sin(np.pi * X) * np.sin(np.pi * Y))
    lap = G.helmholtz_apply(f, 0.0)
    inner = ~G.margin_flags(g, 2)
    err = np.max(np.abs(lap.values[inner] + 2 * np.pi ** 2 * f.values[inner]))
    assert err <= 4.0 * (np.pi * g.h) ** 2  # second order


def test_helmholtz_apply_plane_wave_truncation():
    k = 2.0
    g = G.make_grid(2, (0, 0), (1, 1), (128, 128))
    X, Y = g.coord_arrays()
    theta = (1 / math.sqrt(2), 1 / math.sqrt(2))
    f = G.ScalarField(g, np.cos(k * (X * theta[0] + Y * theta[1])) * np.ones(g.cells))
    res = G.helmholtz_apply(f, k)
    inner = ~G.margin_flags(g, 1)
    # Taylor truncation of the 5-point stencil: |res| <= n/12 k^4 h^2
    assert np.max(np.abs(res.values[inner])) <= 2.0 / 12 * k ** 4 * g.h ** 2 * 1.5


def test_helmholtz_apply_linearity():
    rng = np.random.default_rng(7)
    g = G.make_grid(2, (0, 0), (1, 1), (48, 48))
    f = G.ScalarField(g, rng.standard_normal(g.cells))
    h = G.ScalarField(g, rng.standard_normal(g.cells))
    a, b = 1.371, -0.77
    lhs = G.helmholtz_apply(G.ScalarField(g, a * f.values + b * h.values), 1.2).values
    rhs = (a * G.helmholtz_apply(f, 1.2).values + b * G.helmholtz_apply(h, 1.2).values)
    assert np.max(np.abs(lhs - rhs)) <= 1e-12 * np.max(np.abs(rhs))


def test_discrete_green_identity():
    rng = np.random.default_rng(11)
    g = G.make_grid(2, (0, 0), (1, 1), (64, 64))
    interior = ~G.margin_flags(g, 2)
    f = rng.standard_normal(g.cells) * interior
    w = rng.standard_normal(g.cells) * interior
    lf = G.laplacian(f, g.h)
    lw = G.laplacian(w, g.h)
    a = float(np.sum(w * lf))
    b = float(np.sum(f * lw))
    assert abs(a - b) <= 1e-10 * max(abs(a), abs(b))


def test_gradient_energy_matches_quadratic_form():
    rng = np.random.default_rng(3)
    g = G.make_grid(2, (0, 0), (1, 1), (48, 48))
    u = rng.standard_normal(g.cells)
    grad = G.gradient_sq_integral(u, g.h)
    form = -float(np.sum(u * G.laplacian(u, g.h))) * g.cell_volume
    assert grad == pytest.approx(form, rel=1e-12)


def test_deposit_measure_masses():
    g = G.make_grid(2, (-3, -3), (6, 6), (120, 120))
    mu = G.deposit_measure(g, [((0.0, 0.0), 5.0)], 0.5)
    assert mu.total_mass == pytest.approx(5.0, abs=1e-12)
    mu2 = G.deposit_measure(g, [((0.7, 0.1), 1.0), ((-1.0, 0.4), 2.0)], 0.3)
    assert mu2.total_mass == pytest.approx(3.0, abs=1e-12)
    assert G.integrate(G.ScalarField(g, mu2.density)) == pytest.approx(3.0, rel=1e-10)


def test_deposit_measure_corner_atom_rejected():
    g = G.make_grid(2, (-3, -3), (6, 6), (120, 120))
    with pytest.raises(G.PlacementError):
        G.deposit_measure(g, [((-2.9, -2.9), 1.0)], 0.5)


def test_deposit_measure_radius_floor():
    g = G.make_grid(2, (-3, -3), (6, 6), (120, 120))
    with pytest.raises(G.PlacementError):
        G.deposit_measure(g, [((0, 0), 1.0)], 0.5 * g.h)


def test_morphology_roundtrip():
    g = G.make_grid(2, (-1, -1), (2, 2), (64, 64))
    disk = g.radius_from((0, 0)) < 0.5
    grown = G.dilate(disk, 2)
    shrunk = G.erode(grown, 2)
    assert np.all(disk <= grown)
    assert np.array_equal(G.boundary_collar(disk, 1),
                          G.dilate(disk, 1) & ~G.erode(disk, 1))
    assert np.sum(shrunk) >= np.sum(disk)  # closing never loses the disk


def test_compact_support_guard():
    g = G.make_grid(2, (-1, -1), (2, 2), (32, 32))
    vals = np.zeros(g.cells)
    vals[0, 10] = 1.0
    with pytest.raises(G.BoxTooSmallError):
        G.require_compact_support(vals, g, 1e-8)
    G.require_compact_support(np.zeros(g.cells), g, 1e-8)


def test_raster_roundtrip(tmp_path):
    g = G.make_grid(2, (-1.25, -0.5), (2.5, 2.5), (40, 40))
    rng = np.random.default_rng(5)
    f = G.ScalarField(g, rng.standard_normal(g.cells))
    path = tmp_path / "field.f64"
    G.write_raster(f, path)
    back = G.read_raster(path)
    assert np.array_equal(back.values, f.values)
    assert back.grid.cells == g.cells
    assert back.grid.h == pytest.approx(g.h, rel=1e-7)
    with open(path, "rb") as fh:
        assert len(fh.read(64)) == 64


def test_raster_roundtrip_3d(tmp_path):
    g = G.make_grid(3, (-1, -1, -1), (2, 2, 2), (16, 16, 16))
    f = G.ScalarField(g, np.arange(16 ** 3, dtype=float).reshape(g.cells))
    path = tmp_path / "field3.f64"
    G.write_raster(f, path)
    back = G.read_raster(path)
    assert np.array_equal(back.values, f.values)


def test_csv_dump(tmp_path):
    g = G.make_grid(2, (0, 0), (1, 1), (16, 16))
    f = G.ScalarField(g, np.ones(g.cells))
    path = tmp_path / "f.csv"
    G.write_csv(f, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "x0,x1,value"
    assert len(lines) == 1 + 16 * 16


def test_measure_negative_density_rejected():
    g = G.make_grid(2, (0, 0), (1, 1), (16, 16))
    with pytest.raises(G.GridError):
        G.GridMeasure(g, -np.ones(g.cells))
