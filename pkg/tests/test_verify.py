import math

import numpy as np
import pytest
from scipy import special as sp

from qdom import grid as G
from qdom import linsolve as L
from qdom import multiphase as M
from qdom import specfun as sf
from qdom import verify as V

J11 = 3.8317059702075125


def profile_grid(k=1.0, m=1, cells_per_radius=64):
    R = V.null_qd_radius(2, k, m)
    ext = 2.25 * R
    cells = int(round(2.25 * cells_per_radius))
    return G.make_grid(2, (-ext / 2, -ext / 2), (ext, ext), (cells, cells))


@pytest.fixture(scope="module")
def null_profile():
    g = profile_grid(cells_per_radius=128)
    u, D = V.null_qd_profile(g, 1.0, 1)
    return g, u, D


def test_family_member_count_and_gate():
    g = G.make_grid(2, (-2, -2), (4, 4), (128, 128))
    fam = V.helmholtz_test_family(g, 1.0, n_dirs=4, centers=[(0.2, 0.1)])
    assert len(fam.members) == 9  # 4 directions x (cos, sin) + 1 radial
    for mem in fam.members:
        amp = float(np.max(np.abs(mem.field.values)))
        assert mem.interior_residual <= fam.gate * amp


def test_family_gate_rejects_coarse_grid():
    g = G.make_grid(2, (-2, -2), (4, 4), (16, 16))  # h = 0.25
    with pytest.raises(V.ResolutionError):
        V.helmholtz_test_family(g, 4.0, n_dirs=1)  # under 8 nodes/wavelength

def test_family_rejects_nonpositive_k():
    g = G.make_grid(2, (-2, -2), (4, 4), (32, 32))
    with pytest.raises(ValueError):
        V.helmholtz_test_family(g, 0.0)


def test_radial_member_finite_at_center():
    g = G.make_grid(2, (-2, -2), (4, 4), (128, 128))
    fam = V.helmholtz_test_family(g, 1.0, n_dirs=1, centers=[(0.25, -0.25)])
    rad = fam.members[-1]
    assert rad.evaluate((0.25, -0.25)) == pytest.approx(1.0)
    g3 = G.make_grid(3, (-1, -1, -1), (2, 2, 2), (32, 32, 32))
    fam3 = V.helmholtz_test_family(g3, 1.0, n_dirs=2, centers=[(0.0, 0.0, 0.0)])
    assert fam3.members[-1].evaluate((0.0, 0.0, 0.0)) == pytest.approx(1.0)


def test_plane_wave_direction_reversal_pairs():
    g = G.make_grid(2, (-2, -2), (4, 4), (64, 64))
    fam = V.helmholtz_test_family(g, 1.0, n_dirs=2)  # theta and -theta
    cos0, sin0, cos1, sin1 = [m.field.values for m in fam.members]
    assert np.max(np.abs(cos1 - cos0)) <= 1e-13  # cosine is even in theta
    assert np.max(np.abs(sin1 + sin0)) <= 1e-13  # sine is odd


def test_quadrature_mean_value_ball():
    # B_r is a k-quadrature domain for c_k(r) delta_0: the discrete residual
    # must vanish at the percent level
    k, r = 1.0, 1.3
    g = G.make_grid(2, (-2.6, -2.6), (5.2, 5.2), (256, 256))
    D = G.Mask(g, g.radius_from((0, 0)) < r)
    cap = sf.ball_capacity(2, k, r)
    mu = G.GridMeasure(g, g.zeros(), atoms=[((0.0, 0.0), cap)])
    fam = V.helmholtz_test_family(g, k, n_dirs=4, centers=[(0.4, 0.2)])
    rep = V.quadrature_residual(D, mu, k, fam)
    assert rep.max_residual <= 0.02


def test_null_profile_center_value(null_profile):
    g, u, D = null_profile
    # (J0(j11) - 1)/J0(j11), frozen from the series oracle
    center = np.unravel_index(np.argmax(u.values), u.values.shape)
    assert u.values[center] == pytest.approx(3.4828719346339536, rel=1e-3)
    # analytic check exactly at a node
    x0 = g.axis_coords(0)[g.cells[0] // 2]
    y0 = g.axis_coords(1)[g.cells[1] // 2]
    r = math.hypot(x0, y0)
    expect = (sp.jv(0, J11) - sp.jv(0, r)) / sp.jv(0, J11)
    assert u.values[g.cells[0] // 2, g.cells[1] // 2] == pytest.approx(
        expect, rel=1e-12)


def test_null_profile_vanishes_smoothly(null_profile):
    g, u, D = null_profile
    ring = G.boundary_collar(D.flags, 2)
    assert np.max(np.abs(u.values[ring])) <= 10 * g.h ** 2
    assert np.all(u.values[~D.flags] == 0.0)
    assert np.min(u.values) >= 0.0  # m = 1 profile is one-signed


def test_null_profile_m2_changes_sign():
    g = profile_grid(m=2, cells_per_radius=24)
    u, D = V.null_qd_profile(g, 1.0, 2)
    assert np.min(u.values) < -1.0 and np.max(u.values) > 1.0


def test_null_profile_needs_margin():
    g = G.make_grid(2, (-3, -3), (6, 6), (64, 64))  # R = 3.83 doesn't fit
    with pytest.raises(G.GridError):
        V.null_qd_profile(g, 1.0, 1)


def test_null_quadrature_residual(null_profile):
    g, u, D = null_profile
    fam = V.helmholtz_test_family(g, 1.0, n_dirs=4,
                                  centers=[(0.5, 0.0), (-0.7, 1.1)])
    rep = V.quadrature_residual(D, None, 1.0, fam)
    assert rep.max_residual <= 0.02


def test_pompeiu_identities_closed_form(null_profile):
    g, u, D = null_profile
    rep = V.pompeiu_identities(u, D, 1.0)
    assert rep["passed"]
    for name in ("gradient_energy", "l2_energy", "integral"):
        assert rep[name]["rel_error"] <= 0.02
    # |D| ~ pi j11^2
    assert rep["volume"] == pytest.approx(math.pi * J11 ** 2, rel=0.01)


def test_pompeiu_identities_flag_scaled_profile(null_profile):
    g, u, D = null_profile
    scaled = G.ScalarField(g, 1.7 * u.values)
    rep = V.pompeiu_identities(scaled, D, 1.0)
    assert not rep["passed"]


def test_pompeiu_identities_reject_nonvanishing():
    g = G.make_grid(2, (-5, -5), (10, 10), (128, 128))
    D = G.Mask(g, g.radius_from((0, 0)) < 2.0)
    bad = G.ScalarField(g, np.ones(g.cells))
    with pytest.raises(M.HypothesisError):
        V.pompeiu_identities(bad, D, 1.0)


def test_pompeiu_identities_3d():
    k = 1.0
    R = V.null_qd_radius(3, k, 1)  # j_{3/2,1} ~ 4.49
    ext = 2.2 * R
    g = G.make_grid(3, (-ext / 2,) * 3, (ext,) * 3, (110,) * 3)
    u, D = V.null_qd_profile(g, k, 1)
    rep = V.pompeiu_identities(u, D, k)
    assert rep["passed"]


def test_pompeiu_residuals_shrink_under_refinement():
    errs = {}
    for cpr in (32, 64):
        g = profile_grid(cells_per_radius=cpr)
        u, D = V.null_qd_profile(g, 1.0, 1)
        rep = V.pompeiu_identities(u, D, 1.0, rel_tol=1.0)
        errs[cpr] = max(rep[n]["rel_error"]
                        for n in ("gradient_energy", "l2_energy", "integral"))
    assert errs[64] <= 0.6 * errs[32]


def test_saddle_scan_parabola(null_profile):
    g, u, D = null_profile
    ts = [round(-2 + 0.25 * i, 2) for i in range(21)]
    rep = V.saddle_scan(u, D, 1.0, ts)
    assert rep["max_deviation"] <= 0.02
    assert rep["argmax_t"] == 1.0
    assert rep["argmax_at_one"]
    by_t = {row["t"]: row["value"] for row in rep["scan"]}
    assert by_t[0.0] == 0.0
    vol = D.volume()
    assert abs(by_t[2.0]) <= 0.02 * vol  # parabola root at t = 2
    assert by_t[1.0] == pytest.approx(vol, rel=0.02)  # max value |D|/k^2


def test_saddle_direction_dichotomy(null_profile):
    g, u, D = null_profile
    # first eigenfield of a small box inside the ball: eigenvalue above k^2
    X, Y = g.coord_arrays()
    sub = G.Mask(g, (np.abs(X) < 1.0) & (np.abs(Y) < 1.0) * np.ones(g.cells, bool))
    lam, phi = L.min_eigenvalue(sub, L.SolverConfig(tol_rel=1e-8))
    assert lam > 1.0  # k0^2 > k^2
    rep = V.saddle_direction_scan(u, phi, 1.0, [x / 4 for x in range(-8, 9)])
    assert rep["one_sided_nonnegative"]
