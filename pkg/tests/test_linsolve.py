import itertools
import math

import numpy as np
import pytest

from qdom import grid as G
from qdom import linsolve as L


def assemble_dense(op: L.OperatorSpec):
    """Independent dense assembly of the operator on its active set."""
    g = op.grid
    active = op.active
    idx = -np.ones(g.cells, dtype=int)
    nodes = np.argwhere(active)
    for row, node in enumerate(nodes):
        idx[tuple(node)] = row
    n = len(nodes)
    A = np.zeros((n, n))
    diag = op.diagonal()
    for row, node in enumerate(nodes):
        A[row, row] = diag[tuple(node)]
        for axis in range(g.n):
            for step in (-1, 1):
                nb = node.copy()
                nb[axis] += step
                if 0 <= nb[axis] < g.cells[axis] and idx[tuple(nb)] >= 0:
                    A[row, idx[tuple(nb)]] = -1.0 / g.h ** 2
    return A, nodes


def small_grid():
    return G.make_grid(2, (0, 0), (1, 1), (20, 20))


def test_cg_zero_rhs_zero_boundary():
    g = small_grid()
    op = L.OperatorSpec(grid=g)
    out = L.cg_solve(op, G.ScalarField(g, np.zeros(g.cells)))
    assert np.all(out.values == 0.0)


def test_cg_against_sparse_direct_oracle():
    g = small_grid()
    rng = np.random.default_rng(2)
    mask = G.Mask(g, g.radius_from((0.5, 0.5)) < 0.4)
    op = L.OperatorSpec(grid=g, k=1.0, domain=mask)
    rhs_full = rng.standard_normal(g.cells)
    A, nodes = assemble_dense(op)
    x_ref = np.linalg.solve(A, rhs_full[tuple(nodes.T)])
    out = L.cg_solve(op, G.ScalarField(g, rhs_full),
                     config=L.SolverConfig(tol_rel=1e-12))
    got = out.values[tuple(nodes.T)]
    assert np.max(np.abs(got - x_ref)) <= 1e-8 * max(1.0, np.max(np.abs(x_ref)))


def test_cg_poisson_sine_analytic():
    # aligned interior mask on [0,1]^2 so the Dirichlet line sits on nodes
    h = 1.0 / 32
    g = G.make_grid(2, (-2.5 * h, -2.5 * h), (37 * h, 37 * h), (37, 37))
    X, Y = g.coord_arrays()
    mask = G.Mask(g, (X > 0) & (X < 1) & (Y > 0) & (Y < 1))
    op = L.OperatorSpec(grid=g, domain=mask)
    exact = np.sin(np.pi * X) * np.sin(np.pi * Y) * np.ones(g.cells)
    rhs = G.ScalarField(g, 2 * np.pi ** 2 * exact)
    out = L.cg_solve(op, rhs, config=L.SolverConfig(tol_rel=1e-11))
    err = np.max(np.abs(out.values[mask.flags] - exact[mask.flags]))
    assert err <= 2.0 * (np.pi * h) ** 2


def test_cg_indefinite_reports():
    g = small_grid()
    mask = G.Mask(g, g.radius_from((0.5, 0.5)) < 0.3)
    # first Dirichlet eigenvalue of the small disk is ~ (j01/0.3)^2 ~ 64;
    # k = 9 puts k^2 = 81 above it
    op = L.OperatorSpec(grid=g, k=9.0, domain=mask)
    with pytest.raises(L.IndefiniteOperatorError):
        L.cg_solve(op, G.ScalarField(g, np.ones(g.cells)))


def test_mmatrix_guard():
    g = small_grid()
    with pytest.raises(ValueError):
        L.OperatorSpec(grid=g, k=2.0 * math.sqrt(2.0 * 2) / g.h)


def test_psor_nonpositive_rhs_gives_zero():
    g = small_grid()
    op = L.OperatorSpec(grid=g, k=0.5)
    rhs = G.ScalarField(g, -np.ones(g.cells))
    out = L.psor_lcp(op, rhs)
    assert np.all(out.values == 0.0)


def test_psor_unconstrained_matches_cg():
    g = small_grid()
    rng = np.random.default_rng(4)
    op = L.OperatorSpec(grid=g, k=1.0)
    rhs = G.ScalarField(g, rng.standard_normal(g.cells))
    cfg = L.SolverConfig(tol_rel=1e-11, relaxation=1.6)
    free = L.psor_lcp(op, rhs, lower=-1e30, config=cfg)
    ref = L.cg_solve(op, rhs, config=cfg)
    assert np.max(np.abs(free.values - ref.values)) <= 1e-8


def test_psor_complementarity_and_activeset_oracle():
    # an 11-node strip: enumerate all 2^11 active sets, pick the feasible
    # complementary one, compare against PSOR
    g = small_grid()
    flags = np.zeros(g.cells, dtype=bool)
    flags[5, 4:15] = True  # 11 nodes in a row
    mask = G.Mask(g, flags)
    op = L.OperatorSpec(grid=g, k=0.7, domain=mask)
    rng = np.random.default_rng(9)
    rhs_full = rng.standard_normal(g.cells) * 3.0
    A, nodes = assemble_dense(op)
    b = rhs_full[tuple(nodes.T)]
    n = len(b)
    best = None
    for bits in itertools.product([0, 1], repeat=n):
        free = np.array(bits, dtype=bool)  # nodes with w > 0
        w = np.zeros(n)
        if free.any():
            w[free] = np.linalg.solve(A[np.ix_(free, free)], b[free])
        slack = A @ w - b
        if np.all(w >= -1e-11) and np.all(slack >= -1e-11):
            best = w
            break
    assert best is not None
    out = L.psor_lcp(op, G.ScalarField(g, rhs_full),
                     config=L.SolverConfig(tol_rel=1e-12))
    got = out.values[tuple(nodes.T)]
    assert np.max(np.abs(got - best)) <= 1e-8


def test_psor_redblack_matches_lex():
    g = small_grid()
    rng = np.random.default_rng(6)
    op = L.OperatorSpec(grid=g, k=0.9)
    rhs = G.ScalarField(g, rng.standard_normal(g.cells) * 2.0)
    rb = L.psor_lcp(op, rhs, config=L.SolverConfig(tol_rel=1e-12, sweep="redblack"))
    lex = L.psor_lcp(op, rhs, config=L.SolverConfig(tol_rel=1e-12, sweep="lex"))
    assert np.max(np.abs(rb.values - lex.values)) <= 1e-10


def test_psor_relaxation_independence():
    g = small_grid()
    rng = np.random.default_rng(8)
    op = L.OperatorSpec(grid=g, k=0.4)
    rhs = G.ScalarField(g, rng.standard_normal(g.cells))
    tol = 1e-11
    a = L.psor_lcp(op, rhs, config=L.SolverConfig(tol_rel=tol, relaxation=1.2))
    b = L.psor_lcp(op, rhs, config=L.SolverConfig(tol_rel=tol, relaxation=1.85))
    assert np.max(np.abs(a.values - b.values)) <= 10 * tol * max(
        1.0, float(np.max(np.abs(a.values))))


def test_psor_monotone_in_rhs():
    g = small_grid()
    rng = np.random.default_rng(10)
    op = L.OperatorSpec(grid=g, k=0.8)
    base = rng.standard_normal(g.cells)
    lift = np.abs(rng.standard_normal(g.cells))
    cfg = L.SolverConfig(tol_rel=1e-12)
    w1 = L.psor_lcp(op, G.ScalarField(g, base), config=cfg)
    w2 = L.psor_lcp(op, G.ScalarField(g, base + lift), config=cfg)
    assert np.min(w2.values - w1.values) >= -1e-9


def test_min_eigenvalue_square():
    h = 1.0 / 50
    g = G.make_grid(2, (-7.5 * h, -7.5 * h), (64 * h, 64 * h), (64, 64))
    X, Y = g.coord_arrays()
    mask = G.Mask(g, (X > 0) & (X < 1) & (Y > 0) & (Y < 1))
    lam, phi = L.min_eigenvalue(mask)
    assert math.sqrt(lam) == pytest.approx(math.pi * math.sqrt(2), rel=5e-3)
    # eigenfield positivity (single sign)
    assert np.min(phi.values[mask.flags]) >= 0.0
    assert np.max(phi.values) == pytest.approx(1.0)


def test_min_eigenvalue_disk_and_scaling():
    g = G.make_grid(2, (-1.1, -1.1), (2.2, 2.2), (128, 128))
    mask = G.Mask(g, g.radius_from((0, 0)) < 1.0)
    lam, _ = L.min_eigenvalue(mask)
    assert math.sqrt(lam) == pytest.approx(2.404825557695773, rel=0.02)
    g2 = G.make_grid(2, (-2.2, -2.2), (4.4, 4.4), (128, 128))
    mask2 = G.Mask(g2, g2.radius_from((0, 0)) < 2.0)
    lam2, _ = L.min_eigenvalue(mask2)
    assert lam2 == pytest.approx(lam / 4.0, rel=0.01)


def test_min_eigenvalue_empty_mask():
    g = small_grid()
    with pytest.raises(G.GridError):
        L.min_eigenvalue(G.Mask(g, np.zeros(g.cells, dtype=bool)))


def test_box_kstar_matches_power_iteration():
    g = G.make_grid(2, (0, 0), (1, 1), (48, 48))
    full = G.Mask(g, np.ones(g.cells, dtype=bool))
    lam, _ = L.min_eigenvalue(full)
    assert L.box_kstar(g) == pytest.approx(math.sqrt(lam), rel=1e-5)


def test_solver_config_validation():
    with pytest.raises(ValueError):
        L.SolverConfig(tol_rel=0.0)
    with pytest.raises(ValueError):
        L.SolverConfig(relaxation=2.0)
    with pytest.raises(ValueError):
        L.SolverConfig(sweep="diagonal")
