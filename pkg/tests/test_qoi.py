import numpy as np
import pytest

from dgms import coefficient, dg, mesh, multiscale, qoi
from dgms.errors import ConfigError


@pytest.fixture(scope="module")
def setup():
    hier = mesh.build_hierarchy(mesh.unit_square(), 2, 4)
    vals = np.random.default_rng(0).uniform(0.5, 2.0, hier.fine.nel)
    A = coefficient.Coefficient(hier.fine, vals)
    ws = multiscale.assemble_workspace(hier, A, dg.PenaltyRule())
    basis = multiscale.build_ms_space(ws, 2)
    return ws, basis


def f_rhs(x, y):
    return 1.0 + np.cos(2 * np.pi * x) * np.cos(2 * np.pi * y)


def g_ind(x, y):
    return ((x >= 0.25) & (x <= 0.75) & (y >= 0.25) & (y <= 0.75)).astype(float)


def test_dual_solve_consistency(setup):
    # with a symmetric form, int g u = int f z for the two reference solves
    ws, _ = setup
    u, _ = dg.solve_operator(ws.op, dg.assemble_load(ws.hier.fine, f_rhs))
    z, _ = qoi.solve_dual_reference(ws, g_ind)
    lhs = qoi.functional_value(ws.hier.fine, g_ind, u)
    rhs = qoi.functional_value(ws.hier.fine, f_rhs, z)
    assert abs(lhs - rhs) < 1e-10 * max(abs(lhs), 1.0)


def test_gap_bounded_by_product(setup):
    ws, basis = setup
    for g in (f_rhs, g_ind):
        gap, bound = qoi.qoi_error_bound(ws, basis, f_rhs, g)
        assert gap <= bound * (1.0 + 1e-8)
        assert bound > 0.0


def test_dual_msfem_is_galerkin_solution(setup):
    ws, basis = setup
    sol = qoi.solve_dual_msfem(ws, basis, g_ind)
    b = dg.assemble_load(ws.hier.fine, g_ind)
    r = basis.psi.T @ (ws.op.matrix @ sol.u.coeffs - b)
    assert np.abs(r).max() < 1e-8 * np.linalg.norm(basis.psi.T @ b)


def test_l2_estimate_scales(setup):
    ws, basis = setup
    u_ref, _ = dg.solve_operator(ws.op, dg.assemble_load(ws.hier.fine, f_rhs))
    u_ms = multiscale.solve_msfem(ws, basis, f_rhs).u
    est, meas = qoi.l2_error_estimate(ws, u_ref, u_ms)
    assert est > 0.0 and meas > 0.0
    other = mesh.Mesh(mesh.unit_square(), 4)
    v = dg.zero_function(other)
    with pytest.raises(ConfigError):
        qoi.l2_error_estimate(ws, v, u_ms)
