import math

import numpy as np
import pytest

import oracles
from dgms import coefficient, dg, mesh
from dgms.errors import ConfigError, NumericalError


@pytest.fixture
def small():
    m = mesh.Mesh(mesh.unit_square(), 2)
    rng = np.random.default_rng(0)
    A = coefficient.Coefficient(m, rng.uniform(0.2, 5.0, m.nel))
    pen = dg.PenaltyRule(10.0, "weighted")
    return m, A, pen


def test_matrix_matches_dense_oracle(small):
    m, A, pen = small
    op = dg.assemble_sip(m, A, pen)
    Ko = oracles.dense_sip(m, A.values, sigma0=pen.sigma0, mode=pen.mode)
    assert np.abs(op.matrix.toarray() - Ko).max() < 1e-12


def test_matrix_symmetric_positive_definite(small):
    m, A, pen = small
    K = dg.assemble_sip(m, A, pen).matrix
    assert abs(K - K.T).max() < 1e-13
    w = np.linalg.eigvalsh(K.toarray())
    assert w.min() > 0.0


def test_plain_penalty_mode(small):
    m, A, _ = small
    pen = dg.PenaltyRule(12.0, "plain")
    op = dg.assemble_sip(m, A, pen)
    Ko = oracles.dense_sip(m, A.values, sigma0=12.0, mode="plain")
    assert np.abs(op.matrix.toarray() - Ko).max() < 1e-12


def test_penalty_rule_validation():
    with pytest.raises(ConfigError):
        dg.PenaltyRule(-1.0)
    with pytest.raises(ConfigError):
        dg.PenaltyRule(10.0, "other")


def test_mass_and_load_match_oracles(small):
    m, _, _ = small
    Mo = oracles.dense_mass(m)
    assert np.abs(dg.assemble_mass(m).toarray() - Mo).max() < 1e-13

    def f(x, y):
        return np.exp(x) * np.cos(3.0 * y)

    bo = oracles.dense_load(m, f)
    assert np.abs(dg.assemble_load(m, f, order=12) - bo).max() < 1e-13


def test_load_of_dg_function_is_mass_times_coeffs(small):
    m, _, _ = small
    rng = np.random.default_rng(1)
    v = dg.DGFunction(m, rng.standard_normal(m.ndof))
    b = dg.assemble_load(m, v)
    assert np.allclose(b, dg.assemble_mass(m) @ v.coeffs)


def test_interpolation_and_evaluation():
    m = mesh.Mesh(mesh.unit_square(), 3)

    def f(x, y):
        return 2.0 * x - 3.0 * y + x * y  # bilinear, interpolated exactly

    v = dg.interpolate(m, f)
    xs = np.array([0.1, 0.55, 0.9])
    ys = np.array([0.3, 0.05, 0.77])
    assert np.allclose(dg.evaluate(v, xs, ys), f(xs, ys), atol=1e-13)


def test_jump_average_continuous_function():
    m = mesh.Mesh(mesh.unit_square(), 3)
    v = dg.interpolate(m, lambda x, y: x**2 + y)  # continuous at vertices
    s = np.array([0.0, 0.5, 1.0])
    for f in range(m.nfaces):
        if m.face_plus[f] < 0:
            continue
        # vertex interpolants of a continuous function agree along faces
        assert np.abs(dg.jump(v, f, s)).max() < 1e-13


def test_jump_sign_convention():
    m = mesh.Mesh(mesh.unit_square(), 1)
    v = dg.zero_function(m)
    v.coeffs[0:4] = 1.0  # element 0 constant one
    f = [k for k in range(m.nfaces)
         if m.face_plus[k] == 1 and m.face_minus[k] == 0][0]
    assert np.allclose(dg.jump(v, f, 0.5), 1.0)
    assert np.allclose(dg.average(v, f, 0.5), 0.5)


def test_energy_norm_decomposition(small):
    m, A, pen = small
    op = dg.assemble_sip(m, A, pen)
    rng = np.random.default_rng(2)
    v = dg.DGFunction(m, rng.standard_normal(m.ndof))
    total = op.energy_norm(v) ** 2
    parts = (dg.element_volume_energies(op, v).sum()
             + dg.face_penalty_energies(op, v).sum())
    assert abs(total - parts) < 1e-10 * max(total, 1.0)


def test_neumann_faces_carry_no_terms():
    m = mesh.Mesh(mesh.l_shape_benchmark(), 3)
    A = coefficient.constant(m, 1.0)
    op = dg.assemble_sip(m, A, dg.PenaltyRule())
    v = dg.interpolate(m, lambda x, y: x)
    pen_faces = dg.face_penalty_energies(op, v)
    parts = mesh.classify_faces(m)
    assert np.all(pen_faces[parts["neumann"]] == 0.0)
    assert np.any(pen_faces[parts["dirichlet"]] > 0.0)


def test_manufactured_convergence_rate():
    def uex(x, y):
        return np.sin(np.pi * x) * np.sin(np.pi * y)

    def f(x, y):
        return 2.0 * np.pi**2 * uex(x, y)

    pen = dg.PenaltyRule()
    errs = []
    for level in (3, 4, 5):
        m = mesh.Mesh(mesh.unit_square(), level)
        A = coefficient.constant(m, 1.0)
        u, _ = dg.solve_reference(m, A, pen, f)
        e = dg.DGFunction(m, u.coeffs - dg.interpolate(m, uex).coeffs)
        errs.append(dg.l2_norm(e))
    rates = [math.log2(errs[i] / errs[i + 1]) for i in range(len(errs) - 1)]
    assert min(rates) > 1.8


def test_solver_methods_agree():
    m = mesh.Mesh(mesh.unit_square(), 3)
    A = coefficient.constant(m, 1.0)
    pen = dg.PenaltyRule()

    def f(x, y):
        return np.ones_like(x)

    u_d, info_d = dg.solve_reference(m, A, pen, f, method="direct")
    u_c, info_c = dg.solve_reference(m, A, pen, f, method="cg", rtol=1e-12)
    assert info_d["iterations"] == 0
    assert info_c["iterations"] > 0
    assert np.abs(u_d.coeffs - u_c.coeffs).max() < 1e-8
    with pytest.raises(ConfigError):
        dg.solve_reference(m, A, pen, f, method="magic")


def test_cg_failure_surfaces_as_numerical_error():
    m = mesh.Mesh(mesh.unit_square(), 3)
    A = coefficient.constant(m, 1.0)
    pen = dg.PenaltyRule()
    with pytest.raises(NumericalError):
        dg.solve_reference(m, A, pen, lambda x, y: np.ones_like(x),
                           method="cg", rtol=1e-13, maxit=3)


def test_face_identity_suite_runtime_and_accuracy():
    rng = np.random.default_rng(12)
    res = dg.verify_face_identities(rng.standard_normal((10_000, 6)))
    assert res < 1e-13
