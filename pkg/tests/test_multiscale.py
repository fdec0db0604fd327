import numpy as np
import pytest

import oracles
from dgms import coefficient, dg, mesh, multiscale, projection
from dgms.errors import ConfigError


def make_ws(domain=None, coarse=2, fine=4, seed=None, contrast=None):
    dom = domain if domain is not None else mesh.unit_square()
    hier = mesh.build_hierarchy(dom, coarse, fine)
    if seed is not None:
        vals = np.random.default_rng(seed).uniform(0.5, 2.0, hier.fine.nel)
        A = coefficient.Coefficient(hier.fine, vals)
    elif contrast is not None:
        A = coefficient.periodic_stripes(hier.fine, 2.0 ** -(fine - 1), 1.0 / contrast, 1.0)
    else:
        A = coefficient.constant(hier.fine, 1.0)
    return multiscale.assemble_workspace(hier, A, dg.PenaltyRule())


def benchmark_f(x, y):
    return 1.0 + np.cos(2 * np.pi * x) * np.cos(2 * np.pi * y)


def test_corrector_matches_dense_oracle():
    ws = make_ws(coarse=1, fine=2, seed=0)
    for T, j, L in ((0, 0, 1), (2, 3, 2)):
        c = multiscale.corrector(ws, T, j, L)
        ref = oracles.dense_corrector(ws.hier, ws.A.values, 10.0, T, j, L)
        assert np.abs(c.phi.coeffs - ref).max() < 1e-10


def test_corrector_is_fine_scale():
    ws = make_ws(seed=1)
    c = multiscale.corrector(ws, 5, 1, 2)
    pi_phi = ws.maps.project @ c.phi.coeffs
    assert np.linalg.norm(pi_phi) <= 1e-10 * ws.op.energy_norm(c.phi)


def test_corrector_galerkin_orthogonality():
    # a_h(lambda - phi, v) = 0 for fine-scale v supported in the patch
    ws = make_ws(seed=2)
    T, j, L = 5, 2, 2
    c = multiscale.corrector(ws, T, j, L)
    lam = np.asarray(ws.maps.inject[:, 4 * T + j].todense()).ravel()
    psi = lam - c.phi.coeffs
    pt = c.patch
    pdofs = mesh.element_dofs(pt.fine_elements)
    cm = projection.constraint_matrix(ws.maps, pt)
    q, _ = np.linalg.qr(cm.matrix.toarray().T, mode="reduced")
    for seed in range(3):
        # random patch-local vector with the constraint rows projected out
        loc = np.random.default_rng(seed).standard_normal(len(pdofs))
        loc -= q @ (q.T @ loc)
        test = np.zeros_like(psi)
        test[pdofs] = loc
        val = psi @ (ws.op.matrix @ test)
        scale = ws.op.energy_norm(dg.DGFunction(ws.hier.fine, test))
        assert abs(val) <= 1e-9 * max(scale, 1.0) * ws.op.energy_norm(c.phi)


def test_patch_factorization_reused_when_saturated():
    ws = make_ws(coarse=1, fine=3)
    solver = multiscale.CorrectorSolver(ws)
    L = multiscale.saturation_radius(ws.hier)
    for T in range(ws.hier.coarse.nel):
        solver.solve_element(T, L)
    assert len(solver._cache) == 1


def test_basis_columns_supported_on_patches():
    ws = make_ws(coarse=3, fine=4)
    basis = multiscale.build_ms_space(ws, 2)
    T = 20
    col = basis.column(T, 0)
    outside = np.ones(ws.hier.fine.nel, dtype=bool)
    outside[basis.patches[T].fine_elements] = False
    dofs = mesh.element_dofs(np.nonzero(outside)[0])
    assert np.abs(col[dofs]).max() == 0.0
    assert basis.stability.shape == (basis.ncols,)
    assert np.all(basis.stability > 0.0)


def test_ideal_method_reproduces_reference_for_coarse_rhs():
    for coarse in (1, 2, 3):
        ws = make_ws(coarse=coarse, fine=4, seed=4)
        hier = ws.hier
        b = dg.assemble_load(hier.fine, benchmark_f)
        M = dg.assemble_mass(hier.fine)
        import scipy.sparse.linalg as spla

        fh = dg.DGFunction(hier.fine, spla.spsolve(M.tocsc(), b))
        fH = projection.inject_coarse(
            ws.maps, projection.project_coarse(ws.maps, fh)
        )
        u_ref, _ = dg.solve_operator(ws.op, dg.assemble_load(hier.fine, fH))
        sol, _ = multiscale.solve_ideal_msfem(ws, fH)
        err = dg.DGFunction(hier.fine, u_ref.coeffs - sol.u.coeffs)
        assert ws.op.energy_norm(err) <= 1e-8 * ws.op.energy_norm(u_ref)


def test_localization_error_decreases():
    ws = make_ws(coarse=3, fine=5)
    u_ref, _ = dg.solve_operator(ws.op, dg.assemble_load(ws.hier.fine, benchmark_f))
    den = ws.op.energy_norm(u_ref)
    errs = []
    for L in (1, 3, 5, multiscale.saturation_radius(ws.hier)):
        sol = multiscale.solve_msfem(ws, multiscale.build_ms_space(ws, L), benchmark_f)
        e = dg.DGFunction(ws.hier.fine, u_ref.coeffs - sol.u.coeffs)
        errs.append(ws.op.energy_norm(e) / den)
    assert errs[1] < errs[0]
    assert errs[2] < errs[1]
    assert errs[3] < 0.01


def test_global_budget_guard():
    ws = make_ws(coarse=2, fine=4)
    with pytest.raises(ConfigError):
        multiscale.global_corrector(ws, 0, 0, budget=10)
    c = multiscale.global_corrector(ws, 0, 0, budget=10, force=True)
    assert c.patch.members.shape[0] == ws.hier.coarse.nel
    with pytest.raises(ConfigError):
        multiscale.solve_ideal_msfem(ws, benchmark_f, budget=10)


def test_threaded_build_matches_serial():
    ws = make_ws(coarse=2, fine=4, seed=5)
    b1 = multiscale.build_ms_space(ws, 2, threads=1)
    b2 = multiscale.build_ms_space(ws, 2, threads=3)
    assert np.abs((b1.psi - b2.psi)).max() == 0.0


def test_decay_profile_monotone_and_fitted():
    ws = make_ws(coarse=4, fine=5)
    T = int(ws.hier.coarse.elem_id[8, 8])
    corr = multiscale.global_corrector(ws, T, 0)
    prof = multiscale.decay_profile(ws, corr, 6)
    assert np.all(np.diff(prof.tails) <= 0.0)
    assert prof.gamma is not None and prof.gamma < 1.0


def test_decay_profile_refuses_short_fit():
    ws = make_ws(coarse=1, fine=3)
    corr = multiscale.global_corrector(ws, 0, 0)
    with pytest.raises(ConfigError):
        multiscale.decay_profile(ws, corr, 2)
    prof = multiscale.decay_profile(ws, corr, 2, fit=False)
    assert prof.gamma is None


def test_compressed_space_tol_zero_keeps_accuracy():
    ws = make_ws(coarse=2, fine=4, seed=6)
    basis = multiscale.build_ms_space(ws, 2)
    u_ref, _ = dg.solve_operator(ws.op, dg.assemble_load(ws.hier.fine, benchmark_f))
    sol = multiscale.solve_msfem(ws, basis, benchmark_f)
    cb = multiscale.compress_space(ws, basis, svd_tol=0.0)
    solc = multiscale.solve_compressed(ws, cb, benchmark_f)
    e_ms = ws.op.energy_norm(
        dg.DGFunction(ws.hier.fine, u_ref.coeffs - sol.u.coeffs)
    )
    e_c = ws.op.energy_norm(
        dg.DGFunction(ws.hier.fine, u_ref.coeffs - solc.u.coeffs)
    )
    assert e_c <= e_ms + 1e-9


def test_compressed_space_truncation_reduces_dimension():
    ws = make_ws(coarse=2, fine=4, seed=7)
    basis = multiscale.build_ms_space(ws, 2)
    cb0 = multiscale.compress_space(ws, basis, svd_tol=0.0)
    cb1 = multiscale.compress_space(ws, basis, svd_tol=1e-1)
    assert cb1.psi.shape[1] < cb0.psi.shape[1]
    for sv in cb0.singular_values:
        assert np.all(np.diff(sv) <= 1e-12)


def test_corrector_cache_roundtrip(tmp_path):
    ws = make_ws(coarse=2, fine=3, seed=8)
    path = tmp_path / "correctors.npz"
    cache = multiscale.CorrectorCache(path, ws.key())
    b1 = multiscale.build_ms_space(ws, 2, cache=cache)
    assert path.exists()
    # reload: everything served from disk, no factorizations needed
    cache2 = multiscale.CorrectorCache(path, ws.key())
    b2 = multiscale.build_ms_space(ws, 2, cache=cache2)
    assert np.abs((b1.psi - b2.psi)).max() == 0.0
    # a different workspace key invalidates the cache
    cache3 = multiscale.CorrectorCache(path, "different")
    assert cache3.get(0, 2) is None


def test_workspace_key_sensitivity():
    ws1 = make_ws(coarse=2, fine=3, seed=9)
    ws2 = make_ws(coarse=2, fine=3, seed=10)
    ws3 = make_ws(coarse=2, fine=3, seed=9)
    assert ws1.key() != ws2.key()
    assert ws1.key() == ws3.key()


def test_workspace_rejects_foreign_coefficient():
    hier = mesh.build_hierarchy(mesh.unit_square(), 2, 3)
    other = mesh.Mesh(mesh.unit_square(), 3)
    A = coefficient.constant(other, 1.0)
    with pytest.raises(ConfigError):
        multiscale.assemble_workspace(hier, A, dg.PenaltyRule())
