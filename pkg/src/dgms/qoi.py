"""Goal-oriented error control for linear output functionals.

Outputs have the form G(v) = int g v. Because the bilinear form is
symmetric the dual (adjoint) problem is solved with the same operator,
only the load changes. The output gap of the multiscale solution admits
the duality bound

    |G(u_h) - G(u_ms)| = |a_h(u_h - u_ms, z_h - z_ms)|
                       <= ||u_h - u_ms||_a ||z_h - z_ms||_a

by Galerkin orthogonality in both the primal and the dual solve, with
||.||_a the norm induced by the (positive definite) stiffness matrix.
"""

import numpy as np

from . import dg, multiscale
from .errors import ConfigError


def _load(mesh, g):
    return dg.assemble_load(mesh, g)


def solve_dual_reference(ws, g, rtol=1e-10, method="direct"):
    """Fine-mesh dual solve a_h(v, z) = int g v for all v."""
    b = _load(ws.hier.fine, g)
    return dg.solve_operator(ws.op, b, rtol=rtol, method=method)


def solve_dual_msfem(ws, basis, g, rtol=1e-8):
    """Dual solve in the multiscale space."""
    return multiscale.solve_msfem(ws, basis, g, rtol=rtol)


def functional_value(mesh, g, v):
    """G(v) = int g v for a callable or DGFunction weight g."""
    return float(_load(mesh, g) @ v.coeffs)


def operator_norm(ws, v):
    """Norm induced by the full SIP matrix (includes the consistency part)."""
    x = v.coeffs if isinstance(v, dg.DGFunction) else np.asarray(v, dtype=float)
    return float(np.sqrt(max(x @ (ws.op.matrix @ x), 0.0)))


def qoi_error_bound(ws, basis, f, g, rtol=1e-8):
    """Exact output gap and its duality product bound.

    Returns (gap, bound) with gap = |G(u_h) - G(u_ms)| and bound the
    product of the primal and dual operator-norm errors.
    """
    u_ref, _ = dg.solve_operator(ws.op, dg.assemble_load(ws.hier.fine, f))
    z_ref, _ = dg.solve_operator(ws.op, _load(ws.hier.fine, g))
    u_ms = multiscale.solve_msfem(ws, basis, f, rtol=rtol).u
    z_ms = solve_dual_msfem(ws, basis, g, rtol=rtol).u
    e_u = dg.DGFunction(ws.hier.fine, u_ref.coeffs - u_ms.coeffs)
    # evaluate the gap as G(u_h - u_ms): algebraically identical to the
    # difference of the two functional values, but free of the cancellation
    # that subtracting O(1) numbers incurs when the gap is tiny
    gap = abs(functional_value(ws.hier.fine, g, e_u))
    e_z = dg.DGFunction(ws.hier.fine, z_ref.coeffs - z_ms.coeffs)
    bound = operator_norm(ws, e_u) * operator_norm(ws, e_z)
    return gap, bound


def l2_error_estimate(ws, u_ref, u_ms):
    """A posteriori L2 estimate H * |||u_h - u_ms||| next to the measured error.

    Returns (estimate, measured).
    """
    if u_ref.mesh is not ws.hier.fine or u_ms.mesh is not ws.hier.fine:
        raise ConfigError("both functions must live on the hierarchy's fine mesh")
    err = dg.DGFunction(ws.hier.fine, u_ref.coeffs - u_ms.coeffs)
    estimate = ws.hier.coarse_H * ws.op.energy_norm(err)
    measured = dg.l2_norm(err)
    return estimate, measured
