"""Coarse L2 projection, injection, fine-scale splitting and constraints.

All operators are element-local on the coarse mesh: the projection solves
one 4x4 coarse mass system per coarse element, assembled from exact child
couplings (a coarse Q1 function restricted to a child cell is again Q1, so
vertex interpolation is exact).
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .dg import DGFunction, M_REF, shape_q1
from .errors import ConfigError
from .mesh import element_dofs


@dataclass(frozen=True)
class CoarseFineMap:
    """Precomputed projection/injection/moment operators of a hierarchy."""

    hier: object
    project: sp.csr_matrix  # coarse dofs x fine dofs, v -> Pi_H v
    inject: sp.csr_matrix  # fine dofs x coarse dofs, exact embedding
    moments: sp.csr_matrix  # coarse dofs x fine dofs, rows int lambda_{T,i} v


def _child_tables(r):
    """Per child slot (row-major (cy, cx)): interpolation E and blocks."""
    E = np.empty((r * r, 4, 4))
    verts = np.array([(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0)])
    k = 0
    for cy in range(r):
        for cx in range(r):
            xi = (cx + verts[:, 0]) / r
            eta = (cy + verts[:, 1]) / r
            E[k] = shape_q1(xi, eta)  # (vertex m, coarse basis i)
            k += 1
    return E


def build_maps(hier):
    if hier.ratio < 2:
        raise ConfigError("hierarchy needs at least one refinement (fine > coarse)")
    r = hier.ratio
    E = _child_tables(r)
    w2 = hier.fine.width ** 2
    # moments block: B[i, k] = int_child lambda_{C,i} N_k = (E^T M_REF)_{ik} w^2
    B = np.einsum("cmi,mk->cik", E, M_REF) * w2
    Minv = np.linalg.inv(M_REF) / hier.coarse.width ** 2
    P = np.einsum("ij,cjk->cik", Minv, B)

    nT, nt = hier.coarse.nel, hier.fine.nel
    nslots = r * r
    Ts = np.repeat(np.arange(nT), nslots)
    ts = hier.children.ravel()
    slots = np.tile(np.arange(nslots), nT)

    jj, ii = np.meshgrid(np.arange(4), np.arange(4), indexing="ij")
    crow = (4 * Ts[:, None, None] + jj[None]).ravel()
    fcol = (4 * ts[:, None, None] + ii[None]).ravel()

    Pmat = sp.coo_matrix(
        (P[slots].reshape(-1), (crow, fcol)), shape=(4 * nT, 4 * nt)
    ).tocsr()
    Bmat = sp.coo_matrix(
        (B[slots].reshape(-1), (crow, fcol)), shape=(4 * nT, 4 * nt)
    ).tocsr()
    # injection block at (fine rows m, coarse cols i) is E itself
    frow = (4 * ts[:, None, None] + jj[None]).ravel()
    ccol = (4 * Ts[:, None, None] + ii[None]).ravel()
    Inj = sp.coo_matrix(
        (E[slots].reshape(-1), (frow, ccol)), shape=(4 * nt, 4 * nT)
    ).tocsr()
    return CoarseFineMap(hier, Pmat, Inj, Bmat)


def project_coarse(maps, v):
    """L2 projection of a fine function onto the coarse dG space."""
    if v.mesh is not maps.hier.fine:
        raise ConfigError("function is not on the hierarchy's fine mesh")
    return DGFunction(maps.hier.coarse, maps.project @ v.coeffs)


def inject_coarse(maps, w):
    """Exact fine-mesh representation of a coarse function."""
    if w.mesh is not maps.hier.coarse:
        raise ConfigError("function is not on the hierarchy's coarse mesh")
    return DGFunction(maps.hier.fine, maps.inject @ w.coeffs)


def fine_scale_part(maps, v):
    """v minus the injected coarse projection; lies in ker Pi_H."""
    return DGFunction(
        maps.hier.fine, v.coeffs - maps.inject @ (maps.project @ v.coeffs)
    )


def project_p0(v):
    """Element means of a dG function on its own mesh."""
    return v.coeffs.reshape(-1, 4).mean(axis=1)


@dataclass(frozen=True)
class ConstraintMatrix:
    """Moment constraints of a patch: C v = 0 iff Pi_H v = 0 there.

    Columns are indexed locally by `fine_dofs`; rows by `coarse_dofs`.
    """

    patch: object
    matrix: sp.csr_matrix
    coarse_dofs: np.ndarray
    fine_dofs: np.ndarray


def constraint_matrix(maps, patch):
    if len(patch.members) == 0:
        raise ConfigError("empty patch")
    cdofs = element_dofs(patch.members)
    fdofs = element_dofs(patch.fine_elements)
    C = maps.moments[cdofs][:, fdofs].tocsr()
    return ConstraintMatrix(patch, C, cdofs, fdofs)
