"""Symmetric interior penalty assembly on uniform quadrilateral meshes.

Functions are element-wise bilinear (Q1), 4 coefficients per element in
vertex order (0,0),(1,0),(0,1),(1,1) on the reference square. The
bilinear form is the coercive SIP variant

    a_h(u,v) = (A grad u, grad v) - sum_e ( ({A dn u},[v]) + ({A dn v},[u])
               - sigma_e/h_e ([u],[v]) )

over interior and Dirichlet faces; Neumann faces carry no face terms.
On a uniform mesh the face length equals the element width, so the 1/h
derivative scaling cancels against the face measure and all face blocks
are width-independent.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from numpy.polynomial.legendre import leggauss

from .errors import ConfigError, NumericalError
from .linalg import block_jacobi, cg_solve
from .mesh import DIRICHLET, INTERIOR, NEUMANN


def _gauss01(n):
    x, w = leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def shape_q1(xi, eta):
    """Q1 vertex basis values, shape (npts, 4)."""
    xi = np.asarray(xi, dtype=float)
    eta = np.asarray(eta, dtype=float)
    return np.stack(
        [(1 - xi) * (1 - eta), xi * (1 - eta), (1 - xi) * eta, xi * eta], axis=-1
    )


def dshape_q1(xi, eta):
    """Reference gradients, shape (npts, 4, 2)."""
    xi = np.asarray(xi, dtype=float)
    eta = np.asarray(eta, dtype=float)
    dxi = np.stack([-(1 - eta), (1 - eta), -eta, eta], axis=-1)
    deta = np.stack([-(1 - xi), -xi, (1 - xi), xi], axis=-1)
    return np.stack([dxi, deta], axis=-1)


def _reference_matrices():
    q, w = _gauss01(3)
    X, Y = np.meshgrid(q, q, indexing="ij")
    W = np.outer(w, w).ravel()
    xs, ys = X.ravel(), Y.ravel()
    N = shape_q1(xs, ys)
    D = dshape_q1(xs, ys)
    K = np.einsum("q,qid,qjd->ij", W, D, D)
    M = np.einsum("q,qi,qj->ij", W, N, N)
    return K, M


K_REF, M_REF = _reference_matrices()

# Face quadrature tables. For axis 0 (vertical faces, normal +-x) the face
# parameter runs along eta; side s is the xi=s edge of the element.
_FQ, _FW = _gauss01(3)


def _face_tables():
    trace = {0: {}, 1: {}}
    dn = {0: {}, 1: {}}
    for s in (0, 1):
        t = _FQ
        trace[0][s] = shape_q1(np.full_like(t, float(s)), t)
        trace[1][s] = shape_q1(t, np.full_like(t, float(s)))
        dn[0][s] = dshape_q1(np.full_like(t, float(s)), t)[:, :, 0]
        dn[1][s] = dshape_q1(t, np.full_like(t, float(s)))[:, :, 1]
    TT, DT = {0: {}, 1: {}}, {0: {}, 1: {}}
    for a in (0, 1):
        for s1 in (0, 1):
            for s2 in (0, 1):
                TT[a][s1, s2] = np.einsum("q,qi,qj->ij", _FW, trace[a][s1], trace[a][s2])
                DT[a][s1, s2] = np.einsum("q,qi,qj->ij", _FW, dn[a][s1], trace[a][s2])
    return trace, dn, TT, DT


FACE_TRACE, FACE_DN, _TT, _DT = _face_tables()


@dataclass(frozen=True)
class PenaltyRule:
    """Penalty sigma_e = sigma0 * max(A-, A+) in weighted mode, sigma0 in plain."""

    sigma0: float = 10.0
    mode: str = "weighted"

    def __post_init__(self):
        if self.sigma0 <= 0.0:
            raise ConfigError(f"penalty sigma0 must be positive, got {self.sigma0}")
        if self.mode not in ("weighted", "plain"):
            raise ConfigError(f"unknown penalty mode {self.mode!r}")

    def sigma(self, a_minus, a_plus):
        if self.mode == "plain":
            return self.sigma0 * np.ones_like(np.asarray(a_minus, dtype=float))
        return self.sigma0 * np.maximum(a_minus, a_plus)


@dataclass
class DGFunction:
    """Fully discontinuous element-wise bilinear function."""

    mesh: object
    coeffs: np.ndarray

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        if len(self.coeffs) != self.mesh.ndof:
            raise ConfigError("coefficient vector length does not match mesh")

    def element_values(self, e):
        return self.coeffs[4 * e : 4 * e + 4]

    def copy(self):
        return DGFunction(self.mesh, self.coeffs.copy())


def zero_function(mesh):
    return DGFunction(mesh, np.zeros(mesh.ndof))


def interpolate(mesh, f):
    """Element-wise vertex interpolation of a callable f(x, y)."""
    verts = np.array([(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0)])
    w = mesh.width
    x = (mesh.coords[:, 0:1] + verts[:, 0]) * w
    y = (mesh.coords[:, 1:2] + verts[:, 1]) * w
    return DGFunction(mesh, np.asarray(f(x, y), dtype=float).ravel())


def evaluate(v, x, y):
    """Point evaluation; points on element edges use the cell to the upper right
    of the point (clipped at the domain boundary), consistent but arbitrary for
    a discontinuous function."""
    mesh = v.mesh
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    w = mesh.width
    ix = np.clip((x / w).astype(int), 0, mesh.n - 1)
    iy = np.clip((y / w).astype(int), 0, mesh.n - 1)
    e = mesh.elem_id[ix, iy]
    if np.any(e < 0):
        raise ConfigError("evaluation point outside the domain")
    xi = x / w - ix
    eta = y / w - iy
    N = shape_q1(xi, eta)
    vals = np.einsum("pi,pi->p", N, v.coeffs.reshape(-1, 4)[e])
    return vals if vals.size > 1 else float(vals[0])


def _trace_values(v, f, s):
    """Traces of v on face f at parameters s in [0,1]: (minus, plus or None)."""
    mesh = v.mesh
    a = int(mesh.face_axis[f])
    em = int(mesh.face_minus[f])
    ep = int(mesh.face_plus[f])
    s = np.atleast_1d(np.asarray(s, dtype=float))
    if a == 0:
        Nm = shape_q1(np.full_like(s, float(mesh.face_mside[f])), s)
        Np = shape_q1(np.zeros_like(s), s)
    else:
        Nm = shape_q1(s, np.full_like(s, float(mesh.face_mside[f])))
        Np = shape_q1(s, np.zeros_like(s))
    tm = Nm @ v.element_values(em)
    if ep < 0:
        return tm, None
    tp = Np @ v.element_values(ep)
    return tm, tp


def jump(v, f, s):
    """Jump [v] on face f at parameters s (one-sided on the boundary)."""
    tm, tp = _trace_values(v, f, s)
    return tm if tp is None else tm - tp


def average(v, f, s):
    """Average {v} on face f at parameters s (one-sided on the boundary)."""
    tm, tp = _trace_values(v, f, s)
    return tm if tp is None else 0.5 * (tm + tp)


class SipOperator:
    """Assembled SIP form with its volume/consistency/penalty parts kept
    separate so the energy norm (volume + penalty) is available exactly."""

    def __init__(self, mesh, volume, consistency, penalty, pen, avals, scope=None):
        self.mesh = mesh
        self.volume = volume
        self.consistency = consistency
        self.penalty = penalty
        self.matrix = (volume - consistency + penalty).tocsr()
        self.pen = pen
        self.avals = avals
        self.scope = scope
        self._energy = None

    @property
    def energy_matrix(self):
        if self._energy is None:
            self._energy = (self.volume + self.penalty).tocsr()
        return self._energy

    def _vec(self, v):
        return v.coeffs if isinstance(v, DGFunction) else np.asarray(v, dtype=float)

    def apply(self, v):
        return self.matrix @ self._vec(v)

    def bilinear(self, u, v):
        return float(self._vec(u) @ (self.matrix @ self._vec(v)))

    def energy_norm(self, v):
        x = self._vec(v)
        return float(np.sqrt(max(x @ (self.energy_matrix @ x), 0.0)))

    def jump_seminorm(self, v):
        x = self._vec(v)
        return float(np.sqrt(max(x @ (self.penalty @ x), 0.0)))


def _coo_blocks(rows_el, cols_el, vals):
    """Expand per-face 4x4 blocks into COO triplets."""
    nf = len(rows_el)
    jj, ii = np.meshgrid(np.arange(4), np.arange(4), indexing="ij")
    rows = (4 * rows_el[:, None, None] + jj[None]).ravel()
    cols = (4 * cols_el[:, None, None] + ii[None]).ravel()
    return rows, cols, vals.reshape(nf * 16)


def assemble_sip(scope, A, pen):
    """Assemble the SIP operator on a Mesh or on a Patch of a hierarchy.

    On a patch, trial and test functions are extended by zero outside, so
    every face meeting the patch closure contributes with the exterior
    trace set to zero (Dirichlet-type penalization on the patch boundary).
    """
    from .mesh import Patch  # local import to avoid cycle in type check

    if isinstance(scope, Patch):
        mesh = A.mesh
        mask = np.zeros(mesh.nel, dtype=bool)
        mask[scope.fine_elements] = True
    else:
        mesh = scope
        mask = None
    if A.mesh is not mesh:
        raise ConfigError("coefficient is defined on a different mesh")
    vol, cons, penm = assemble_sip_parts(mesh, A.values, pen, elem_mask=mask)
    return SipOperator(mesh, vol, cons, penm, pen, A.values, scope=scope)


def assemble_sip_parts(mesh, avals, pen, elem_mask=None):
    """Volume, consistency and penalty matrices as separate CSR factors."""
    nd = mesh.ndof
    avals = np.asarray(avals, dtype=float)

    if elem_mask is None:
        inc = np.ones(mesh.nel, dtype=bool)
    else:
        inc = elem_mask

    # volume part: block diagonal a_T * K_REF
    els = np.nonzero(inc)[0]
    vol_vals = avals[els, None, None] * K_REF[None]
    vr, vc, vv = _coo_blocks(els, els, vol_vals)
    volume = sp.coo_matrix((vv, (vr, vc)), shape=(nd, nd)).tocsr()

    crows, ccols, cvals = [], [], []
    prows, pcols, pvals = [], [], []

    def add(rows_el, cols_el, vals, target):
        if len(rows_el) == 0:
            return
        r, c, v = _coo_blocks(rows_el, cols_el, vals)
        target[0].append(r)
        target[1].append(c)
        target[2].append(v)

    cons_t = (crows, ccols, cvals)
    pen_t = (prows, pcols, pvals)

    tags = mesh.face_tags
    interior = mesh.face_plus >= 0
    for a in (0, 1):
        sel = np.nonzero(interior & (mesh.face_axis == a))[0]
        if len(sel):
            em = mesh.face_minus[sel]
            ep = mesh.face_plus[sel]
            am = avals[em]
            ap = avals[ep]
            se = pen.sigma(am, ap)
            im, ip = inc[em], inc[ep]
            DT, TT = _DT[a], _TT[a]
            # (row side, col side) -> (elements, consistency block, penalty block)
            blocks = {
                ("m", "m"): (em, em, im, 0.5 * am[:, None, None] * (DT[1, 1].T + DT[1, 1]),
                             se[:, None, None] * TT[1, 1]),
                ("m", "p"): (em, ep, im & ip,
                             0.5 * ap[:, None, None] * DT[0, 1].T
                             - 0.5 * am[:, None, None] * DT[1, 0],
                             -se[:, None, None] * TT[1, 0]),
                ("p", "m"): (ep, em, im & ip,
                             -0.5 * am[:, None, None] * DT[1, 0].T
                             + 0.5 * ap[:, None, None] * DT[0, 1],
                             -se[:, None, None] * TT[0, 1]),
                ("p", "p"): (ep, ep, ip,
                             -0.5 * ap[:, None, None] * (DT[0, 0].T + DT[0, 0]),
                             se[:, None, None] * TT[0, 0]),
            }
            for (_, _), (re, ce, keep, cb, pb) in blocks.items():
                add(re[keep], ce[keep], cb[keep], cons_t)
                add(re[keep], ce[keep], pb[keep], pen_t)

    for a in (0, 1):
        for s in (0, 1):
            sel = np.nonzero(
                (tags == DIRICHLET) & (mesh.face_axis == a) & (mesh.face_mside == s)
            )[0]
            if not len(sel):
                continue
            em = mesh.face_minus[sel]
            keep = inc[em]
            sel, em = sel[keep], em[keep]
            if not len(sel):
                continue
            am = avals[em]
            se = pen.sigma(am, am)
            nsign = -1.0 if s == 0 else 1.0
            DTss, TTss = _DT[a][s, s], _TT[a][s, s]
            cb = nsign * am[:, None, None] * (DTss.T + DTss)[None]
            pb = se[:, None, None] * TTss[None]
            add(em, em, cb, cons_t)
            add(em, em, pb, pen_t)

    def build(triplets):
        if not triplets[0]:
            return sp.csr_matrix((nd, nd))
        return sp.coo_matrix(
            (np.concatenate(triplets[2]),
             (np.concatenate(triplets[0]), np.concatenate(triplets[1]))),
            shape=(nd, nd),
        ).tocsr()

    return volume, build(cons_t), build(pen_t)


def assemble_mass(mesh):
    """Block-diagonal L2 mass matrix."""
    els = np.arange(mesh.nel)
    vals = np.broadcast_to(mesh.width**2 * M_REF, (mesh.nel, 4, 4))
    r, c, v = _coo_blocks(els, els, np.ascontiguousarray(vals))
    return sp.coo_matrix((v, (r, c)), shape=(mesh.ndof, mesh.ndof)).tocsr()


def l2_norm(v):
    x = v.coeffs.reshape(-1, 4)
    return float(np.sqrt(max(np.einsum("pi,ij,pj->", x, M_REF, x) * v.mesh.width**2, 0.0)))


def l2_inner(u, v):
    x = u.coeffs.reshape(-1, 4)
    y = v.coeffs.reshape(-1, 4)
    return float(np.einsum("pi,ij,pj->", x, M_REF, y) * u.mesh.width**2)


def assemble_load(mesh, f, order=5):
    """Load vector with entries int_T f lambda_{T,j} by tensor Gauss rules."""
    if isinstance(f, DGFunction):
        if f.mesh is not mesh:
            raise ConfigError("load DGFunction lives on a different mesh")
        return assemble_mass(mesh) @ f.coeffs
    q, wq = _gauss01(order)
    X, Y = np.meshgrid(q, q, indexing="ij")
    W = np.outer(wq, wq).ravel()
    xs, ys = X.ravel(), Y.ravel()
    N = shape_q1(xs, ys)  # (nq, 4)
    w = mesh.width
    px = (mesh.coords[:, 0:1] + xs[None, :]) * w  # (nel, nq)
    py = (mesh.coords[:, 1:2] + ys[None, :]) * w
    fv = np.asarray(f(px, py), dtype=float)
    loc = np.einsum("q,pq,qi->pi", W, fv, N) * w**2
    return loc.ravel()


def energy_norm(v, A, pen):
    op = assemble_sip(v.mesh, A, pen)
    return op.energy_norm(v)


def jump_seminorm(v, A, pen):
    op = assemble_sip(v.mesh, A, pen)
    return op.jump_seminorm(v)


def element_volume_energies(op, v):
    """Per-element values of a_T |A^1/2 grad v|^2 integrated over T."""
    x = op._vec(v).reshape(-1, 4)
    return op.avals * np.einsum("pi,ij,pj->p", x, K_REF, x)


def face_penalty_energies(op, v):
    """Per-face penalty energies sigma_e/h_e ||[v]||^2; zero on Neumann faces."""
    mesh = op.mesh
    x = op._vec(v).reshape(-1, 4)
    out = np.zeros(mesh.nfaces)
    tags = mesh.face_tags
    interior = mesh.face_plus >= 0
    for a in (0, 1):
        sel = np.nonzero(interior & (mesh.face_axis == a))[0]
        if len(sel):
            em, ep = mesh.face_minus[sel], mesh.face_plus[sel]
            se = op.pen.sigma(op.avals[em], op.avals[ep])
            jm = x[em] @ FACE_TRACE[a][1].T - x[ep] @ FACE_TRACE[a][0].T  # (nf, nq)
            out[sel] = se * np.einsum("q,fq->f", _FW, jm**2)
        for s in (0, 1):
            bsel = np.nonzero(
                (tags == DIRICHLET) & (mesh.face_axis == a) & (mesh.face_mside == s)
            )[0]
            if len(bsel):
                em = mesh.face_minus[bsel]
                se = op.pen.sigma(op.avals[em], op.avals[em])
                jm = x[em] @ FACE_TRACE[a][s].T
                out[bsel] = se * np.einsum("q,fq->f", _FW, jm**2)
    return out


def solve_reference(hier, A, pen, f, rtol=1e-10, method="direct", maxit=None):
    """Fine-mesh SIP solve; returns (DGFunction, info dict).

    method 'direct' uses a sparse LU factorization; 'cg' uses conjugate
    gradients with an element-block Jacobi preconditioner. Both verify the
    final residual against rtol.
    """
    mesh = hier.fine if hasattr(hier, "fine") else hier
    op = assemble_sip(mesh, A, pen)
    b = assemble_load(mesh, f)
    return solve_operator(op, b, rtol=rtol, method=method, maxit=maxit)


def solve_operator(op, b, rtol=1e-10, method="direct", maxit=None):
    mesh = op.mesh
    nb = np.linalg.norm(b)
    if nb == 0.0:
        return DGFunction(mesh, np.zeros(mesh.ndof)), {"iterations": 0, "residual": 0.0}
    if method == "cg":
        precond = block_jacobi(op.matrix)
        x, iters = cg_solve(op.matrix, b, precond=precond, rtol=rtol, maxit=maxit)
    elif method == "direct":
        lu = spla.splu(op.matrix.tocsc())
        x = lu.solve(b)
        iters = 0
    else:
        raise ConfigError(f"unknown solver method {method!r}")
    res = float(np.linalg.norm(op.matrix @ x - b) / nb)
    if not np.isfinite(res) or res > max(rtol, 1e-9):
        raise NumericalError("reference solve residual too large", residual=res)
    return DGFunction(mesh, x), {"iterations": iters, "residual": res}


def verify_face_identities(samples):
    """Max residual of the jump/average product identities on trace tuples.

    `samples` has shape (n, 6) with columns (v-, v+, w-, w+, u-, u+).
    """
    S = np.atleast_2d(np.asarray(samples, dtype=float))
    vm, vp, wm, wp, um, up = (S[:, k] for k in range(6))

    def J(am, ap):
        return am - ap

    def Av(am, ap):
        return 0.5 * (am + ap)

    jv, av = J(vm, vp), Av(vm, vp)
    jw, aw = J(wm, wp), Av(wm, wp)
    ju, au = J(um, up), Av(um, up)
    jvu, avw = J(vm * um, vp * up), Av(vm * wm, vp * wp)
    jv2u = J(vm**2 * um, vp**2 * up)
    av2w = Av(vm**2 * wm, vp**2 * wp)

    # the first identity's published final line drops a v^2 factor; the
    # correct right-hand side is reconstructed from its derivation
    r1 = avw * jvu - (
        aw * jv2u - jv * aw * av * au - 0.25 * jv**2 * aw * ju
        + 0.25 * jv**2 * jw * au + 0.25 * jv * av * jw * ju
    )
    r2 = avw * jvu - (
        av2w * ju - 0.25 * jv**2 * aw * ju - 0.25 * jv * av * jw * ju
        + jv * av * aw * au + 0.25 * jv**2 * jw * au
    )
    r3 = 2.0 * avw * jvu - (
        aw * jv2u + av2w * ju + 0.5 * jv**2 * jw * au - 0.5 * jv**2 * aw * ju
    )
    r4 = jvu**2 - (ju * jv2u - 0.25 * jv**2 * ju**2 + jv**2 * au**2)
    return float(max(np.abs(r).max() for r in (r1, r2, r3, r4)))
