"""Corrector problems, multiscale spaces and their Galerkin solves.

Correctors are computed per coarse element as constrained patch problems:
minimize the SIP energy mismatch subject to vanishing coarse moments,
solved as a KKT saddle system with one Lagrange multiplier per coarse
basis function in the patch. The four correctors of one coarse element
share a single factorization; patches with identical member sets (e.g.
when the patch saturates at the whole domain) reuse it as well.
"""

import hashlib
import threading
from collections import OrderedDict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from . import dg, projection
from .errors import ConfigError, NumericalError
from .linalg import KKTFactorization
from .mesh import element_dofs, patch as make_patch

DEFAULT_GLOBAL_BUDGET = 80_000  # fine dG unknowns for global corrector solves


@dataclass
class Workspace:
    """Assembled fine-level operators shared by all multiscale solves."""

    hier: object
    A: object
    pen: object
    op: dg.SipOperator
    maps: projection.CoarseFineMap

    def key(self):
        """Hash of (mesh, coefficient, penalty); used by the corrector cache."""
        h = hashlib.sha256()
        d = self.hier.domain
        h.update(
            f"{d.kind}|{d.neumann}|{d.dirichlet}|"
            f"{self.hier.coarse.level}|{self.hier.fine.level}|"
            f"{self.pen.sigma0!r}|{self.pen.mode}".encode()
        )
        h.update(np.ascontiguousarray(self.A.values).tobytes())
        return h.hexdigest()


def assemble_workspace(hier, A, pen, fine_op=None):
    if A.mesh is not hier.fine:
        raise ConfigError("coefficient must live on the hierarchy's fine mesh")
    if fine_op is None:
        fine_op = dg.assemble_sip(hier.fine, A, pen)
    maps = projection.build_maps(hier)
    return Workspace(hier, A, pen, fine_op, maps)


@dataclass
class Corrector:
    T: int
    j: int
    L: int
    phi: dg.DGFunction
    patch: object
    residual: float
    iterations: int = 0


class CorrectorSolver:
    """Per-workspace corrector factory with a bounded factorization cache."""

    def __init__(self, ws, rtol=1e-9, cache_size=4):
        self.ws = ws
        self.rtol = rtol
        self.cache_size = cache_size
        self._cache = OrderedDict()
        self._lock = threading.Lock()

    def _factorization(self, pt):
        key = pt.members.tobytes()
        with self._lock:
            hit = self._cache.get(key)
        if hit is not None:
            return hit
        K = self.ws.op.matrix
        pdofs = element_dofs(pt.fine_elements)
        Kpp = K[pdofs][:, pdofs]
        C = projection.constraint_matrix(self.ws.maps, pt)
        fact = KKTFactorization(Kpp, C.matrix)
        entry = (pdofs, fact)
        with self._lock:
            self._cache[key] = entry
            while len(self._cache) > self.cache_size:
                self._cache.popitem(last=False)
        return entry

    def solve_element(self, T, L):
        """All four correctors of coarse element T; returns (patch, pdofs, Phi)."""
        pt = make_patch(self.ws.hier, T, L)
        pdofs, fact = self._factorization(pt)
        K = self.ws.op.matrix
        ldofs = element_dofs(self.ws.hier.children[T])
        lam_block = self.ws.maps.inject[ldofs][:, 4 * T : 4 * T + 4].toarray()
        B = np.asarray((K[pdofs][:, ldofs] @ lam_block))
        Phi = np.empty((len(pdofs), 4))
        residual = 0.0
        for j in range(4):
            # fact.solve raises if the saddle residual exceeds rtol
            Phi[:, j], _ = fact.solve(B[:, j], rtol=self.rtol)
        return pt, pdofs, Phi, residual

    def corrector(self, T, j, L):
        pt, pdofs, Phi, res = self.solve_element(T, L)
        coeffs = np.zeros(self.ws.hier.fine.ndof)
        coeffs[pdofs] = Phi[:, j]
        return Corrector(T, j, L, dg.DGFunction(self.ws.hier.fine, coeffs), pt, res)


def corrector(ws, T, j, L, rtol=1e-9):
    """Localized corrector of coarse basis (T, j) on an L-layer patch."""
    return CorrectorSolver(ws, rtol=rtol).corrector(T, j, L)


def saturation_radius(hier):
    """Patch radius guaranteed to cover the whole domain from any element."""
    return hier.coarse.n


def global_corrector(ws, T, j, budget=DEFAULT_GLOBAL_BUDGET, force=False, rtol=1e-9):
    """Corrector with patch = whole domain; refuses on large meshes."""
    ndof = ws.hier.fine.ndof
    if ndof > budget and not force:
        raise ConfigError(
            f"global corrector on {ndof} fine unknowns exceeds budget {budget}; "
            "pass force=True to override"
        )
    c = corrector(ws, T, j, saturation_radius(ws.hier), rtol=rtol)
    return Corrector(c.T, c.j, -1, c.phi, c.patch, c.residual)


@dataclass
class MsBasis:
    """Corrected basis psi_{T,j} = inject(lambda_{T,j}) - phi^L_{T,j}.

    Column (T, j) sits at index 4*T + j, matching coarse dof ordering.
    """

    hier: object
    L: int
    psi: sp.csc_matrix  # fine dofs x (4 * n_coarse)
    phi: sp.csc_matrix
    patches: list
    stability: np.ndarray  # energy norms of the basis columns
    max_residual: float

    @property
    def ncols(self):
        return self.psi.shape[1]

    def column(self, T, j):
        return np.asarray(self.psi[:, 4 * T + j].todense()).ravel()


def build_ms_space(ws, L, threads=1, cache=None, rtol=1e-9):
    """Compute all correctors and assemble the multiscale basis."""
    hier = ws.hier
    nT = hier.coarse.nel
    solver = CorrectorSolver(ws, rtol=rtol)

    def work(T):
        if cache is not None:
            hit = cache.get(T, L)
            if hit is not None:
                pt = make_patch(hier, T, L)
                return pt, hit[0], hit[1], 0.0
        return solver.solve_element(T, L)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, range(nT)))
    else:
        results = [work(T) for T in range(nT)]

    rows, cols, vals = [], [], []
    patches = []
    max_res = 0.0
    for T, (pt, pdofs, Phi, res) in enumerate(results):
        patches.append(pt)
        max_res = max(max_res, res)
        for j in range(4):
            rows.append(pdofs)
            cols.append(np.full(len(pdofs), 4 * T + j))
            vals.append(Phi[:, j])
        if cache is not None:
            cache.put(T, L, pdofs, Phi)
    if cache is not None:
        cache.save()
    phi = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(hier.fine.ndof, 4 * nT),
    ).tocsc()
    psi = (ws.maps.inject - phi).tocsc()
    E = ws.op.energy_matrix
    stability = np.sqrt(np.maximum((psi.multiply(E @ psi)).sum(axis=0), 0.0))
    stability = np.asarray(stability).ravel()
    return MsBasis(hier, L, psi, phi, patches, stability, max_res)


def subspace_matrix(K, Psi, chunk=512):
    """Dense Psi^T K Psi computed in column blocks to bound memory."""
    n = Psi.shape[1]
    out = np.empty((n, n))
    PsiT = Psi.T.tocsr()
    for start in range(0, n, chunk):
        end = min(start + chunk, n)
        block = K @ Psi[:, start:end]
        out[:, start:end] = (PsiT @ block).toarray()
    return out


@dataclass
class MsSolution:
    coefficients: np.ndarray  # coefficients in the subspace basis
    u: dg.DGFunction
    residual: float
    iterations: int = 0


def _galerkin_solve(ws, Psi, b_fine, rtol=1e-8, label="multiscale"):
    K = ws.op.matrix
    bms = np.asarray(Psi.T @ b_fine).ravel()
    nb = np.linalg.norm(bms)
    if nb == 0.0:
        x = np.zeros(Psi.shape[1])
        return MsSolution(x, dg.DGFunction(ws.hier.fine, np.zeros(ws.hier.fine.ndof)), 0.0)
    Kms = subspace_matrix(K, Psi)
    # symmetric Jacobi scaling evens out the basis-column energies, and a
    # couple of refinement sweeps push the Galerkin residual (which breaks
    # orthogonality-based error bounds if left at factorization accuracy)
    # down to roundoff
    d = np.sqrt(np.abs(np.diag(Kms)))
    d[d == 0.0] = 1.0
    Ks = Kms / d[:, None] / d[None, :]
    bs = bms / d
    try:
        cho = scipy.linalg.cho_factor(Ks)
        y = scipy.linalg.cho_solve(cho, bs)
        y += scipy.linalg.cho_solve(cho, bs - Ks @ y)
        x = y / d
        # one refinement sweep against the true operator removes the
        # systematic part of the Galerkin defect left by rounding in the
        # formation of Kms, which otherwise breaks orthogonality-based
        # error identities at the roundoff level
        defect = np.asarray(Psi.T @ (b_fine - K @ (Psi @ x))).ravel()
        x += scipy.linalg.cho_solve(cho, defect / d) / d
        res = float(np.linalg.norm(Kms @ x - bms) / nb)
    except scipy.linalg.LinAlgError:
        res = np.inf
    if not np.isfinite(res) or res > max(rtol, 1e-8):
        # near-dependent basis columns; the Galerkin system is still
        # consistent, so the least-squares solution solves it
        x, *_ = np.linalg.lstsq(Kms, bms, rcond=None)
        res = float(np.linalg.norm(Kms @ x - bms) / nb)
        if not np.isfinite(res) or res > max(rtol, 1e-6):
            raise NumericalError(
                f"{label} solve residual too large",
                residual=res,
                condition=float(np.linalg.cond(Kms)),
            )
    u = dg.DGFunction(ws.hier.fine, np.asarray(Psi @ x).ravel())
    return MsSolution(x, u, res)


def solve_msfem(ws, basis, f, rtol=1e-8):
    """Galerkin solve in the corrected basis; returns coarse coefficients
    and the fine-mesh reconstruction."""
    b = dg.assemble_load(ws.hier.fine, f)
    return _galerkin_solve(ws, basis.psi, b, rtol=rtol)


def solve_ideal_msfem(ws, f, budget=DEFAULT_GLOBAL_BUDGET, force=False, rtol=1e-8):
    """Ideal method: global correctors; intended for small meshes."""
    ndof = ws.hier.fine.ndof
    if ndof > budget and not force:
        raise ConfigError(
            f"ideal multiscale solve on {ndof} fine unknowns exceeds budget "
            f"{budget}; pass force=True to override"
        )
    basis = build_ms_space(ws, saturation_radius(ws.hier))
    return solve_msfem(ws, basis, f, rtol=rtol), basis


@dataclass
class DecayProfile:
    T: int
    j: int
    layers: np.ndarray
    tails: np.ndarray  # energy norm outside omega_T^k
    gamma: float | None


def decay_profile(ws, corr, K_layers, fit=True):
    """Energy-norm tails of a corrector outside growing patches.

    tails[k-1] is the localized energy norm on the complement of the
    k-layer patch; gamma = exp(slope of log tails) over usable layers.
    """
    hier = ws.hier
    mesh = hier.fine
    op = ws.op
    vol = dg.element_volume_energies(op, corr.phi)
    penf = dg.face_penalty_energies(op, corr.phi)
    tails = np.empty(K_layers)
    usable = []
    for k in range(1, K_layers + 1):
        pt = make_patch(hier, corr.T, k)
        inside = np.zeros(mesh.nel, dtype=bool)
        inside[pt.fine_elements] = True
        outside = ~inside
        fmask = outside[mesh.face_minus] | (
            (mesh.face_plus >= 0) & outside[np.maximum(mesh.face_plus, 0)]
        )
        t2 = vol[outside].sum() + penf[fmask].sum()
        tails[k - 1] = np.sqrt(max(t2, 0.0))
        if outside.any() and tails[k - 1] > 0.0:
            usable.append(k - 1)
    gamma = None
    if fit:
        if len(usable) < 3:
            raise ConfigError("decay fit refused: fewer than 3 usable layers")
        ks = np.array(usable, dtype=float) + 1.0
        slope = np.polyfit(ks, np.log(tails[usable]), 1)[0]
        gamma = float(np.exp(slope))
    return DecayProfile(corr.T, corr.j, np.arange(1, K_layers + 1), tails, gamma)


@dataclass
class CompressedBasis:
    """Element-local SVD-compressed multiscale space.

    Per coarse element the local pieces (its own Lagrange functions plus
    the restrictions of every corrector whose patch covers it) are
    energy-orthonormalized by an eigendecomposition of the local energy
    Gram; modes with singular value below svd_tol * sigma_max are dropped.
    """

    hier: object
    svd_tol: float
    psi: sp.csc_matrix  # fine dofs x total retained
    element_dims: np.ndarray  # retained dimension per coarse element
    raw_dims: np.ndarray  # piece count per coarse element before truncation
    singular_values: list  # per element, nonincreasing


# relative floor below which local modes are numerically null; the local
# singular values come from an eigendecomposition of the energy Gram, whose
# null eigenvalues are resolved only to eps * w_max, i.e. sigma is resolved
# to sqrt(eps) * sigma_max
_RANK_FLOOR = 1e-7


def compress_space(ws, basis, svd_tol=0.0):
    hier = ws.hier
    E = ws.op.energy_matrix
    phi_csr = basis.phi.tocsr()
    inj = ws.maps.inject.tocsr()
    nT = hier.coarse.nel
    rows, cols, vals = [], [], []
    dims = np.zeros(nT, dtype=int)
    raw = np.zeros(nT, dtype=int)
    svals = []
    col0 = 0
    for Tp in range(nT):
        eldofs = element_dofs(hier.children[Tp])
        lam = inj[eldofs][:, 4 * Tp : 4 * Tp + 4].toarray()
        phi_loc = phi_csr[eldofs].tocsc()
        touching = np.flatnonzero(np.diff(phi_loc.indptr))
        pieces = [lam]
        if len(touching):
            pieces.append(phi_loc[:, touching].toarray())
        P = np.hstack(pieces)
        raw[Tp] = P.shape[1]
        Kel = E[eldofs][:, eldofs].toarray()
        G = P.T @ Kel @ P
        w, V = np.linalg.eigh(G)
        w = np.maximum(w[::-1], 0.0)
        V = V[:, ::-1]
        sigma = np.sqrt(w)
        smax = sigma[0] if sigma.size else 0.0
        keep = sigma > max(svd_tol, _RANK_FLOOR) * smax
        nk = int(keep.sum())
        Q = P @ (V[:, keep] / sigma[keep])
        svals.append(sigma)
        dims[Tp] = nk
        for k in range(nk):
            rows.append(eldofs)
            cols.append(np.full(len(eldofs), col0 + k))
            vals.append(Q[:, k])
        col0 += nk
    psi = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(hier.fine.ndof, col0),
    ).tocsc()
    return CompressedBasis(hier, svd_tol, psi, dims, raw, svals)


def solve_compressed(ws, cb, f, rtol=1e-8):
    """Galerkin solve in the compressed element-local space."""
    if cb.psi.shape[1] == 0:
        raise ConfigError("compressed basis is empty")
    b = dg.assemble_load(ws.hier.fine, f)
    return _galerkin_solve(ws, cb.psi, b, rtol=rtol, label="compressed")


class CorrectorCache:
    """Optional on-disk corrector store keyed by the workspace hash.

    One npz archive holds, per (T, L), the patch dof indices and the four
    corrector coefficient vectors. A key mismatch invalidates everything.
    """

    def __init__(self, path, key):
        self.path = str(path)
        self.key = key
        self._data = {}
        self._dirty = False
        try:
            with np.load(self.path, allow_pickle=False) as z:
                if "key" in z and str(z["key"]) == key:
                    for name in z.files:
                        if name != "key":
                            self._data[name] = z[name]
        except (FileNotFoundError, OSError, ValueError):
            pass

    def get(self, T, L):
        p = self._data.get(f"pdofs_{T}_{L}")
        phi = self._data.get(f"phi_{T}_{L}")
        if p is None or phi is None:
            return None
        return p, phi

    def put(self, T, L, pdofs, Phi):
        self._data[f"pdofs_{T}_{L}"] = np.asarray(pdofs)
        self._data[f"phi_{T}_{L}"] = np.asarray(Phi)
        self._dirty = True

    def save(self):
        if self._dirty:
            np.savez(self.path, key=np.str_(self.key), **self._data)
            self._dirty = False
