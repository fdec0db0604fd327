"""Sparse and small-dense kernels shared by the assembly and solver layers.

Matrices are scipy CSR/CSC throughout. Saddle-point systems are solved by
a sparse LU factorization of the full KKT matrix, which keeps every patch
solve exact up to factorization accuracy and lets one factorization serve
all right-hand sides of a patch.
"""

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import NumericalError


def cg_solve(K, b, precond=None, rtol=1e-10, maxit=None):
    """Preconditioned conjugate gradients; returns (x, iterations).

    `precond` is a callable applying an approximate inverse of K.
    """
    b = np.asarray(b, dtype=float)
    n = len(b)
    if maxit is None:
        maxit = 20 * n + 100
    nb = np.linalg.norm(b)
    if nb == 0.0:
        return np.zeros(n), 0
    x = np.zeros(n)
    r = b.copy()
    z = precond(r) if precond is not None else r.copy()
    p = z.copy()
    rz = r @ z
    for it in range(1, maxit + 1):
        Kp = K @ p
        denom = p @ Kp
        if denom <= 0.0:
            raise NumericalError("CG breakdown: matrix not positive definite")
        alpha = rz / denom
        x += alpha * p
        r -= alpha * Kp
        if np.linalg.norm(r) <= rtol * nb:
            return x, it
        z = precond(r) if precond is not None else r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise NumericalError(
        f"CG did not converge in {maxit} iterations",
        residual=float(np.linalg.norm(r) / nb),
    )


def block_jacobi(K, block=4):
    """Inverse of the (block x block) diagonal blocks of K as a callable."""
    K = K.tocsr()
    n = K.shape[0]
    if n % block != 0:
        raise ValueError("matrix size not divisible by block size")
    nb = n // block
    inv = np.empty((nb, block, block))
    for i in range(nb):
        sl = slice(block * i, block * (i + 1))
        inv[i] = np.linalg.inv(K[sl, sl].toarray())

    def apply(r):
        return np.einsum("bij,bj->bi", inv, r.reshape(nb, block)).ravel()

    return apply


class KKTFactorization:
    """LU factorization of [[K, C^T], [C, 0]], reusable across right-hand sides."""

    def __init__(self, K, C):
        K = K.tocsr()
        self.n = K.shape[0]
        self.m = C.shape[0] if C is not None else 0
        if self.m == 0:
            mat = K.tocsc()
        else:
            C = C.tocsr()
            mat = sp.bmat([[K, C.T], [C, None]], format="csc")
        self.matrix = mat
        try:
            self.lu = spla.splu(mat)
        except RuntimeError as exc:  # singular factorization
            raise NumericalError(f"KKT factorization failed: {exc}") from exc

    def solve(self, b, c=None, rtol=1e-9):
        b = np.asarray(b, dtype=float)
        rhs = np.zeros(self.n + self.m)
        rhs[: self.n] = b
        if c is not None:
            rhs[self.n :] = c
        sol = self.lu.solve(rhs)
        scale = np.linalg.norm(rhs)
        if scale > 0.0:
            res = np.linalg.norm(self.matrix @ sol - rhs) / scale
            if not np.isfinite(res) or res > rtol:
                raise NumericalError(
                    "saddle solve residual too large (rank-deficient constraints?)",
                    residual=float(res),
                )
        return sol[: self.n], sol[self.n :]


def solve_saddle(K, C, b, c=None, rtol=1e-9):
    """Solve K x + C^T mu = b, C x = c; returns (x, mu)."""
    return KKTFactorization(K, C).solve(b, c, rtol=rtol)


def svd_small(M):
    """Dense SVD with nonincreasing singular values; M = U diag(S) V^T."""
    U, S, Vt = np.linalg.svd(np.asarray(M, dtype=float), full_matrices=False)
    return U, S, Vt.T
