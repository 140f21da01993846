"""Sparse kernels and Krylov solvers.

Matrices are ``scipy.sparse.csr_matrix`` instances with sorted, de-duplicated
column indices.  The solvers are plain Jacobi-preconditioned CG and
restarted GMRES so that tolerances and iteration histories are under our
control.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp


class SolverError(RuntimeError):
    """Raised when an iterative solve stalls; carries the relative residual."""

    def __init__(self, message: str, residual: float, iterations: int):
        super().__init__(f"{message} (relative residual {residual:.3e} "
                         f"after {iterations} iterations)")
        self.residual = residual
        self.iterations = iterations


def csr_from_coo(rows, cols, vals, shape) -> sp.csr_matrix:
    """Sum duplicate (row, col) entries of a COO staging buffer into CSR."""
    A = sp.coo_matrix((np.asarray(vals, float).ravel(),
                       (np.asarray(rows).ravel(), np.asarray(cols).ravel())), shape=shape).tocsr()
    A.sum_duplicates()
    A.sort_indices()
    return A


def spmv(A, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if A.shape[1] != x.shape[0]:
        raise ValueError(f"dimension mismatch: matrix {A.shape} times vector {x.shape}")
    return A @ x


def _diag_inverse(A) -> np.ndarray:
    d = A.diagonal().astype(float)
    inv = np.ones_like(d)
    nz = d != 0
    inv[nz] = 1.0 / d[nz]
    return inv


def solve_spd(A, b, tol: float = 1e-10, maxit: int = 1000, x0=None, history: list | None = None):
    """Jacobi-preconditioned conjugate gradients.

    Stops once ``||b - A x|| <= tol ||b||``.  If ``history`` is a list, the
    A-norm error proxy ``r^T z`` of each iterate is appended to it.
    """
    b = np.asarray(b, dtype=float)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros_like(b)
    dinv = _diag_inverse(A)
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)
    r = b - A @ x
    z = dinv * r
    p = z.copy()
    rz = r @ z
    res = np.linalg.norm(r)
    it = 0
    while res > tol * bnorm:
        if it >= maxit:
            raise SolverError("conjugate gradients did not converge", res / bnorm, it)
        Ap = A @ p
        alpha = rz / (p @ Ap)
        x += alpha * p
        r -= alpha * Ap
        z = dinv * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
        res = np.linalg.norm(r)
        it += 1
        if history is not None:
            history.append(res / bnorm)
    return x


def solve_general(A, b, tol: float = 1e-10, maxit: int = 2000, x0=None, restart: int = 40,
                  precond: np.ndarray | None = None, stats: dict | None = None):
    """Restarted GMRES with right Jacobi preconditioning.

    Right preconditioning keeps the monitored residual equal to the true
    residual, so the stopping test is ``||b - A x|| <= tol ||b||``.
    ``precond`` may supply the inverse diagonal to skip recomputing it.
    """
    b = np.asarray(b, dtype=float)
    n = b.shape[0]
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros_like(b)
    dinv = _diag_inverse(A) if precond is None else precond
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    target = tol * bnorm
    total = 0
    m = restart
    V = np.empty((m + 1, n))
    H = np.zeros((m + 1, m))
    while True:
        r = b - A @ x
        beta = np.linalg.norm(r)
        if beta <= target:
            break
        if total >= maxit:
            raise SolverError("GMRES did not converge", beta / bnorm, total)
        V[0] = r / beta
        g = np.zeros(m + 1)
        g[0] = beta
        cs = np.zeros(m)
        sn = np.zeros(m)
        k_done = 0
        for k in range(m):
            w = A @ (dinv * V[k])
            # classical Gram-Schmidt; the true residual is re-checked per cycle
            h = V[: k + 1] @ w
            w -= h @ V[: k + 1]
            hn = np.linalg.norm(w)
            H[: k + 1, k] = h
            H[k + 1, k] = hn
            for i in range(k):
                t = cs[i] * H[i, k] + sn[i] * H[i + 1, k]
                H[i + 1, k] = -sn[i] * H[i, k] + cs[i] * H[i + 1, k]
                H[i, k] = t
            denom = np.hypot(H[k, k], H[k + 1, k])
            cs[k] = H[k, k] / denom
            sn[k] = H[k + 1, k] / denom
            H[k, k] = denom
            H[k + 1, k] = 0.0
            g[k + 1] = -sn[k] * g[k]
            g[k] = cs[k] * g[k]
            total += 1
            k_done = k + 1
            if abs(g[k + 1]) <= target or hn == 0.0 or total >= maxit:
                break
            V[k + 1] = w / hn
        y = np.linalg.solve(np.triu(H[:k_done, :k_done]), g[:k_done])
        x += dinv * (y @ V[:k_done])
    if stats is not None:
        stats["iterations"] = stats.get("iterations", 0) + total
    return x


def lump(M) -> sp.csr_matrix:
    """Row-sum lumped (diagonal) version of a mass matrix."""
    s = np.asarray(M.sum(axis=1)).ravel()
    if np.any(s <= 0):
        raise ValueError("mass lumping produced non-positive row sums")
    return sp.diags(s).tocsr()
