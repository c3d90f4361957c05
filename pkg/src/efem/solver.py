"""Sparse linear solvers for the condensed systems.

The condensed matrix is nonsymmetric whenever the displacement terms are
active, so the workhorse is BiCGSTAB with diagonal (Jacobi) preconditioning.
A dense LU path exists for small systems and serves as the reference in
tests.  All operations are deterministic: fixed iteration order, no
randomness, single-threaded BLAS calls on small vectors.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp

DIRECT_LIMIT = 2000


@dataclass
class SolveReport:
    iterations: int
    residual: float          # final true relative residual |Ax-b| / |b|
    converged: bool
    restarted: bool = False
    method: str = "bicgstab"


def jacobi_precondition(A: sp.spmatrix) -> np.ndarray:
    """Inverse diagonal of A; rejects a zero diagonal naming the row."""
    diag = np.asarray(A.diagonal(), dtype=float)
    zero = np.nonzero(diag == 0.0)[0]
    if zero.size:
        raise ValueError(f"zero diagonal at row {int(zero[0])}; cannot precondition")
    return 1.0 / diag


def bicgstab(A: sp.spmatrix, b: np.ndarray, x0: np.ndarray | None = None,
             tol: float = 1e-8, max_iter: int | None = None,
             precondition: bool = True) -> tuple[np.ndarray, SolveReport]:
    """Preconditioned BiCGSTAB on the true relative residual |Ax-b|/|b|.

    Convergence additionally requires the Jacobi-scaled residual to pass the
    same tolerance; with strong permittivity contrasts |b| is dominated by
    the stiff rows and the plain test alone would stop while the soft-region
    error is still large.  The reported residual is always the true relative
    one, recomputed from the final iterate.  On a rho or omega breakdown the
    iteration restarts once from the current iterate with a fresh shadow
    residual; a second breakdown reports failure.
    """
    n = b.shape[0]
    if max_iter is None:
        max_iter = 10 * n
    minv = jacobi_precondition(A) if precondition else np.ones(n)

    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return np.zeros(n), SolveReport(0, 0.0, True)
    mbnorm = float(np.linalg.norm(minv * b))
    mbnorm = mbnorm if mbnorm > 0.0 else bnorm

    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    tiny = 1e-300

    def true_rel_residual(xv):
        return float(np.linalg.norm(b - A @ xv)) / bnorm

    def small(res_vec):
        if float(np.linalg.norm(res_vec)) / bnorm > tol:
            return False
        return float(np.linalg.norm(minv * res_vec)) / mbnorm <= tol

    iterations = 0
    for attempt in range(2):             # attempt 1 is the single allowed restart
        restarted = attempt == 1
        r = b - A @ x                    # fresh (shadow) residual per attempt
        r_hat = r.copy()
        rho = alpha = omega = 1.0
        v = np.zeros(n)
        p = np.zeros(n)
        broke = False
        while iterations < max_iter:
            rho_new = float(r_hat @ r)
            if abs(rho_new) < tiny or abs(omega) < tiny:
                broke = True
                break
            beta = (rho_new / rho) * (alpha / omega)
            rho = rho_new
            p = r + beta * (p - omega * v)
            p_hat = minv * p
            v = A @ p_hat
            denom = float(r_hat @ v)
            if abs(denom) < tiny:
                broke = True
                break
            alpha = rho / denom
            s = r - alpha * v
            iterations += 1
            if small(s):
                x_try = x + alpha * p_hat
                true_res = b - A @ x_try
                if small(true_res):
                    return x_try, SolveReport(iterations, float(np.linalg.norm(true_res)) / bnorm,
                                              True, restarted)
            s_hat = minv * s
            t = A @ s_hat
            tt = float(t @ t)
            if tt < tiny:
                broke = True
                break
            omega = float(t @ s) / tt
            x = x + alpha * p_hat + omega * s_hat
            r = s - omega * t
            if small(r):
                true_res = b - A @ x
                if small(true_res):
                    return x, SolveReport(iterations, float(np.linalg.norm(true_res)) / bnorm,
                                          True, restarted)
        if not broke:                    # ran out of iterations
            break

    return x, SolveReport(iterations, true_rel_residual(x), False, restarted)


def direct_solve(A: sp.spmatrix, b: np.ndarray) -> np.ndarray:
    """Dense LU for small systems; the iterative solver's test oracle."""
    n = b.shape[0]
    if n > DIRECT_LIMIT:
        raise ValueError(f"direct solve limited to n <= {DIRECT_LIMIT}, got {n}")
    return scipy.linalg.solve(A.toarray(), b)


def solve(A: sp.spmatrix, b: np.ndarray, tol: float = 1e-8,
          direct: bool = False, max_iter: int | None = None) -> tuple[np.ndarray, SolveReport]:
    """Entry point used by the CLI: BiCGSTAB by default, dense LU on request."""
    if direct:
        x = direct_solve(A, b)
        res = float(np.linalg.norm(b - A @ x)) / max(float(np.linalg.norm(b)), 1e-300)
        return x, SolveReport(0, res, True, method="lu")
    return bicgstab(A, b, tol=tol, max_iter=max_iter)
