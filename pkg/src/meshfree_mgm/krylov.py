"""Right-preconditioned GMRES and BiCGSTAB.

Both solve ``A M z = b`` and return ``x = M z``, so reported residuals are
those of the unpreconditioned system.  ``M`` is any fixed linear map; one
MGM V-cycle with zero initial guess is the intended choice.
"""

from __future__ import annotations

import logging
import time
from typing import Callable

import numpy as np
import scipy.sparse.linalg as spla

from .mgm import Hierarchy, vcycle
from .report import SolveReport

log = logging.getLogger(__name__)

Vector = np.ndarray
Preconditioner = Callable[[Vector], Vector]


class KrylovBreakdown(np.linalg.LinAlgError):
    pass


class LinearOperator:
    """Thin wrapper turning a matrix, scipy operator or callable into ``apply``."""

    def __init__(self, A, dim: int | None = None):
        if callable(A) and not hasattr(A, "shape"):
            if dim is None:
                raise ValueError("dimension is required for a callable operator")
            self.dim = dim
            self.apply = A
        else:
            op = spla.aslinearoperator(A)
            if op.shape[0] != op.shape[1]:
                raise ValueError(f"operator must be square, got {op.shape}")
            self.dim = op.shape[0]
            self.apply = op.matvec

    def __call__(self, x: Vector) -> Vector:
        return self.apply(x)


def _identity(x):
    return np.array(x, dtype=np.float64)


def _as_operator(A, n=None):
    return A if isinstance(A, LinearOperator) else LinearOperator(A, n)


def mgm_preconditioner(h: Hierarchy) -> Preconditioner:
    """``M(r) = vcycle(h, r, 0)``: one V-cycle from a zero initial guess."""

    def apply(r):
        return vcycle(h, r, None)

    return apply


def gmres_right(A, b, M: Preconditioner | None = None, tol: float = 1e-12, maxit: int = 200,
                restart: int | None = None, x0: Vector | None = None) -> tuple[Vector, SolveReport]:
    """Right-preconditioned GMRES with modified Gram-Schmidt Arnoldi.

    The residual history comes from the Givens-rotated Hessenberg
    least-squares problem; the explicit residual ``|b - A x| / |b|`` is
    evaluated at the end and stored in ``true_residual``.  Preconditioned
    directions ``M v_j`` are kept so each iteration applies ``M`` once.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    t0 = time.perf_counter()
    b = np.asarray(b, dtype=np.float64)
    op = _as_operator(A, b.shape[0])
    if op.dim != b.shape[0]:
        raise ValueError(f"operator of size {op.dim} and rhs of length {b.shape[0]}")
    M = M or _identity
    n = b.shape[0]
    nb = np.linalg.norm(b)
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=np.float64)
    if nb == 0.0:
        return np.zeros(n), SolveReport(True, 0, [0.0], 0, time.perf_counter() - t0, "zero rhs", 0.0)
    m = maxit if restart is None else max(1, min(restart, maxit))
    r = b - op(x)
    hist = [float(np.linalg.norm(r) / nb)]
    total = 0
    status = "maxit"
    while hist[-1] > tol and total < maxit:
        beta = np.linalg.norm(r)
        V = [r / beta]
        Z = []
        H = np.zeros((m + 1, m))
        cs = np.zeros(m)
        sn = np.zeros(m)
        g = np.zeros(m + 1)
        g[0] = beta
        k = 0
        for j in range(m):
            z = M(V[j])
            Z.append(z)
            w = op(z)
            for i in range(j + 1):
                H[i, j] = w @ V[i]
                w -= H[i, j] * V[i]
            hnext = np.linalg.norm(w)
            H[j + 1, j] = hnext
            for i in range(j):
                hi, hk = H[i, j], H[i + 1, j]
                H[i, j] = cs[i] * hi + sn[i] * hk
                H[i + 1, j] = -sn[i] * hi + cs[i] * hk
            denom = np.hypot(H[j, j], H[j + 1, j])
            if denom == 0.0:
                raise KrylovBreakdown(f"Arnoldi breakdown at iteration {total + 1}: singular Hessenberg")
            cs[j], sn[j] = H[j, j] / denom, H[j + 1, j] / denom
            H[j, j] = denom
            H[j + 1, j] = 0.0
            g[j + 1] = -sn[j] * g[j]
            g[j] = cs[j] * g[j]
            total += 1
            k = j + 1
            hist.append(float(abs(g[j + 1]) / nb))
            if hist[-1] <= tol or total >= maxit:
                break
            if hnext <= 1e-14 * beta:
                raise KrylovBreakdown(
                    f"Arnoldi breakdown at iteration {total} with residual {hist[-1]:.3e} > tol")
            V.append(w / hnext)
        y = np.linalg.solve(np.triu(H[:k, :k]), g[:k]) if k else np.zeros(0)
        for i in range(k):
            x += y[i] * Z[i]
        r = b - op(x)
    true_res = float(np.linalg.norm(b - op(x)) / nb)
    converged = hist[-1] <= tol
    if converged:
        status = "converged"
    if true_res > 10 * max(hist[-1], np.finfo(float).eps):
        log.warning("GMRES recurrence residual %.3e disagrees with true residual %.3e", hist[-1], true_res)
    return x, SolveReport(converged, total, hist, total, time.perf_counter() - t0, status, true_res)


def bicgstab_right(A, b, M: Preconditioner | None = None, tol: float = 1e-12, maxit: int = 200,
                   x0: Vector | None = None) -> tuple[Vector, SolveReport]:
    """Right-preconditioned BiCGSTAB.

    ``maxit`` bounds the number of preconditioner applications, which is also
    what ``iterations`` reports (two per full step).  Convergence is checked
    after each half step.  On a ``rho`` or ``omega`` breakdown the method
    restarts once from the current iterate, then gives up with status
    ``"breakdown"``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    t0 = time.perf_counter()
    b = np.asarray(b, dtype=np.float64)
    op = _as_operator(A, b.shape[0])
    if op.dim != b.shape[0]:
        raise ValueError(f"operator of size {op.dim} and rhs of length {b.shape[0]}")
    M = M or _identity
    n = b.shape[0]
    nb = np.linalg.norm(b)
    if nb == 0.0:
        return np.zeros(n), SolveReport(True, 0, [0.0], 0, time.perf_counter() - t0, "zero rhs", 0.0)
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=np.float64)
    r = b - op(x)
    hist = [float(np.linalg.norm(r) / nb)]
    apps = 0
    restarts = 0
    status = "maxit"
    tiny = 1e-30

    def fresh():
        return r.copy(), 1.0, 1.0, 1.0, np.zeros(n), np.zeros(n)

    rhat, rho, alpha, omega, v, p = fresh()
    while hist[-1] > tol and apps < maxit:
        rho_new = rhat @ r
        if abs(rho_new) < tiny * np.linalg.norm(rhat) * np.linalg.norm(r):
            if restarts:
                status = "breakdown"
                break
            restarts += 1
            rhat, rho, alpha, omega, v, p = fresh()
            continue
        beta = (rho_new / rho) * (alpha / omega)
        rho = rho_new
        p = r + beta * (p - omega * v)
        phat = M(p)
        apps += 1
        v = op(phat)
        rv = rhat @ v
        if rv == 0.0:
            if restarts:
                status = "breakdown"
                break
            restarts += 1
            rhat, rho, alpha, omega, v, p = fresh()
            continue
        alpha = rho / rv
        x += alpha * phat
        s = r - alpha * v
        hist.append(float(np.linalg.norm(s) / nb))
        if hist[-1] <= tol or apps >= maxit:
            r = s
            break
        shat = M(s)
        apps += 1
        t = op(shat)
        tt = t @ t
        omega = (t @ s) / tt if tt > 0 else 0.0
        x += omega * shat
        r = s - omega * t
        hist.append(float(np.linalg.norm(r) / nb))
        if abs(omega) < tiny and hist[-1] > tol:
            if restarts:
                status = "breakdown"
                break
            restarts += 1
            rhat, rho, alpha, omega, v, p = fresh()
    converged = hist[-1] <= tol
    if converged:
        status = "converged"
    true_res = float(np.linalg.norm(b - op(x)) / nb)
    return x, SolveReport(converged, apps, hist, apps, time.perf_counter() - t0, status, true_res)
