"""Meshfree geometric multilevel hierarchy setup and V-cycle.

Level 0 is the finest.  Every operator in the hierarchy is stored in its
level's RCM order; :func:`vcycle` accepts and returns vectors in the
caller's original ordering.  In Poisson mode the singular operator is
bordered by a constraint row and column, and the Lagrange multiplier is
passed unchanged between levels.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .coarsen import hierarchy_sizes, wse_coarsen
from .geometry import PointCloud
from .linalg import (LUFactors, Permutation, as_csr, bandwidth, dense_lu_factor, dense_lu_solve,
                     diagonal_positions, gs_sweep, permute, rcm_ordering, spmm, transpose)
from .report import SolveReport
from .transfer import build_interpolation

log = logging.getLogger(__name__)

MODES = ("shifted", "poisson")


class SetupError(RuntimeError):
    def __init__(self, message: str, level: int):
        super().__init__(f"level {level}: {message}")
        self.level = level


@dataclass(frozen=True)
class MgmConfig:
    n_min: int = 250
    nu1: int = 1
    nu2: int = 1
    pre_smoother: str = "forward"
    post_smoother: str = "forward"
    m: int = 3

    def __post_init__(self):
        if self.nu1 < 0 or self.nu2 < 0 or self.nu1 + self.nu2 == 0:
            raise ValueError("smoothing counts must be nonnegative and not both zero")
        for s in (self.pre_smoother, self.post_smoother):
            if s not in ("forward", "backward"):
                raise ValueError(f"smoother must be forward or backward, got {s!r}")
        if self.n_min < 1 or self.m < 1:
            raise ValueError("n_min and m must be positive")


@dataclass
class Level:
    """One level of the hierarchy, everything in this level's RCM order.

    ``interp`` maps this level to the next finer one and ``restrict`` is its
    transpose; both are ``None`` on the finest level.  ``constraint`` is the
    border vector of the Poisson saddle system (``None`` in shifted mode).
    """

    cloud: PointCloud
    operator: sp.csr_array
    interp: sp.csr_array | None
    restrict: sp.csr_array | None
    rcm: Permutation
    constraint: np.ndarray | None = None
    bandwidth_before: int = 0
    bandwidth_after: int = 0
    diag: np.ndarray | None = field(default=None, repr=False)

    @property
    def size(self) -> int:
        return self.operator.shape[0]


@dataclass
class Hierarchy:
    levels: list[Level]
    coarse_factorization: LUFactors
    config: MgmConfig
    mode: str
    operator: sp.csr_array  # system matrix in the caller's ordering (bordered in Poisson mode)
    setup_time: float = 0.0

    @property
    def n_levels(self) -> int:
        return len(self.levels)

    @property
    def n_fine(self) -> int:
        return self.levels[0].size

    @property
    def dim(self) -> int:
        return self.operator.shape[0]

    def summary(self) -> dict:
        return {
            "mode": self.mode,
            "setup_seconds": self.setup_time,
            "config": self.config.__dict__,
            "levels": [
                {"level": j, "size": lv.size, "nnz": int(lv.operator.nnz),
                 "bandwidth_before_rcm": lv.bandwidth_before, "bandwidth_after_rcm": lv.bandwidth_after}
                for j, lv in enumerate(self.levels)
            ],
        }


@dataclass
class ConstrainedSystem:
    """Singular operator bordered by an all-ones constraint row and column."""

    base: sp.csr_array
    lagrange: float = 0.0

    @property
    def matrix(self) -> sp.csr_array:
        return bordered(self.base, np.ones(self.base.shape[0]))


def bordered(L: sp.csr_array, c: np.ndarray) -> sp.csr_array:
    """``[[L, c], [c^T, 0]]`` as canonical CSR (explicit zero corner)."""
    n = L.shape[0]
    col = sp.csr_array(np.asarray(c, dtype=np.float64).reshape(n, 1))
    M = sp.block_array([[L, col], [col.T, sp.csr_array(np.zeros((1, 1)))]], format="csr")
    return as_csr(M)


def augment_poisson(L) -> ConstrainedSystem:
    L = as_csr(L)
    if L.shape[0] != L.shape[1]:
        raise ValueError("operator must be square")
    return ConstrainedSystem(L)


def setup(L1, X1: PointCloud, config: MgmConfig | None = None, mode: str = "shifted") -> Hierarchy:
    """Build coarse clouds, transfers and Galerkin operators down to ``N_min``."""
    t0 = time.perf_counter()
    config = config or MgmConfig()
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    L1 = as_csr(L1)
    N1 = L1.shape[0]
    if L1.shape[1] != N1 or len(X1) != N1:
        raise ValueError(f"operator shape {L1.shape} does not match cloud of {len(X1)} points")
    perm = rcm_ordering(L1)
    op = permute(L1, perm)
    fine = Level(X1.subset(perm.forward), op, None, None, perm,
                 constraint=np.ones(N1) if mode == "poisson" else None,
                 bandwidth_before=bandwidth(L1), bandwidth_after=bandwidth(op))
    levels = [fine]
    sizes = hierarchy_sizes(N1, config.n_min)
    for j, n_coarse in enumerate(sizes[1:], start=1):
        prev = levels[-1]
        try:
            keep = wse_coarsen(prev.cloud, n_coarse)
            coarse = prev.cloud.subset(keep)
            T = build_interpolation(coarse, prev.cloud, config.m)
            Lc = spmm(T.restrict, spmm(prev.operator, T.interp))
            perm = rcm_ordering(Lc)
            Lp = permute(Lc, perm)
            P = permute(T.interp, perm, side="cols")
            R = transpose(P)
        except Exception as exc:
            raise SetupError(str(exc), j) from exc
        c = R @ prev.constraint if mode == "poisson" else None
        levels.append(Level(coarse.subset(perm.forward), Lp, P, R, perm, constraint=c,
                            bandwidth_before=bandwidth(Lc), bandwidth_after=bandwidth(Lp)))
        log.debug("level %d: %d points, nnz %d", j, n_coarse, Lp.nnz)
    coarsest = levels[-1]
    A = bordered(coarsest.operator, coarsest.constraint) if mode == "poisson" else coarsest.operator
    try:
        F = dense_lu_factor(A)
    except np.linalg.LinAlgError as exc:
        raise SetupError(f"coarse factorization failed: {exc}", len(levels) - 1) from exc
    if len(levels) > 1:
        for j, lv in enumerate(levels[:-1]):
            try:
                lv.diag = diagonal_positions(lv.operator)
            except ValueError as exc:
                raise SetupError(str(exc), j) from exc
    system = augment_poisson(L1).matrix if mode == "poisson" else L1
    return Hierarchy(levels, F, config, mode, system, time.perf_counter() - t0)


def _smooth(lv: Level, u, f, count, direction):
    for _ in range(count):
        gs_sweep(lv.operator, u, f, direction, lv.diag)


def vcycle(h: Hierarchy, f: np.ndarray, u0: np.ndarray | None = None) -> np.ndarray:
    """One ``V(nu1, nu2)`` cycle for ``h.operator u = f`` starting from ``u0``."""
    f = np.asarray(f, dtype=np.float64)
    if f.shape != (h.dim,):
        raise ValueError(f"right-hand side has shape {f.shape}, expected ({h.dim},)")
    if u0 is None:
        u0 = np.zeros(h.dim)
    elif np.shape(u0) != (h.dim,):
        raise ValueError(f"initial guess has shape {np.shape(u0)}, expected ({h.dim},)")
    cfg = h.config
    poisson = h.mode == "poisson"
    levels = h.levels
    fine = levels[0]
    N1 = fine.size
    fwd = fine.rcm.forward
    f1 = f[:N1][fwd]
    u = np.asarray(u0, dtype=np.float64)[:N1][fwd].copy()
    lam = float(u0[N1]) if poisson else 0.0
    f_lam = float(f[N1]) if poisson else 0.0
    p = len(levels)

    if p == 1:
        if poisson:
            sol = dense_lu_solve(h.coarse_factorization, np.append(f1, f_lam))
            u, lam = sol[:N1], sol[N1]
        else:
            u = dense_lu_solve(h.coarse_factorization, f1)
    else:
        c1 = fine.constraint
        _smooth(fine, u, f1 - lam * c1 if poisson else f1, cfg.nu1, cfg.pre_smoother)
        r = f1 - fine.operator @ u
        if poisson:
            r -= lam * c1
        rs = [None] * p  # restricted residuals (u-block)
        rl = [0.0] * p  # restricted constraint residuals
        es = [None] * p
        mus = [0.0] * p
        rs[1] = levels[1].restrict @ r
        rl[1] = f_lam - c1 @ u if poisson else 0.0
        for j in range(1, p - 1):
            lv = levels[j]
            e = np.zeros(lv.size)
            _smooth(lv, e, rs[j], cfg.nu1, cfg.pre_smoother)
            es[j] = e
            rs[j + 1] = levels[j + 1].restrict @ (rs[j] - lv.operator @ e)
            rl[j + 1] = rl[j] - lv.constraint @ e if poisson else 0.0
        if poisson:
            sol = dense_lu_solve(h.coarse_factorization, np.append(rs[p - 1], rl[p - 1]))
            es[p - 1], mus[p - 1] = sol[:-1], sol[-1]
        else:
            es[p - 1] = dense_lu_solve(h.coarse_factorization, rs[p - 1])
        for j in range(p - 2, 0, -1):
            lv = levels[j]
            es[j] += levels[j + 1].interp @ es[j + 1]
            mus[j] = mus[j + 1]
            rhs = rs[j] - mus[j] * lv.constraint if poisson else rs[j]
            _smooth(lv, es[j], rhs, cfg.nu2, cfg.post_smoother)
        u += levels[1].interp @ es[1]
        lam += mus[1]
        _smooth(fine, u, f1 - lam * c1 if poisson else f1, cfg.nu2, cfg.post_smoother)

    out = np.empty(h.dim)
    out[fwd] = u
    if poisson:
        out[N1] = lam
    return out


def relative_residual(A, f, u) -> float:
    nf = np.linalg.norm(f)
    return float(np.linalg.norm(f - A @ u) / nf) if nf > 0 else 0.0


def solve_standalone(h: Hierarchy, f, tol: float = 1e-12, maxit: int = 100,
                     u0: np.ndarray | None = None) -> tuple[np.ndarray, SolveReport]:
    """Repeat V-cycles until the relative 2-norm residual drops below ``tol``."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    t0 = time.perf_counter()
    f = np.asarray(f, dtype=np.float64)
    u = np.zeros(h.dim) if u0 is None else np.array(u0, dtype=np.float64)
    nf = np.linalg.norm(f)
    if nf == 0.0:
        return np.zeros(h.dim), SolveReport(True, 0, [0.0], 0, time.perf_counter() - t0, "zero rhs", 0.0)
    A = h.operator
    hist = [relative_residual(A, f, u)]
    it = 0
    status = "maxit"
    while hist[-1] > tol and it < maxit:
        u = vcycle(h, f, u)
        it += 1
        hist.append(relative_residual(A, f, u))
        if not np.isfinite(hist[-1]):
            status = "diverged"
            break
    converged = bool(hist[-1] <= tol)
    rep = SolveReport(converged, it, hist, it, time.perf_counter() - t0,
                      "converged" if converged else status, hist[-1])
    return u, rep


def galerkin_defect(h: Hierarchy) -> list[float]:
    """Relative Frobenius mismatch between stored and recomputed coarse operators."""
    out = []
    for fine, coarse in zip(h.levels[:-1], h.levels[1:]):
        G = spmm(coarse.restrict, spmm(fine.operator, coarse.interp))
        out.append(float(spla.norm(G - coarse.operator) / spla.norm(coarse.operator)))
    return out


def vcycle_contraction(h: Hierarchy, iters: int = 50, seed: int = 0) -> float:
    """Power-iteration estimate of the spectral radius of ``E = I - M L``."""
    rng = np.random.default_rng(seed)
    A = h.operator
    e = rng.standard_normal(h.dim)
    e /= np.linalg.norm(e)
    rho = 0.0
    for _ in range(iters):
        e_new = e - vcycle(h, A @ e)
        rho = np.linalg.norm(e_new)
        if rho == 0.0:
            return 0.0
        e = e_new / rho
    return float(rho)
