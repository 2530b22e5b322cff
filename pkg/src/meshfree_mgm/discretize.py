"""Tangent-plane RBF-FD and GFD discretizations of the Laplace-Beltrami operator.

All weights are computed on coordinates scaled by the stencil radius and
rescaled by ``1 / rho**2`` afterwards, which keeps the local systems well
conditioned at high polynomial degree.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .geometry import KdTree, PointCloud, StencilSet, build_stencils
from .linalg import as_csr

UNISOLVENCY_TOL = 1e-10
_CHUNK_BYTES = 64 * 2**20


class StencilError(np.linalg.LinAlgError):
    """A local stencil system could not be solved; ``centers`` lists the culprits."""

    def __init__(self, message: str, centers):
        super().__init__(message)
        self.centers = list(int(c) for c in centers)


def monomial_count(ell: int) -> int:
    return (ell + 1) * (ell + 2) // 2


def default_stencil_size(ell: int) -> int:
    return math.ceil((ell + 1) * (ell + 2))


@dataclass(frozen=True)
class DiscretizationConfig:
    method: str = "rbf-fd"
    ell: int = 3
    phs_order: int | None = None
    gfd_alpha: float = 4.0
    stencil_size: int | None = None

    def __post_init__(self):
        if self.method not in ("rbf-fd", "gfd"):
            raise ValueError(f"method must be 'rbf-fd' or 'gfd', got {self.method!r}")
        if not 1 <= self.ell <= 10:
            raise ValueError(f"polynomial degree must be in 1..10, got {self.ell}")
        k = self.k
        if not 0 <= k <= self.ell:
            raise ValueError(f"PHS order must satisfy 0 <= k <= ell, got k={k}")
        if self.gfd_alpha <= 0:
            raise ValueError("GFD alpha must be positive")
        if self.n < monomial_count(self.ell):
            raise ValueError(f"stencil size {self.n} is below the monomial count {monomial_count(self.ell)}")

    @property
    def k(self) -> int:
        return self.ell if self.phs_order is None else self.phs_order

    @property
    def n(self) -> int:
        return default_stencil_size(self.ell) if self.stencil_size is None else self.stencil_size

    @property
    def L(self) -> int:
        return monomial_count(self.ell)


def monomial_exponents(ell: int) -> np.ndarray:
    """Exponent pairs ``(a, b)`` of ``x**a y**b``, graded by total degree."""
    return np.array([(d - b, b) for d in range(ell + 1) for b in range(d + 1)], dtype=np.int64)


def vandermonde(xy: np.ndarray, ell: int) -> np.ndarray:
    """Monomial values ``P[..., i, m] = x_i**a_m * y_i**b_m``."""
    e = monomial_exponents(ell)
    x = xy[..., 0, None]
    y = xy[..., 1, None]
    return x ** e[:, 0] * y ** e[:, 1]


def monomial_laplacian_at_origin(ell: int) -> np.ndarray:
    e = monomial_exponents(ell)
    return np.where(((e[:, 0] == 2) & (e[:, 1] == 0)) | ((e[:, 0] == 0) & (e[:, 1] == 2)), 2.0, 0.0)


def _as_batch(coords):
    coords = np.asarray(coords, dtype=np.float64)
    single = coords.ndim == 2
    return (coords[None] if single else coords), single


def _stencil_scale(xy):
    rho = np.linalg.norm(xy, axis=-1).max(axis=-1)
    if np.any(rho == 0):
        raise StencilError("stencil with all points at the center", np.flatnonzero(rho == 0))
    return rho


def _check_unisolvent(P, centers):
    s = np.linalg.svd(P, compute_uv=False)
    bad = s[:, -1] <= UNISOLVENCY_TOL * s[:, 0]
    if np.any(bad):
        names = np.asarray(centers)[bad]
        raise StencilError(
            f"stencil not unisolvent for the polynomial space at center(s) {names[:10].tolist()}", names)


def rbffd_weights(coords, ell: int, k: int | None = None, centers=None) -> np.ndarray:
    """PHS + polynomial RBF-FD weights for the planar Laplacian at the origin.

    ``coords`` holds projected stencil coordinates with the center first at
    the origin, shape ``(n, 2)`` or batched ``(B, n, 2)``.  The bordered
    system ``[A P; P^T 0] [c; lambda] = [lap s; lap p]`` with
    ``A_ij = |x_i - x_j|**(2k+1)`` is solved by LU with partial pivoting.
    """
    k = ell if k is None else k
    if k < 1:
        # lap r = 1/r is singular at the stencil center
        raise ValueError("PHS order k >= 1 is required for Laplacian weights")
    xy, single = _as_batch(coords)
    B, n, _ = xy.shape
    centers = np.arange(B) if centers is None else np.asarray(centers)
    rho = _stencil_scale(xy)
    xs = xy / rho[:, None, None]
    P = vandermonde(xs, ell)
    _check_unisolvent(P, centers)
    L = P.shape[-1]
    m = 2 * k + 1
    r = np.linalg.norm(xs[:, :, None, :] - xs[:, None, :, :], axis=-1)
    M = np.zeros((B, n + L, n + L))
    M[:, :n, :n] = r**m
    M[:, :n, n:] = P
    M[:, n:, :n] = np.swapaxes(P, 1, 2)
    rhs = np.empty((B, n + L))
    rc = np.linalg.norm(xs, axis=-1)
    rhs[:, :n] = m * m * rc ** (m - 2)
    rhs[:, n:] = monomial_laplacian_at_origin(ell)
    try:
        sol = np.linalg.solve(M, rhs[..., None])[..., 0]
    except np.linalg.LinAlgError as exc:
        raise StencilError(f"singular RBF-FD system among centers {centers[:10].tolist()}", centers) from exc
    c = sol[:, :n] / rho[:, None] ** 2
    if not np.all(np.isfinite(c)):
        bad = centers[~np.all(np.isfinite(c), axis=1)]
        raise StencilError(f"non-finite RBF-FD weights at center(s) {bad[:10].tolist()}", bad)
    return c[0] if single else c


def gfd_weights(coords, ell: int, alpha: float, radii, centers=None) -> np.ndarray:
    """Weighted least-squares (GFD) Laplacian weights at the origin.

    ``radii[..., i]`` is the support radius of the stencil owned by stencil
    point ``i`` (``radii[..., 0]`` for the center).  Weights are
    ``w_i = exp(-alpha |x_i|**2 / (rho_0**2 + rho_i**2))`` and the result
    ``W P (P^T W P)^{-1} lap p`` is evaluated through a QR factorization of
    ``W^{1/2} P``.
    """
    xy, single = _as_batch(coords)
    radii = np.asarray(radii, dtype=np.float64)
    radii = radii[None] if radii.ndim == 1 else radii
    B, n, _ = xy.shape
    centers = np.arange(B) if centers is None else np.asarray(centers)
    if np.any(radii <= 0):
        raise ValueError("stencil radii must be positive")
    rho = radii[:, 0]
    xs = xy / rho[:, None, None]
    rs = radii / rho[:, None]
    w = np.exp(-alpha * np.sum(xs**2, axis=-1) / (1.0 + rs**2))
    sw = np.sqrt(w)
    P = vandermonde(xs, ell)
    Q, R = np.linalg.qr(sw[:, :, None] * P)
    dR = np.abs(np.diagonal(R, axis1=1, axis2=2))
    bad = dR.min(axis=1) <= UNISOLVENCY_TOL * dR.max(axis=1)
    if np.any(bad):
        names = centers[bad]
        raise StencilError(f"rank-deficient weighted Vandermonde at center(s) {names[:10].tolist()}", names)
    lp = np.broadcast_to(monomial_laplacian_at_origin(ell), (B, P.shape[-1]))
    # P^T W P = R^T R, so c = W^{1/2} Q R^{-T} lap p
    y = np.linalg.solve(np.swapaxes(R, 1, 2), lp[..., None])[..., 0]
    c = sw * np.einsum("bnl,bl->bn", Q, y) / rho[:, None] ** 2
    return c[0] if single else c


def stencil_radii(stencils: StencilSet) -> np.ndarray:
    """Radius ``max_j |x_j|`` of every projected stencil."""
    return np.linalg.norm(stencils.coords, axis=-1).max(axis=-1)


def _chunks(N, per_item_bytes):
    step = max(1, int(_CHUNK_BYTES // max(per_item_bytes, 1)))
    for start in range(0, N, step):
        yield slice(start, min(N, start + step))


def stencil_weights(stencils: StencilSet, config: DiscretizationConfig) -> np.ndarray:
    """Weights of every stencil as an ``(N, n)`` array, computed in chunks."""
    N, n = stencils.indices.shape
    L = config.L
    out = np.empty((N, n))
    failed = []
    radii = stencil_radii(stencils) if config.method == "gfd" else None
    for sl in _chunks(N, 8 * 3 * (n + L) ** 2):
        centers = np.arange(sl.start, sl.stop)
        try:
            if config.method == "rbf-fd":
                out[sl] = rbffd_weights(stencils.coords[sl], config.ell, config.k, centers)
            else:
                rad = radii[stencils.indices[sl]]
                out[sl] = gfd_weights(stencils.coords[sl], config.ell, config.gfd_alpha, rad, centers)
        except StencilError as exc:
            failed.extend(exc.centers)
    if failed:
        raise StencilError(f"{len(failed)} stencil(s) failed, first centers {failed[:10]}", failed)
    return out


def assemble_lbo(cloud: PointCloud, config: DiscretizationConfig, stencils: StencilSet | None = None,
                 tree: KdTree | None = None) -> sp.csr_array:
    """Sparse differentiation matrix ``D_h``; row ``i`` stores stencil ``i``'s weights."""
    if stencils is None:
        stencils = build_stencils(cloud, config.n, tree)
    W = stencil_weights(stencils, config)
    N, n = stencils.indices.shape
    rows = np.repeat(np.arange(N), n)
    return as_csr(sp.coo_array((W.ravel(), (rows, stencils.indices.ravel())), shape=(N, N)))


@dataclass
class ShiftedOperator:
    """``L_h = D_h`` (Poisson) or ``L_h = I - mu D_h`` (shifted), materialized as CSR."""

    D: sp.csr_array
    mu: float
    flag: str
    matrix: sp.csr_array

    @property
    def shape(self):
        return self.matrix.shape

    def __matmul__(self, x):
        return self.matrix @ x


def shifted_operator(D: sp.csr_array, mu: float) -> ShiftedOperator:
    if mu < 0:
        raise ValueError("mu must be nonnegative")
    n = D.shape[0]
    M = as_csr(sp.eye_array(n, format="csr") - mu * as_csr(D))
    return ShiftedOperator(D, float(mu), "shifted", M)


def poisson_operator(D: sp.csr_array) -> ShiftedOperator:
    D = as_csr(D)
    return ShiftedOperator(D, 0.0, "poisson", D)
