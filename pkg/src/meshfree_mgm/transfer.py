"""Coarse-to-fine interpolation from local PHS (``|r|``) interpolants plus a constant."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .geometry import KdTree, PointCloud
from .linalg import as_csr, transpose


class TransferError(np.linalg.LinAlgError):
    def __init__(self, message: str, index: int):
        super().__init__(message)
        self.index = index


@dataclass
class TransferPair:
    interp: sp.csr_array  # N_h x N_H
    restrict: sp.csr_array  # N_H x N_h


def interpolation_weights(coarse_pts: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Weights of ``m`` coarse points for each target, batched over the first axis.

    ``coarse_pts`` has shape ``(B, m, 3)`` and ``targets`` ``(B, 3)``.  Solves
    ``[A 1; 1^T 0] [d; lambda] = [s; 1]`` with ``A_ij = |y_i - y_j|`` and
    ``s_i = |x - y_i|``.
    """
    B, m, _ = coarse_pts.shape
    M = np.zeros((B, m + 1, m + 1))
    M[:, :m, :m] = np.linalg.norm(coarse_pts[:, :, None, :] - coarse_pts[:, None, :, :], axis=-1)
    M[:, :m, m] = 1.0
    M[:, m, :m] = 1.0
    rhs = np.ones((B, m + 1))
    rhs[:, :m] = np.linalg.norm(coarse_pts - targets[:, None, :], axis=-1)
    return np.linalg.solve(M, rhs[..., None])[:, :m, 0]


def build_interpolation(coarse: PointCloud, fine: PointCloud, m: int = 3) -> TransferPair:
    """Interpolation ``I_H^h`` (``m`` entries per row) and restriction ``(I_H^h)^T``.

    Fine points that coincide with a coarse point get an exact unit row; the
    other ``m - 1`` slots of such a row are stored as explicit zeros so that
    every row keeps ``m`` entries.
    """
    NH, Nh = len(coarse), len(fine)
    if m > NH:
        raise ValueError(f"transfer stencil size {m} exceeds coarse cloud size {NH}")
    d, idx = KdTree(coarse.points).query(fine.points, m)
    W = np.empty((Nh, m))
    exact = d[:, 0] == 0.0
    W[exact] = 0.0
    W[exact, 0] = 1.0
    rest = np.flatnonzero(~exact)
    step = 65536
    for s in range(0, rest.size, step):
        sel = rest[s:s + step]
        try:
            W[sel] = interpolation_weights(coarse.points[idx[sel]], fine.points[sel])
        except np.linalg.LinAlgError:
            for i in sel:
                try:
                    interpolation_weights(coarse.points[idx[i]][None], fine.points[i][None])
                except np.linalg.LinAlgError as exc:
                    raise TransferError(f"singular interpolation system at fine point {int(i)}", int(i)) from exc
            raise
    bad = ~np.all(np.isfinite(W), axis=1)
    if np.any(bad):
        i = int(np.flatnonzero(bad)[0])
        raise TransferError(f"singular interpolation system at fine point {i}", i)
    rows = np.repeat(np.arange(Nh), m)
    P = as_csr(sp.coo_array((W.ravel(), (rows, idx.ravel())), shape=(Nh, NH)))
    return TransferPair(P, transpose(P))
