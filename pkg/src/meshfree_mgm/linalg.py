"""Sparse and small dense linear algebra kernels.

Sparse matrices are ``scipy.sparse.csr_array`` objects kept in canonical form
(sorted column indices, no duplicates).  The Gauss-Seidel sweep runs in a
compiled loop because it is inherently sequential.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path

import numba
import numpy as np
import scipy.io
import scipy.linalg
import scipy.sparse as sp


class SingularMatrixError(np.linalg.LinAlgError):
    """Raised when a factorization meets a (numerically) zero pivot."""

    def __init__(self, message: str, index: int | None = None):
        super().__init__(message)
        self.index = index


def as_csr(A) -> sp.csr_array:
    """Return ``A`` as a canonical float64 CSR array (copying if needed)."""
    A = sp.csr_array(A, dtype=np.float64)
    A.sum_duplicates()
    A.sort_indices()
    return A


def check_csr(A: sp.csr_array) -> None:
    """Validate the CSR invariants, raising ``ValueError`` on violation."""
    nrows, ncols = A.shape
    ptr, idx = A.indptr, A.indices
    if ptr.shape[0] != nrows + 1 or ptr[0] != 0 or ptr[-1] != idx.shape[0]:
        raise ValueError("row offsets are inconsistent with nnz")
    if np.any(np.diff(ptr) < 0):
        raise ValueError("row offsets must be nondecreasing")
    if idx.size and (idx.min() < 0 or idx.max() >= ncols):
        raise ValueError("column index out of range")
    # strictly increasing within rows: consecutive differences positive except at row starts
    d = np.diff(idx.astype(np.int64))
    starts = np.zeros(idx.shape[0], dtype=bool)
    starts[ptr[:-1][ptr[:-1] < idx.shape[0]]] = True
    if np.any((d <= 0) & ~starts[1:]):
        raise ValueError("column indices must be strictly increasing within rows")
    if np.isnan(A.data).any():
        raise ValueError("stored value is NaN")


def bandwidth(A) -> int:
    """Bandwidth max |i - j| over stored entries of ``A``."""
    A = sp.coo_array(A)
    if A.nnz == 0:
        return 0
    return int(np.max(np.abs(A.row.astype(np.int64) - A.col)))


def spmv(A: sp.csr_array, x: np.ndarray) -> np.ndarray:
    """Sparse matrix-vector product ``A @ x``."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] != A.shape[1]:
        raise ValueError(f"dimension mismatch: A has {A.shape[1]} columns, x has length {x.shape[0]}")
    return A @ x


def spmm(A: sp.csr_array, B: sp.csr_array) -> sp.csr_array:
    """Sparse product ``A @ B`` in canonical form; exact zeros are dropped."""
    if A.shape[1] != B.shape[0]:
        raise ValueError(f"dimension mismatch: {A.shape} @ {B.shape}")
    C = sp.csr_array(A @ B)
    C.eliminate_zeros()
    C.sum_duplicates()
    C.sort_indices()
    return C


def transpose(A: sp.csr_array) -> sp.csr_array:
    """Transpose as a canonical CSR array."""
    return as_csr(A.T)


@dataclass(frozen=True)
class Permutation:
    """Bijection on ``range(N)``; ``forward[i]`` is the old index placed at ``i``."""

    forward: np.ndarray
    inverse: np.ndarray

    @classmethod
    def from_forward(cls, forward) -> Permutation:
        forward = np.asarray(forward, dtype=np.int64)
        n = forward.shape[0]
        if not np.array_equal(np.sort(forward), np.arange(n)):
            raise ValueError("forward array is not a permutation")
        inverse = np.empty(n, dtype=np.int64)
        inverse[forward] = np.arange(n)
        return cls(forward, inverse)

    @classmethod
    def identity(cls, n: int) -> Permutation:
        return cls(np.arange(n), np.arange(n))

    def __len__(self) -> int:
        return self.forward.shape[0]

    def invert(self) -> Permutation:
        return Permutation(self.inverse, self.forward)


def permute(A: sp.csr_array, p: Permutation, side: str = "both") -> sp.csr_array:
    """Reorder rows, columns or both so that ``A_perm[i, j] = A[p[i], p[j]]``."""
    if side not in ("rows", "cols", "both"):
        raise ValueError(f"side must be rows, cols or both, got {side!r}")
    nrows, ncols = A.shape
    if side in ("rows", "both") and len(p) != nrows:
        raise ValueError(f"permutation of length {len(p)} does not match {nrows} rows")
    if side in ("cols", "both") and len(p) != ncols:
        raise ValueError(f"permutation of length {len(p)} does not match {ncols} columns")
    B = sp.csr_array(A)
    if side in ("rows", "both"):
        B = B[p.forward]
    if side in ("cols", "both"):
        B = B[:, p.forward]
    return as_csr(B)


def rcm_ordering(A) -> Permutation:
    """Reverse Cuthill-McKee ordering of the symmetrized pattern of ``A``.

    Ties are broken by lowest degree, then lowest index, both for the start
    node of each connected component and for the order neighbors are queued.
    """
    A = sp.csr_array(A)
    n = A.shape[0]
    if A.shape[1] != n:
        raise ValueError("RCM requires a square matrix")
    S = sp.coo_array(A)
    rows = np.concatenate([S.row, S.col]).astype(np.int64)
    cols = np.concatenate([S.col, S.row]).astype(np.int64)
    off = rows != cols
    G = sp.csr_array((np.ones(int(off.sum()), dtype=np.int8), (rows[off], cols[off])), shape=(n, n))
    G.sum_duplicates()
    ptr, nbr = G.indptr.astype(np.int64), G.indices.astype(np.int64)
    degree = np.diff(ptr)
    # sort every adjacency list by (degree, index) once up front
    owner = np.repeat(np.arange(n), degree)
    order = np.lexsort((nbr, degree[nbr], owner))
    nbr = nbr[order]
    order = _cuthill_mckee(ptr, nbr, degree)
    return Permutation.from_forward(order[::-1].copy())


@numba.njit(cache=True)
def _cuthill_mckee(ptr, nbr, degree):
    n = degree.shape[0]
    visited = np.zeros(n, dtype=np.bool_)
    order = np.empty(n, dtype=np.int64)
    # candidate start nodes ordered by (degree, index)
    starts = np.argsort(degree * (n + 1) + np.arange(n), kind="mergesort")
    head = 0
    tail = 0
    s = 0
    while tail < n:
        while visited[starts[s]]:
            s += 1
        root = starts[s]
        visited[root] = True
        order[tail] = root
        tail += 1
        while head < tail:
            v = order[head]
            head += 1
            for k in range(ptr[v], ptr[v + 1]):
                w = nbr[k]
                if not visited[w]:
                    visited[w] = True
                    order[tail] = w
                    tail += 1
    return order


@dataclass(frozen=True)
class LUFactors:
    lu: np.ndarray
    piv: np.ndarray

    @property
    def n(self) -> int:
        return self.lu.shape[0]


def dense_lu_factor(A) -> LUFactors:
    """LU factorization with partial pivoting.

    Raises ``SingularMatrixError`` naming the first pivot with
    ``|pivot| < 1e-14 * max|A|``.
    """
    A = A.toarray() if sp.issparse(A) else np.array(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"LU requires a square matrix, got shape {A.shape}")
    scale = np.max(np.abs(A)) if A.size else 0.0
    if scale == 0.0:
        raise SingularMatrixError("matrix is identically zero; singular pivot at index 0", 0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
        lu, piv = scipy.linalg.lu_factor(A, check_finite=True)
    small = np.flatnonzero(np.abs(np.diag(lu)) < 1e-14 * scale)
    if small.size:
        i = int(small[0])
        raise SingularMatrixError(f"singular matrix: pivot {i} is {lu[i, i]:.3e}", i)
    return LUFactors(lu, piv)


def dense_lu_solve(F: LUFactors, b) -> np.ndarray:
    b = np.asarray(b, dtype=np.float64)
    if b.shape[0] != F.n:
        raise ValueError(f"dimension mismatch: factors of size {F.n}, rhs of length {b.shape[0]}")
    return scipy.linalg.lu_solve((F.lu, F.piv), b, check_finite=False)


def diagonal_positions(A: sp.csr_array) -> np.ndarray:
    """Index into ``A.data`` of each diagonal entry; raises if one is missing or zero."""
    pos = _diag_positions(A.indptr, A.indices, A.shape[0])
    bad = np.flatnonzero(pos < 0)
    if bad.size:
        raise ValueError(f"missing diagonal entry at row {int(bad[0])}")
    zero = np.flatnonzero(A.data[pos] == 0.0)
    if zero.size:
        raise ValueError(f"zero diagonal entry at row {int(zero[0])}")
    return pos


@numba.njit(cache=True)
def _diag_positions(ptr, idx, n):
    pos = np.full(n, -1, dtype=np.int64)
    for i in range(n):
        for k in range(ptr[i], ptr[i + 1]):
            if idx[k] == i:
                pos[i] = k
                break
    return pos


@numba.njit(cache=True)
def _gs_forward(ptr, idx, val, diag, u, f):
    n = u.shape[0]
    for i in range(n):
        s = f[i]
        for k in range(ptr[i], ptr[i + 1]):
            s -= val[k] * u[idx[k]]
        u[i] += s / val[diag[i]]


@numba.njit(cache=True)
def _gs_backward(ptr, idx, val, diag, u, f):
    n = u.shape[0]
    for i in range(n - 1, -1, -1):
        s = f[i]
        for k in range(ptr[i], ptr[i + 1]):
            s -= val[k] * u[idx[k]]
        u[i] += s / val[diag[i]]


def gs_sweep(A: sp.csr_array, u: np.ndarray, f: np.ndarray, direction: str = "forward",
             diag: np.ndarray | None = None) -> np.ndarray:
    """One Gauss-Seidel sweep ``u <- u + B^{-1}(f - A u)``, updating ``u`` in place.

    ``B`` is the lower triangle of ``A`` for ``direction="forward"`` and the
    upper triangle for ``"backward"``.  ``diag`` may carry precomputed
    diagonal positions (see :func:`diagonal_positions`).
    """
    n = A.shape[0]
    if A.shape[1] != n or u.shape[0] != n or f.shape[0] != n:
        raise ValueError("dimension mismatch in Gauss-Seidel sweep")
    if diag is None:
        diag = diagonal_positions(A)
    f = np.ascontiguousarray(f, dtype=np.float64)
    if direction == "forward":
        _gs_forward(A.indptr, A.indices, A.data, diag, u, f)
    elif direction == "backward":
        _gs_backward(A.indptr, A.indices, A.data, diag, u, f)
    else:
        raise ValueError(f"direction must be forward or backward, got {direction!r}")
    return u


def write_mtx(path, A) -> None:
    """Write a sparse matrix as Matrix Market coordinate real general."""
    scipy.io.mmwrite(str(path), sp.coo_matrix(A), field="real", symmetry="general", precision=17)


def read_mtx(path) -> sp.csr_array:
    return as_csr(scipy.io.mmread(str(path)))


def write_vector(path, x) -> None:
    """Plain text (one value per line) or ``.npy`` binary, chosen by suffix."""
    path = Path(path)
    if path.suffix == ".npy":
        np.save(path, np.asarray(x, dtype=np.float64))
    else:
        np.savetxt(path, np.asarray(x, dtype=np.float64), fmt="%.17g")


def read_vector(path) -> np.ndarray:
    path = Path(path)
    if path.suffix == ".npy":
        return np.load(path)
    return np.loadtxt(path, dtype=np.float64, ndmin=1)
