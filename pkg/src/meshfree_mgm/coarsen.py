"""Weighted sample elimination (WSE) and multilevel size schedules.

Points are eliminated greedily from a max-heap keyed on a crowding weight
``sum_j (1 - min(d_ij, 2 r_max) / (2 r_max))**8`` over neighbors within
``2 r_max``.  Equal weights pop lowest index first, which makes every run
deterministic.
"""

from __future__ import annotations

import numba
import numpy as np

from .geometry import KdTree, PointCloud

WEIGHT_EXPONENT = 8.0


@numba.njit(cache=True)
def _before(w, a, b):
    # heap order: larger weight first, lower index on ties
    return w[a] > w[b] or (w[a] == w[b] and a < b)


@numba.njit(cache=True)
def _sift_up(heap, pos, w, i):
    item = heap[i]
    while i > 0:
        parent = (i - 1) >> 1
        if _before(w, item, heap[parent]):
            heap[i] = heap[parent]
            pos[heap[i]] = i
            i = parent
        else:
            break
    heap[i] = item
    pos[item] = i


@numba.njit(cache=True)
def _sift_down(heap, pos, w, i, size):
    item = heap[i]
    while True:
        child = 2 * i + 1
        if child >= size:
            break
        if child + 1 < size and _before(w, heap[child + 1], heap[child]):
            child += 1
        if _before(w, heap[child], item):
            heap[i] = heap[child]
            pos[heap[i]] = i
            i = child
        else:
            break
    heap[i] = item
    pos[item] = i


@numba.njit(cache=True)
def _heapify(heap, pos, w, size):
    for i in range(size):
        pos[heap[i]] = i
    for i in range(size // 2 - 1, -1, -1):
        _sift_down(heap, pos, w, i, size)


@numba.njit(cache=True)
def _pop(heap, pos, w, size):
    top = heap[0]
    size -= 1
    pos[top] = -1
    if size > 0:
        heap[0] = heap[size]
        pos[heap[0]] = 0
        _sift_down(heap, pos, w, 0, size)
    return top, size


@numba.njit(cache=True)
def _update(heap, pos, w, item, new_weight, size):
    old = w[item]
    w[item] = new_weight
    i = pos[item]
    if new_weight < old:
        _sift_down(heap, pos, w, i, size)
    else:
        _sift_up(heap, pos, w, i)


class EliminationHeap:
    """Indexed max-heap over point weights supporting key updates.

    ``pos[i]`` is the heap slot of point ``i`` or -1 once it has been popped.
    """

    def __init__(self, weights):
        self.weights = np.array(weights, dtype=np.float64)
        n = self.weights.shape[0]
        self.heap = np.arange(n, dtype=np.int64)
        self.pos = np.empty(n, dtype=np.int64)
        self.size = n
        _heapify(self.heap, self.pos, self.weights, n)

    def __len__(self) -> int:
        return self.size

    def __contains__(self, item: int) -> bool:
        return self.pos[item] >= 0

    def top(self) -> int:
        return int(self.heap[0])

    def pop(self) -> int:
        if self.size == 0:
            raise IndexError("pop from empty heap")
        item, self.size = _pop(self.heap, self.pos, self.weights, self.size)
        return int(item)

    def update(self, item: int, weight: float) -> None:
        if self.pos[item] < 0:
            raise KeyError(f"point {item} is not in the heap")
        _update(self.heap, self.pos, self.weights, item, float(weight), self.size)

    def is_valid(self) -> bool:
        h, w = self.heap[: self.size], self.weights
        for i in range(1, self.size):
            parent = (i - 1) // 2
            a, b = h[parent], h[i]
            if not (w[a] > w[b] or (w[a] == w[b] and a < b)):
                return False
        live = np.flatnonzero(self.pos >= 0)
        return live.size == self.size and np.array_equal(np.sort(h), live) and \
            np.array_equal(self.pos[h], np.arange(self.size))


@numba.njit(cache=True)
def _eliminate(nbr, wij, weights, n_target):
    n = weights.shape[0]
    heap = np.arange(n)
    pos = np.empty(n, dtype=np.int64)
    w = weights.copy()
    _heapify(heap, pos, w, n)
    size = n
    while size > n_target:
        top, size = _pop(heap, pos, w, size)
        for k in range(nbr.shape[1]):
            j = nbr[top, k]
            if j >= 0 and pos[j] >= 0:
                _update(heap, pos, w, j, w[j] - wij[top, k], size)
    return np.sort(heap[:size])


def elimination_radius(cloud: PointCloud, n_target: int, tree: KdTree | None = None) -> float:
    """``r_max = r_h * sqrt(N / N_target)`` with ``r_h`` half the median NN spacing."""
    tree = tree or KdTree(cloud.points)
    d, _ = tree._tree.query(cloud.points, k=2)
    r_h = 0.5 * float(np.median(d[:, 1]))
    return r_h * np.sqrt(len(cloud) / n_target)


def wse_weights(cloud: PointCloud, r_max: float, tree: KdTree | None = None):
    """Neighbor lists within ``2 r_max`` and their pairwise weights."""
    tree = tree or KdTree(cloud.points)
    rad = 2.0 * r_max
    d, nbr = tree.within(rad)
    wij = np.where(nbr >= 0, (1.0 - np.minimum(d, rad) / rad) ** WEIGHT_EXPONENT, 0.0)
    return nbr.astype(np.int64), wij


def wse_coarsen(cloud: PointCloud, n_target: int, r_max: float | None = None) -> np.ndarray:
    """Indices (sorted) of a quasi-uniform subset of exactly ``n_target`` points."""
    n = len(cloud)
    if not 1 <= n_target < n:
        raise ValueError(f"target size must satisfy 1 <= N_target < N={n}, got {n_target}")
    tree = KdTree(cloud.points)
    if r_max is None:
        r_max = elimination_radius(cloud, n_target, tree)
    nbr, wij = wse_weights(cloud, r_max, tree)
    weights = wij.sum(axis=1)
    return _eliminate(nbr, wij, weights, n_target)


def hierarchy_sizes(n_fine: int, n_min: int) -> list[int]:
    """Level sizes ``floor(N_1 / 4**j)`` for the ``p`` levels of the hierarchy.

    ``p = floor(log(N_1/N_min)/log 4) + 1``, evaluated in integer arithmetic;
    a fine level below ``N_min`` yields a single level.
    """
    if n_min < 1:
        raise ValueError("N_min must be positive")
    sizes = [int(n_fine)]
    while sizes[-1] // 4 >= n_min:
        sizes.append(sizes[-1] // 4)
    return sizes
