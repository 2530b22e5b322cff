"""Point clouds, surface samplers, nearest-neighbor queries and tangent planes."""

from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

log = logging.getLogger(__name__)

# Dupin ring cyclide parameters (a, b, c, d) with c = sqrt(a^2 - b^2)
CYCLIDE_A = 2.0
CYCLIDE_B = 1.9
CYCLIDE_C = math.sqrt(CYCLIDE_A**2 - CYCLIDE_B**2)
CYCLIDE_D = 1.0

MAX_ICOSAHEDRAL_REFINEMENT = 10


class CloudFormatError(ValueError):
    """Raised for unparsable or invalid point cloud files."""


@dataclass
class PointCloud:
    """Surface sample points with unit normals, both ``(N, 3)`` arrays."""

    points: np.ndarray
    normals: np.ndarray

    def __post_init__(self):
        self.points = np.ascontiguousarray(self.points, dtype=np.float64)
        self.normals = np.ascontiguousarray(self.normals, dtype=np.float64)
        if self.points.ndim != 2 or self.points.shape[1] != 3:
            raise ValueError(f"points must have shape (N, 3), got {self.points.shape}")
        if self.normals.shape != self.points.shape:
            raise ValueError("normals must have the same shape as points")
        norms = np.linalg.norm(self.normals, axis=1)
        if not np.all(np.abs(norms - 1.0) <= 1e-12):
            raise ValueError("normals must have unit length")

    def __len__(self) -> int:
        return self.points.shape[0]

    def subset(self, index) -> PointCloud:
        index = np.asarray(index)
        return PointCloud(self.points[index], self.normals[index])

    def min_separation(self) -> float:
        """Minimum pairwise distance between points."""
        if len(self) < 2:
            return math.inf
        d, _ = cKDTree(self.points).query(self.points, k=2)
        return float(d[:, 1].min())

    def check_distinct(self) -> None:
        if len(self) < 2:
            return
        pairs = cKDTree(self.points).query_pairs(0.0, output_type="ndarray")
        if pairs.size:
            i, j = min(map(tuple, np.sort(pairs, axis=1)))
            raise CloudFormatError(f"duplicate points: {int(i)} and {int(j)}")


def normalize_rows(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v, axis=1, keepdims=True)


class KdTree:
    """Immutable k-d tree over points in R^3 with index tie-breaking."""

    def __init__(self, points: np.ndarray):
        self.points = np.ascontiguousarray(points, dtype=np.float64)
        self._tree = cKDTree(self.points)

    def __len__(self) -> int:
        return self.points.shape[0]

    def query(self, x: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
        """``k`` nearest points to each row of ``x``, ascending by distance then index."""
        n = len(self)
        if k > n:
            raise ValueError(f"asked for {k} neighbors among {n} points")
        if k < 1:
            raise ValueError("k must be positive")
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        extra = min(n - k, 4)
        while True:
            kk = k + extra
            d, idx = self._tree.query(x, k=kk)
            d = d.reshape(len(x), kk)
            idx = idx.reshape(len(x), kk)
            # recompute distances exactly so equal geometry gives equal keys
            d = np.linalg.norm(self.points[idx] - x[:, None, :], axis=2)
            order = np.lexsort((idx, d), axis=1)
            d = np.take_along_axis(d, order, axis=1)
            idx = np.take_along_axis(idx, order, axis=1)
            # a tie straddling the cut could hide a lower index beyond the queried set
            if kk == n or not np.any(d[:, k - 1] == d[:, -1]):
                return d[:, :k], idx[:, :k]
            extra = min(n - k, 2 * extra + 4)

    def knn(self, center_index: int, k: int) -> np.ndarray:
        return self.query(self.points[center_index], k)[1][0]

    def knn_all(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        """Neighbor lists of every point, each starting with the point itself."""
        d, idx = self.query(self.points, k)
        # force self first (distinct points make this a no-op except for exact ties)
        n = len(self)
        own = np.arange(n)
        if not np.array_equal(idx[:, 0], own):
            for i in np.flatnonzero(idx[:, 0] != own):
                row = list(idx[i])
                if i in row:
                    row.remove(i)
                    row.insert(0, i)
                    idx[i] = row
                else:
                    idx[i] = [i] + row[:-1]
            d = np.linalg.norm(self.points[idx] - self.points[:, None, :], axis=2)
        return d, idx

    def within(self, radius: float, max_neighbors: int = 32) -> tuple[np.ndarray, np.ndarray]:
        """Padded fixed-radius neighbor lists (excluding self); missing slots have index -1."""
        n = len(self)
        k = min(max_neighbors, n)
        while True:
            d, idx = self._tree.query(self.points, k=k, distance_upper_bound=radius)
            d = d.reshape(n, k)
            idx = idx.reshape(n, k)
            if k == n or np.all(np.isinf(d[:, -1])):
                break
            k = min(2 * k, n)
        idx = np.where(np.isinf(d), -1, idx)
        own = idx == np.arange(n)[:, None]
        idx = np.where(own, -1, idx)
        d = np.where(idx < 0, np.inf, d)
        return d, idx


def knn(tree: KdTree, center_index: int, k: int) -> np.ndarray:
    """Exact ``k`` nearest neighbors of a cloud point (itself first)."""
    return tree.knn(center_index, k)


# ---------------------------------------------------------------------------
# samplers


def _icosahedron() -> tuple[np.ndarray, np.ndarray]:
    t = (1.0 + math.sqrt(5.0)) / 2.0
    v = np.array([
        [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
        [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
        [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
    ], dtype=np.float64)
    f = np.array([
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ], dtype=np.int64)
    return normalize_rows(v), f


def icosahedral_sphere_nodes(refinement_k: int) -> PointCloud:
    """Vertices of a ``k``-times subdivided icosahedron on the unit sphere.

    Gives ``10 * 4**k + 2`` points; normals equal the points.
    """
    if refinement_k < 0:
        raise ValueError("refinement level must be nonnegative")
    if refinement_k > MAX_ICOSAHEDRAL_REFINEMENT:
        raise MemoryError(
            f"refinement {refinement_k} exceeds the memory budget (max {MAX_ICOSAHEDRAL_REFINEMENT})")
    v, f = _icosahedron()
    for _ in range(refinement_k):
        edges = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
        edges.sort(axis=1)
        uniq, inv = np.unique(edges, axis=0, return_inverse=True)
        inv = inv.reshape(-1)
        mid = normalize_rows(0.5 * (v[uniq[:, 0]] + v[uniq[:, 1]]))
        m = inv.reshape(3, -1).T + v.shape[0]  # midpoints of edges 01, 12, 20
        a, b, c = f[:, 0], f[:, 1], f[:, 2]
        m01, m12, m20 = m[:, 0], m[:, 1], m[:, 2]
        f = np.concatenate([
            np.stack([a, m01, m20], axis=1),
            np.stack([b, m12, m01], axis=1),
            np.stack([c, m20, m12], axis=1),
            np.stack([m01, m12, m20], axis=1),
        ])
        v = np.concatenate([v, mid])
    v = normalize_rows(v)
    return PointCloud(v, v.copy())


def cyclide_map(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Parametrization of the Dupin ring cyclide on the torus ``[0, 2pi)^2``."""
    a, b, c, d = CYCLIDE_A, CYCLIDE_B, CYCLIDE_C, CYCLIDE_D
    cu, su, cv, sv = np.cos(u), np.sin(u), np.cos(v), np.sin(v)
    den = a - c * cu * cv
    x = (d * (c - a * cu * cv) + b * b * cu) / den
    y = b * su * (a - d * cv) / den
    z = b * sv * (c * cu - d) / den
    return np.stack([x, y, z], axis=-1)


def cyclide_implicit(p: np.ndarray) -> np.ndarray:
    """Implicit function ``F`` of the cyclide; zero on the surface."""
    a, b, c, d = CYCLIDE_A, CYCLIDE_B, CYCLIDE_C, CYCLIDE_D
    x, y, z = p[..., 0], p[..., 1], p[..., 2]
    q = x * x + y * y + z * z - d * d + b * b
    return q * q - 4.0 * (a * x - c * d) ** 2 - 4.0 * b * b * y * y


def cyclide_gradient(p: np.ndarray) -> np.ndarray:
    a, b, c, d = CYCLIDE_A, CYCLIDE_B, CYCLIDE_C, CYCLIDE_D
    x, y, z = p[..., 0], p[..., 1], p[..., 2]
    q = x * x + y * y + z * z - d * d + b * b
    gx = 4.0 * q * x - 8.0 * a * (a * x - c * d)
    gy = 4.0 * q * y - 8.0 * b * b * y
    gz = 4.0 * q * z
    return np.stack([gx, gy, gz], axis=-1)


def _cyclide_area_density(u: np.ndarray, v: np.ndarray, h: float = 1e-6) -> np.ndarray:
    pu = (cyclide_map(u + h, v) - cyclide_map(u - h, v)) / (2 * h)
    pv = (cyclide_map(u, v + h) - cyclide_map(u, v - h)) / (2 * h)
    return np.linalg.norm(np.cross(pu, pv), axis=-1)


MAX_CYCLIDE_CANDIDATES = 1 << 25
_AREA_TABLE = 1024


def cyclide_candidates(n_candidates: int, seed: int) -> np.ndarray:
    """Near-uniform surface candidates from an area-warped golden-ratio lattice.

    A seeded shift of the lattice ``((i + 1/2)/m, i*phi mod 1)`` is pushed
    through the inverse cumulative area distribution of the parameter torus
    (marginal in ``u``, then conditional in ``v``), tabulated on a
    ``1024 x 1024`` grid and inverted piecewise linearly.  The image keeps
    the lattice's low discrepancy with respect to surface area.
    """
    if n_candidates > MAX_CYCLIDE_CANDIDATES:
        raise ValueError(f"{n_candidates} candidates exceed the sampler budget")
    rng = np.random.default_rng(seed)
    shift = rng.random(2)
    G = _AREA_TABLE
    edges = np.linspace(0.0, 2 * np.pi, G + 1)
    mid = 0.5 * (edges[1:] + edges[:-1])
    J = _cyclide_area_density(*np.meshgrid(mid, mid, indexing="ij"))
    cu = np.concatenate([[0.0], np.cumsum(J.sum(axis=1))])
    cu /= cu[-1]
    cv = np.concatenate([np.zeros((G, 1)), np.cumsum(J, axis=1)], axis=1)
    cv /= cv[:, -1:]
    phi = (math.sqrt(5.0) - 1.0) / 2.0
    i = np.arange(n_candidates, dtype=np.float64)
    a = ((i + 0.5) / n_candidates + shift[0]) % 1.0
    b = (i * phi + shift[1]) % 1.0
    u = np.interp(a, cu, edges)
    iu = np.minimum((u * (G / (2 * np.pi))).astype(np.int64), G - 1)
    # one search over all rows: offsetting row r by 2r keeps the flat table sorted
    flat = (cv + 2.0 * np.arange(G)[:, None]).ravel()
    k = np.searchsorted(flat, b + 2.0 * iu, side="right") - 1 - iu * (G + 1)
    k = np.clip(k, 0, G - 1)
    lo, hi = cv[iu, k], cv[iu, k + 1]
    t = (b - lo) / (hi - lo)
    v = edges[k] + t * (edges[k + 1] - edges[k])
    return cyclide_map(u, v)


def cyclide_nodes(n_target: int, seed: int = 0, oversample: int = 8) -> PointCloud:
    """Quasi-uniform ``n_target`` points on the Dupin ring cyclide.

    Dense candidates (``oversample * n_target``) are thinned by weighted
    sample elimination; normals are the normalized implicit gradient.
    """
    from .coarsen import wse_coarsen

    if n_target < 12:
        raise ValueError("cyclide sampler needs at least 12 points")
    if oversample < 8:
        raise ValueError("oversampling factor must be at least 8")
    if n_target * oversample > MAX_CYCLIDE_CANDIDATES:
        raise ValueError(f"n_target={n_target} exceeds the candidate density budget")
    pts = cyclide_candidates(oversample * n_target, seed)
    cand = PointCloud(pts, normalize_rows(cyclide_gradient(pts)))
    keep = wse_coarsen(cand, n_target)
    return cand.subset(np.sort(keep))


# ---------------------------------------------------------------------------
# files


def _parse_floats(line: str, lineno: int, path) -> list[float]:
    try:
        return [float(t) for t in line.split()]
    except ValueError as exc:
        raise CloudFormatError(f"{path}:{lineno}: cannot parse {line.strip()!r}") from exc


def _read_xyz(path: Path):
    pts, nrm = [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            vals = _parse_floats(line, lineno, path)
            if len(vals) not in (3, 6):
                raise CloudFormatError(f"{path}:{lineno}: expected 3 or 6 values, got {len(vals)}")
            pts.append(vals[:3])
            nrm.append(vals[3:] if len(vals) == 6 else None)
    normals = None if any(n is None for n in nrm) else nrm
    return pts, normals


def _read_obj(path: Path):
    pts, nrm = [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if line.startswith("v "):
                vals = _parse_floats(line[2:], lineno, path)
                if len(vals) < 3:
                    raise CloudFormatError(f"{path}:{lineno}: vertex needs 3 coordinates")
                pts.append(vals[:3])
            elif line.startswith("vn "):
                vals = _parse_floats(line[3:], lineno, path)
                if len(vals) != 3:
                    raise CloudFormatError(f"{path}:{lineno}: normal needs 3 components")
                nrm.append(vals)
    # vn records are only per-vertex when counts agree
    normals = nrm if len(nrm) == len(pts) and nrm else None
    return pts, normals


def _read_ply(path: Path):
    with open(path) as fh:
        lines = fh.readlines()
    if not lines or lines[0].strip() != "ply":
        raise CloudFormatError(f"{path}:1: missing 'ply' magic")
    nvert, props, in_vertex, header_end = None, [], False, None
    for lineno, line in enumerate(lines[1:], 2):
        tok = line.split()
        if not tok:
            continue
        if tok[0] == "format" and tok[1] != "ascii":
            raise CloudFormatError(f"{path}:{lineno}: only ascii PLY is supported")
        elif tok[0] == "element":
            in_vertex = tok[1] == "vertex"
            if in_vertex:
                nvert = int(tok[2])
        elif tok[0] == "property" and in_vertex:
            props.append(tok[-1])
        elif tok[0] == "end_header":
            header_end = lineno
            break
    if header_end is None or nvert is None:
        raise CloudFormatError(f"{path}: malformed PLY header")
    try:
        ix = [props.index(c) for c in ("x", "y", "z")]
    except ValueError as exc:
        raise CloudFormatError(f"{path}: PLY vertex lacks x/y/z properties") from exc
    has_n = all(c in props for c in ("nx", "ny", "nz"))
    inx = [props.index(c) for c in ("nx", "ny", "nz")] if has_n else None
    pts, nrm = [], []
    for off in range(nvert):
        lineno = header_end + 1 + off
        if lineno - 1 >= len(lines):
            raise CloudFormatError(f"{path}:{lineno}: unexpected end of file")
        vals = _parse_floats(lines[lineno - 1], lineno, path)
        if len(vals) < len(props):
            raise CloudFormatError(f"{path}:{lineno}: expected {len(props)} values")
        pts.append([vals[i] for i in ix])
        if has_n:
            nrm.append([vals[i] for i in inx])
    return pts, (nrm if has_n else None)


_READERS = {"xyz": _read_xyz, "obj-vertices": _read_obj, "ply-vertices": _read_ply}
_SUFFIX_FORMAT = {".xyz": "xyz", ".txt": "xyz", ".obj": "obj-vertices", ".ply": "ply-vertices"}


def load_cloud(path, format: str | None = None, normal_k: int = 20) -> PointCloud:
    """Read a point cloud in file order.

    Normals come from the file when present (renormalized) and are otherwise
    estimated with :func:`estimate_normals`.
    """
    path = Path(path)
    if format is None:
        format = _SUFFIX_FORMAT.get(path.suffix.lower(), "xyz")
    if format not in _READERS:
        raise ValueError(f"unknown cloud format {format!r}")
    pts, nrm = _READERS[format](path)
    if not pts:
        raise CloudFormatError(f"{path}: no points found")
    pts = np.asarray(pts, dtype=np.float64)
    tmp = PointCloud(pts, np.tile([0.0, 0.0, 1.0], (len(pts), 1)))
    tmp.check_distinct()
    if nrm is not None:
        nrm = np.asarray(nrm, dtype=np.float64)
        lens = np.linalg.norm(nrm, axis=1)
        if np.any(lens == 0):
            raise CloudFormatError(f"{path}: zero-length normal at point {int(np.argmin(lens))}")
        return PointCloud(pts, nrm / lens[:, None])
    return estimate_normals(tmp, k=min(normal_k, len(pts) - 1))


def save_cloud(path, cloud: PointCloud) -> None:
    """Write ``x y z nx ny nz`` lines at full precision."""
    np.savetxt(path, np.hstack([cloud.points, cloud.normals]), fmt="%.17g")


def estimate_normals(cloud: PointCloud, k: int = 20) -> PointCloud:
    """PCA normals over ``k``-neighborhoods (self included) with BFS sign propagation.

    Each connected component of the kNN graph is finally oriented so that
    normals point away from the cloud centroid on average.
    """
    n = len(cloud)
    if n <= k:
        raise ValueError(f"need more than k={k} points to estimate normals, got {n}")
    tree = KdTree(cloud.points)
    # the k-neighborhood counts the point itself, as knn does
    _, idx = tree.knn_all(k)
    nb = cloud.points[idx]
    nb = nb - nb.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", nb, nb)
    evals, evecs = np.linalg.eigh(cov)
    normals = evecs[:, :, 0].copy()
    degenerate = np.abs(evals[:, 1] - evals[:, 0]) <= 1e-10 * np.maximum(evals[:, 2], 1e-300)
    if degenerate.any():
        log.warning("%d points have degenerate neighborhoods; normal direction is arbitrary",
                    int(degenerate.sum()))
    # symmetric kNN adjacency for propagation
    adj = [[] for _ in range(n)]
    for i in range(n):
        for j in idx[i, 1:]:
            adj[i].append(int(j))
            adj[int(j)].append(i)
    seen = np.zeros(n, dtype=bool)
    centroid = cloud.points.mean(axis=0)
    for root in range(n):
        if seen[root]:
            continue
        comp = [root]
        seen[root] = True
        queue = deque([root])
        while queue:
            v = queue.popleft()
            for w in adj[v]:
                if not seen[w]:
                    if normals[w] @ normals[v] < 0:
                        normals[w] = -normals[w]
                    seen[w] = True
                    comp.append(w)
                    queue.append(w)
        comp = np.asarray(comp)
        outward = np.sum(np.einsum("ij,ij->i", normals[comp], cloud.points[comp] - centroid))
        if outward < 0:
            normals[comp] = -normals[comp]
    return PointCloud(cloud.points, normalize_rows(normals))


# ---------------------------------------------------------------------------
# tangent planes


def tangent_basis(normals: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Orthonormal tangent vectors ``t1, t2`` for each row of ``normals``.

    ``t1`` is the global axis least aligned with ``n`` made orthogonal to
    ``n``; ``t2 = n x t1``.
    """
    normals = np.atleast_2d(normals)
    axis = np.argmin(np.abs(normals), axis=1)
    e = np.zeros_like(normals)
    e[np.arange(len(normals)), axis] = 1.0
    t1 = e - np.sum(e * normals, axis=1, keepdims=True) * normals
    t1 = normalize_rows(t1)
    t2 = np.cross(normals, t1)
    return t1, t2


def tangent_projection(cloud: PointCloud, stencil, center_index: int) -> np.ndarray:
    """2-D coordinates ``R^T (x_j - x_c)`` of a stencil in the center's tangent plane."""
    stencil = np.asarray(stencil)
    t1, t2 = tangent_basis(cloud.normals[center_index])
    rel = cloud.points[stencil] - cloud.points[center_index]
    return np.stack([rel @ t1[0], rel @ t2[0]], axis=-1)


@dataclass
class StencilSet:
    """Nearest-neighbor stencils (self first) and their tangent-plane coordinates."""

    indices: np.ndarray  # (N, n)
    coords: np.ndarray  # (N, n, 2)

    @property
    def size(self) -> int:
        return self.indices.shape[1]

    def __len__(self) -> int:
        return self.indices.shape[0]


def build_stencils(cloud: PointCloud, n: int, tree: KdTree | None = None) -> StencilSet:
    if n > len(cloud):
        raise ValueError(f"stencil size {n} exceeds cloud size {len(cloud)}")
    tree = tree or KdTree(cloud.points)
    _, idx = tree.knn_all(n)
    t1, t2 = tangent_basis(cloud.normals)
    rel = cloud.points[idx] - cloud.points[:, None, :]
    coords = np.stack([np.einsum("nkj,nj->nk", rel, t1), np.einsum("nkj,nj->nk", rel, t2)], axis=-1)
    return StencilSet(idx, coords)
