import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import sphere
from meshfree_mgm.coarsen import wse_coarsen
from meshfree_mgm.geometry import KdTree, PointCloud
from meshfree_mgm.transfer import TransferError, build_interpolation, interpolation_weights


def cloud(points):
    n = np.asarray(points, dtype=float)
    nrm = np.tile([0.0, 0.0, 1.0], (len(n), 1))
    return PointCloud(n, nrm)


def dense_oracle(coarse, x):
    """Weights from the bordered |r| + constant system, solved densely."""
    m = len(coarse)
    M = np.zeros((m + 1, m + 1))
    M[:m, :m] = np.linalg.norm(coarse[:, None] - coarse[None], axis=-1)
    M[:m, m] = M[m, :m] = 1.0
    rhs = np.r_[np.linalg.norm(coarse - x, axis=1), 1.0]
    return np.linalg.solve(M, rhs)[:m]


def test_coincident_fine_point_gets_unit_row():
    coarse = cloud([[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0]])
    fine = cloud([[1, 0, 0], [0.5, 0.2, 0]])
    P = build_interpolation(coarse, fine).interp.toarray()
    assert np.array_equal(P[0], [0.0, 1.0, 0.0, 0.0])


def test_midpoint_weights_symmetric():
    coarse = cloud([[-1, 0, 0], [1, 0, 0], [0, 10, 0]])
    fine = cloud([[0, 0, 0]])
    w = build_interpolation(coarse, fine).interp.toarray()[0]
    assert w[0] == pytest.approx(w[1], rel=1e-14)
    assert w.sum() == pytest.approx(1.0, abs=1e-14)


def test_weights_match_dense_oracle():
    rng = np.random.default_rng(0)
    C = rng.random((20, 3))
    F = rng.random((60, 3))
    P = build_interpolation(cloud(C), cloud(F)).interp
    _, idx = KdTree(C).query(F, 3)
    for i in range(60):
        row = P[[i]].toarray()[0]
        assert np.allclose(row[idx[i]], dense_oracle(C[idx[i]], F[i]), rtol=1e-12, atol=1e-14)


def test_reproduces_constants_and_beats_nearest_neighbor():
    rng = np.random.default_rng(1)
    C = rng.random((20, 3))
    F = rng.random((60, 3))
    P = build_interpolation(cloud(C), cloud(F)).interp
    assert np.allclose(P @ np.full(20, 3.7), 3.7, rtol=0, atol=1e-13)
    _, nn = KdTree(C).query(F, 1)
    err = np.abs(P @ C[:, 0] - F[:, 0]).max()
    err_nn = np.abs(C[nn, 0] - F[:, 0]).max()
    assert err < err_nn


def test_sphere_transfer_invariants():
    fine = sphere(4)
    keep = wse_coarsen(fine, 640)
    coarse = PointCloud(fine.points[keep], fine.normals[keep])
    pair = build_interpolation(coarse, fine)
    P, R = pair.interp, pair.restrict
    assert P.shape == (len(fine), 640) and R.shape == (640, len(fine))
    assert np.all(np.diff(P.indptr) == 3)
    assert np.abs(P.sum(axis=1) - 1).max() <= 1e-12
    Pt = P.T.tocsr()
    Pt.sort_indices()
    assert np.array_equal(R.indptr, Pt.indptr) and np.array_equal(R.indices, Pt.indices)
    assert np.array_equal(R.data, Pt.data)
    # nested clouds: kept fine points are reproduced exactly
    rows = P[keep].toarray()
    assert np.array_equal(rows, np.eye(640))


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), m=st.integers(1, 6))
def test_rows_sum_to_one(seed, m):
    rng = np.random.default_rng(seed)
    C = rng.standard_normal((30, 3))
    F = rng.standard_normal((40, 3))
    P = build_interpolation(cloud(C), cloud(F), m=m).interp
    assert np.all(np.diff(P.indptr) == m)
    assert np.abs(P.sum(axis=1) - 1).max() <= 1e-12


def test_batched_weights_match_single():
    rng = np.random.default_rng(2)
    Y = rng.random((5, 3, 3))
    X = rng.random((5, 3))
    W = interpolation_weights(Y, X)
    for b in range(5):
        assert np.allclose(W[b], dense_oracle(Y[b], X[b]), rtol=1e-13, atol=1e-15)


def test_errors():
    with pytest.raises(ValueError, match="exceeds"):
        build_interpolation(cloud(np.eye(3)[:2]), cloud(np.eye(3)))
    # coincident coarse points make the bordered system singular
    C = cloud([[0, 0, 0], [0, 0, 0], [1, 0, 0]])
    with pytest.raises(TransferError) as exc:
        build_interpolation(C, cloud([[5, 5, 5], [0.3, 0.1, 0]]))
    assert exc.value.index in (0, 1)
