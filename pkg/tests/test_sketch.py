import math

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from mspsolve import (
    DimensionMismatch,
    DomainError,
    MatrixHandle,
    make_ose,
    make_sparse_embedding,
    sketch_apply_left,
    sketch_apply_right,
)
from mspsolve.config import DEFAULT, ose_rows

import oracles


# -- construction -------------------------------------------------------------


def test_every_column_has_gamma_nonzeros():
    emb = make_sparse_embedding(4, 10, 2, seed=0)
    dense = emb.toarray()
    for col in range(10):
        nz = dense[:, col][dense[:, col] != 0.0]
        assert len(nz) == 2
        assert np.allclose(np.abs(nz), 1.0 / math.sqrt(2.0))


def test_gamma_equals_s_saturates():
    emb = make_sparse_embedding(3, 6, 3, seed=1)
    dense = emb.toarray()
    assert np.all(dense != 0.0)
    assert np.allclose(np.abs(dense), 1.0 / math.sqrt(3.0))


def test_same_seed_reproduces_structure():
    a = make_sparse_embedding(8, 20, 3, seed=42).toarray()
    b = make_sparse_embedding(8, 20, 3, seed=42).toarray()
    assert np.array_equal(a, b)


def test_gamma_larger_than_s_rejected():
    with pytest.raises(DomainError):
        make_sparse_embedding(2, 5, 3, seed=0)


def test_matches_documented_column_law():
    """The embedding must equal an independent rebuild from its column law."""
    emb = make_sparse_embedding(7, 12, 3, seed=123)
    want = oracles.dense_embedding(123, 7, 12, 3)
    assert np.array_equal(emb.toarray(), want)


@settings(max_examples=30, deadline=None)
@given(
    seed=st.integers(0, 2**31 - 1),
    s=st.integers(2, 12),
    gamma=st.integers(1, 6),
)
def test_column_norms_exactly_one(seed, s, gamma):
    gamma = min(gamma, s)
    n = s + 3
    dense = make_sparse_embedding(s, n, gamma, seed).toarray()
    norms = np.linalg.norm(dense, axis=0)
    assert np.allclose(norms, 1.0, atol=1e-12)
    # distinct rows per column: count again after dropping zeros
    assert (np.count_nonzero(dense, axis=0) == gamma).all()


def test_mean_gram_close_to_identity():
    """E[S^T S] = I: average over 200 seeds at s = n = 32."""
    acc = np.zeros((32, 32))
    for seed in range(200):
        d = make_sparse_embedding(32, 32, 4, seed).toarray()
        acc += d.T @ d
    acc /= 200.0
    assert np.max(np.abs(acc - np.eye(32))) < 0.15


# -- application --------------------------------------------------------------


def test_apply_right_identity_gives_s_transpose():
    emb = make_sparse_embedding(4, 9, 2, seed=3)
    out = sketch_apply_right(np.eye(9), emb)
    assert np.allclose(out.to_dense(), emb.toarray().T, atol=1e-15)


def test_apply_right_matches_materialization():
    rng = np.random.default_rng(7)
    a = rng.standard_normal((6, 8))
    emb = make_sparse_embedding(3, 8, 2, seed=11)
    got = sketch_apply_right(MatrixHandle(a), emb).to_dense()
    want = a @ oracles.dense_embedding(11, 3, 8, 2).T
    assert np.allclose(got, want, rtol=1e-13, atol=1e-13)


def test_apply_right_unit_impulse():
    emb = make_sparse_embedding(5, 7, 2, seed=4)
    a = np.zeros((3, 7))
    a[1, 6] = 1.0
    out = sketch_apply_right(a, emb).to_dense()
    assert np.allclose(out[1], emb.toarray()[:, 6], atol=1e-15)
    assert np.allclose(out[0], 0.0)
    assert np.allclose(out[2], 0.0)


def test_apply_right_sparse_operand():
    rng = np.random.default_rng(17)
    dense = rng.standard_normal((9, 11))
    dense[rng.random((9, 11)) < 0.7] = 0.0
    emb = make_sparse_embedding(4, 11, 2, seed=5)
    got = sketch_apply_right(MatrixHandle(sp.csr_matrix(dense)), emb).to_dense()
    want = dense @ emb.toarray().T
    assert np.allclose(got, want, rtol=1e-13, atol=1e-13)


def test_apply_left_identity_materializes():
    emb = make_sparse_embedding(4, 6, 2, seed=6)
    out = sketch_apply_left(emb, np.eye(6))
    assert np.allclose(out.to_dense(), emb.toarray(), atol=1e-15)


def test_apply_left_zero():
    emb = make_sparse_embedding(4, 6, 2, seed=6)
    out = sketch_apply_left(emb, np.zeros((6, 3)))
    assert np.all(out.to_dense() == 0.0)


def test_apply_left_matches_materialization():
    rng = np.random.default_rng(8)
    b = rng.standard_normal((10, 4))
    emb = make_sparse_embedding(5, 10, 3, seed=12)
    got = sketch_apply_left(emb, b).to_dense()
    want = oracles.dense_embedding(12, 5, 10, 3) @ b
    assert np.allclose(got, want, rtol=1e-13, atol=1e-13)


def test_apply_dimension_mismatch():
    emb = make_sparse_embedding(3, 8, 2, seed=0)
    with pytest.raises(DimensionMismatch):
        sketch_apply_right(np.eye(5), emb)
    with pytest.raises(DimensionMismatch):
        sketch_apply_left(emb, np.eye(5))


# -- OSE ----------------------------------------------------------------------


def test_ose_identity_when_d_equals_n():
    phi = make_ose(32, 32, 0.1, 0.5, seed=0)
    assert phi.is_identity
    x = np.random.default_rng(0).standard_normal((32, 4))
    assert np.array_equal(phi.apply(x), x)


def test_ose_row_count_scales_with_epsilon():
    rows_half = ose_rows(100000, 50, 0.1, 0.5, DEFAULT)
    rows_quarter = ose_rows(100000, 50, 0.1, 0.25, DEFAULT)
    assert rows_quarter == pytest.approx(4 * rows_half, rel=0.01)


def test_ose_parameter_domain():
    with pytest.raises(DomainError):
        make_ose(10, 20, 0.1, 0.5, seed=0)  # d > n
    with pytest.raises(DomainError):
        make_ose(20, 10, 0.1, 0.9, seed=0)  # epsilon too large
    with pytest.raises(DomainError):
        make_ose(20, 10, 0.7, 0.5, seed=0)  # delta too large


def test_ose_subspace_embedding_2000x50():
    """Singular values of Phi @ U inside [1/(1+eps), 1+eps], >= 9/10 seeds."""
    eps = 0.5
    hits = 0
    rng = np.random.default_rng(2024)
    u = np.linalg.qr(rng.standard_normal((2000, 50)))[0]
    for seed in range(10):
        phi = make_ose(2000, 50, 0.1, eps, seed=seed)
        sv = np.linalg.svd(phi.apply(u), compute_uv=False)
        if sv[-1] >= 1.0 / (1.0 + eps) and sv[0] <= 1.0 + eps:
            hits += 1
    assert hits >= 9


def test_ose_subspace_embedding_default_sizing_rate():
    """sigma(Phi U) within 1 +/- eps for n=1024, d=20 in >= 90% of 50 seeds."""
    eps = DEFAULT.ose_epsilon
    rng = np.random.default_rng(77)
    u = np.linalg.qr(rng.standard_normal((1024, 20)))[0]
    hits = 0
    for seed in range(50):
        phi = make_ose(1024, 20, 0.01, eps, seed=seed)
        sv = np.linalg.svd(phi.apply(u), compute_uv=False)
        if sv[-1] >= 1.0 / (1.0 + eps) and sv[0] <= 1.0 + eps:
            hits += 1
    assert hits >= 45
