import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from mspsolve import (
    DimensionMismatch,
    DomainError,
    MatrixHandle,
    NotPsdError,
    SingularMatrixError,
    SpectrumSummary,
    as_vector,
    dense_factor_solve,
    effective_dimension,
    matvec,
    norm_in,
    power_method_norm,
)

import oracles


# -- matvec -------------------------------------------------------------------


def test_matvec_identity():
    assert np.array_equal(matvec(np.eye(3), [1.0, 2.0, 3.0]), [1.0, 2.0, 3.0])


def test_matvec_zero():
    assert np.array_equal(matvec(np.zeros((2, 2)), [7.0, -3.0]), [0.0, 0.0])


def test_matvec_matches_triple_loop():
    # Integer-valued entries keep every product and partial sum exactly
    # representable, so the comparison is bitwise regardless of summation order.
    rng = np.random.default_rng(5)
    a = rng.integers(-8, 9, size=(5, 5)).astype(np.float64)
    x = rng.integers(-8, 9, size=5).astype(np.float64)
    got = matvec(MatrixHandle(a), x)
    want = oracles.matvec_triple_loop(a, x)
    assert np.array_equal(got, want)


def test_matvec_matches_triple_loop_float():
    rng = np.random.default_rng(15)
    a = rng.standard_normal((5, 5))
    x = rng.standard_normal(5)
    got = matvec(MatrixHandle(a), x)
    want = oracles.matvec_triple_loop(a, x)
    assert np.allclose(got, want, rtol=1e-14)


def test_matvec_csr_matches_dense():
    rng = np.random.default_rng(6)
    dense = rng.standard_normal((7, 4))
    dense[rng.random((7, 4)) < 0.6] = 0.0
    h = MatrixHandle(sp.csr_matrix(dense))
    x = rng.standard_normal(4)
    assert np.allclose(h.matvec(x), oracles.matvec_triple_loop(dense, x), rtol=1e-13)


def test_matvec_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        matvec(np.eye(3), [1.0, 2.0])


@settings(max_examples=40, deadline=None)
@given(
    seed=st.integers(0, 2**32 - 1),
    m=st.integers(1, 12),
    n=st.integers(1, 12),
    sparse=st.booleans(),
)
def test_adjoint_consistency(seed, m, n, sparse):
    """y^T (A x) == (A^T y)^T x to 1e-12 relative, dense and CSR."""
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((m, n))
    h = MatrixHandle(sp.csr_matrix(a) if sparse else a)
    x = rng.standard_normal(n)
    y = rng.standard_normal(m)
    left = float(y @ h.matvec(x))
    right = float(h.rmatvec(y) @ x)
    scale = max(abs(left), abs(right), 1e-30)
    assert abs(left - right) <= 1e-12 * max(scale, np.linalg.norm(x) * np.linalg.norm(y))


def test_handle_rejects_nan():
    with pytest.raises(DomainError):
        MatrixHandle(np.array([[1.0, np.nan], [0.0, 1.0]]))


def test_handle_spd_flag_rejects_asymmetric():
    a = np.triu(np.ones((30, 30)))
    with pytest.raises(DomainError):
        MatrixHandle(a, sym="spd")


def test_handle_spd_flag_requires_square():
    with pytest.raises(DomainError):
        MatrixHandle(np.ones((3, 2)), sym="spd")


def test_csr_validation_rejects_bad_indices():
    data = np.array([1.0])
    indices = np.array([5])  # out of range for 2 columns
    indptr = np.array([0, 1, 1])
    bad = sp.csr_matrix((data, indices, indptr), shape=(2, 2))
    with pytest.raises(DomainError):
        MatrixHandle(bad)


def test_as_vector_rejects_nonfinite():
    with pytest.raises(DomainError):
        as_vector([1.0, np.inf])
    with pytest.raises(DimensionMismatch):
        as_vector(np.ones((2, 2)))


# -- norm_in ------------------------------------------------------------------


def test_norm_in_euclidean():
    assert norm_in(lambda x: x, [3.0, 4.0]) == pytest.approx(5.0, rel=1e-15)


def test_norm_in_diagonal_quadratic_form():
    b = np.diag([4.0, 9.0])
    got = norm_in(lambda x: b @ x, [1.0, 1.0])
    want = oracles.quadratic_norm_direct(b, [1.0, 1.0])
    assert got == pytest.approx(want, rel=1e-15)
    assert got == pytest.approx(np.sqrt(13.0), rel=1e-15)


def test_norm_in_zero_operator():
    assert norm_in(lambda x: np.zeros_like(x), [1.0, 2.0]) == 0.0


def test_norm_in_clamps_tiny_negative():
    # x^T B x = -1e-13 while ||x||*||Bx|| ~ 2: inside the clamp window.
    bx = np.array([1.0, -1.0 - 1e-13])
    assert norm_in(lambda x: bx, [1.0, 1.0]) == 0.0


def test_norm_in_rejects_indefinite():
    with pytest.raises(NotPsdError):
        norm_in(lambda x: -x, [1.0, 2.0])


# -- effective dimension ------------------------------------------------------


def test_effective_dimension_uniform():
    s = SpectrumSummary(np.ones(4), "eigenvalues")
    assert effective_dimension(s, 1.0) == pytest.approx(2.0, rel=1e-15)


def test_effective_dimension_three_scales():
    vals = np.array([1.0, 0.1, 0.01])
    s = SpectrumSummary(vals, "eigenvalues")
    got = effective_dimension(s, 0.1)
    assert got == pytest.approx(oracles.effective_dim_direct(vals, 0.1), rel=1e-14)
    assert got == pytest.approx(1.5, rel=1e-4)


def test_effective_dimension_large_lambda():
    s = SpectrumSummary(np.array([1.0]), "eigenvalues")
    assert effective_dimension(s, 1e12) == pytest.approx(0.0, abs=1e-11)


def test_effective_dimension_domain_errors():
    s = SpectrumSummary(np.array([1.0]), "eigenvalues")
    with pytest.raises(DomainError):
        effective_dimension(s, 0.0)
    sv = SpectrumSummary(np.array([1.0]), "singular-values")
    with pytest.raises(DomainError):
        effective_dimension(sv, 1.0)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 30))
def test_effective_dimension_monotone_and_bounded(seed, n):
    rng = np.random.default_rng(seed)
    vals = np.sort(rng.uniform(0.0, 10.0, size=n))[::-1]
    s = SpectrumSummary(vals, "eigenvalues")
    lams = [0.01, 0.1, 1.0, 10.0]
    dims = [effective_dimension(s, lam) for lam in lams]
    assert all(a >= b - 1e-12 for a, b in zip(dims, dims[1:]))
    for lam, d in zip(lams, dims):
        assert d <= min(n, float(np.sum(vals)) / lam) + 1e-12
        assert d >= 0.0


def test_tail_indices_below_gamma_lambda():
    """Indices past (1 + 1/gamma) * d_lambda carry eigenvalues <= gamma*lambda."""
    for seed in range(10):
        rng = np.random.default_rng(seed)
        vals = np.sort(rng.exponential(2.0, size=80))[::-1]
        s = SpectrumSummary(vals, "eigenvalues")
        for lam in (0.05, 0.5, 2.0):
            d = effective_dimension(s, lam)
            for gamma in (0.5, 1.0, 2.0):
                j0 = int(np.ceil((1.0 + 1.0 / gamma) * d))
                assert all(
                    vals[j] <= gamma * lam + 1e-12
                    for j in range(j0, len(vals))
                )


# -- power method -------------------------------------------------------------


def test_power_method_dominant_eigenvalue():
    a = np.diag([5.0, 1.0, 1.0])
    est = power_method_norm(lambda x: a @ x, 3, iters=30, seed=0)
    assert 4.5 <= est <= 5.0


def test_power_method_identity():
    est = power_method_norm(lambda x: x, 8, iters=10, seed=1)
    assert 0.9 <= est <= 1.0


def test_power_method_zero_operator():
    assert power_method_norm(lambda x: np.zeros_like(x), 5) == 0.0


def test_power_method_deterministic():
    a = np.diag([3.0, 2.0, 1.0])
    runs = {power_method_norm(lambda x: a @ x, 3, iters=15, seed=42) for _ in range(3)}
    assert len(runs) == 1


# -- dense factor solve -------------------------------------------------------


def test_factor_solve_diagonal():
    h = MatrixHandle(np.diag([2.0, 4.0]), sym="spd")
    assert np.allclose(dense_factor_solve(h, [2.0, 4.0]), [1.0, 1.0], rtol=1e-15)


def test_factor_solve_residual():
    rng = np.random.default_rng(3)
    g = rng.standard_normal((10, 10))
    a = g @ g.T + 10.0 * np.eye(10)
    b = rng.standard_normal(10)
    h = MatrixHandle(a, sym="spd")
    x = dense_factor_solve(h, b)
    assert np.linalg.norm(a @ x - b) <= 1e-10 * np.linalg.norm(b)


@pytest.mark.filterwarnings("ignore::scipy.linalg.LinAlgWarning")
def test_factor_solve_singular():
    h = MatrixHandle(np.ones((2, 2)))
    with pytest.raises(SingularMatrixError):
        dense_factor_solve(h, [1.0, 1.0])


def test_factor_solve_matches_elimination_oracle():
    rng = np.random.default_rng(9)
    g = rng.standard_normal((120, 120))
    a = g @ g.T + 120.0 * np.eye(120)
    b = rng.standard_normal(120)
    x = dense_factor_solve(MatrixHandle(a, sym="spd"), b)
    want = oracles.gauss_solve(a, b)
    assert np.linalg.norm(x - want) <= 1e-9 * np.linalg.norm(want)


def test_factor_solve_cache_reused_across_rhs():
    rng = np.random.default_rng(4)
    g = rng.standard_normal((6, 6))
    h = MatrixHandle(g @ g.T + 6.0 * np.eye(6), sym="spd")
    b1, b2 = rng.standard_normal(6), rng.standard_normal(6)
    x1 = dense_factor_solve(h, b1)
    assert h._factor is not None
    factor_obj = h._factor
    x2 = dense_factor_solve(h, b2)
    assert h._factor is factor_obj  # same cached factor object
    assert np.allclose(h.to_dense() @ x2, b2, rtol=0, atol=1e-10 * np.linalg.norm(b2))
    assert np.allclose(h.to_dense() @ x1, b1, rtol=0, atol=1e-10 * np.linalg.norm(b1))


def test_factor_solve_matrix_rhs_roundtrip():
    rng = np.random.default_rng(8)
    g = rng.standard_normal((5, 5))
    h = MatrixHandle(g @ g.T + 5.0 * np.eye(5), sym="spd")
    rhs = MatrixHandle(rng.standard_normal((5, 3)))
    out = dense_factor_solve(h, rhs)
    assert isinstance(out, MatrixHandle)
    assert np.allclose(h.to_dense() @ out.to_dense(), rhs.to_dense(), atol=1e-10)


# -- spectrum summary ---------------------------------------------------------


def test_spectrum_requires_descending_order():
    with pytest.raises(DomainError):
        SpectrumSummary(np.array([1.0, 2.0]), "eigenvalues")


def test_spectrum_rejects_nan_and_empty():
    with pytest.raises(DomainError):
        SpectrumSummary(np.array([np.nan]), "eigenvalues")
    with pytest.raises(DomainError):
        SpectrumSummary(np.array([]), "eigenvalues")
