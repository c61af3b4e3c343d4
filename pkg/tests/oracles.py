"""Independent reference implementations backing the test suite.

Everything here is written the slow, obvious way -- scalar loops, explicit
materialization, textbook recurrences, dense factorizations -- so that
agreement with the library is evidence rather than tautology.  This module
does not import anything from mspsolve: where a reproducible random structure
must be compared (the sparse embedding), its documented column law is
re-derived from scratch.
"""

import math

import numpy as np
import scipy.linalg


def matvec_triple_loop(a, x):
    """y = A x with scalar loops, no vectorization."""
    a = np.asarray(a, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    m, n = a.shape
    y = np.zeros(m)
    for i in range(m):
        acc = 0.0
        for j in range(n):
            acc += a[i, j] * x[j]
        y[i] = acc
    return y


def quadratic_norm_direct(b, x):
    """sqrt(x^T B x) evaluated term by term."""
    b = np.asarray(b, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    acc = 0.0
    for i in range(len(x)):
        for j in range(len(x)):
            acc += x[i] * b[i, j] * x[j]
    return math.sqrt(acc)


def effective_dim_direct(eigenvalues, lam):
    """sum_i lambda_i / (lambda_i + lam) as a plain Python sum."""
    return float(sum(float(v) / (float(v) + lam) for v in eigenvalues))


def gauss_solve(a, b):
    """Gaussian elimination with partial pivoting, pure loops."""
    a = np.array(a, dtype=np.float64, copy=True)
    x = np.array(b, dtype=np.float64, copy=True)
    n = a.shape[0]
    for k in range(n):
        p = k + int(np.argmax(np.abs(a[k:, k])))
        if a[p, k] == 0.0:
            raise np.linalg.LinAlgError("singular matrix in oracle solve")
        if p != k:
            a[[k, p]] = a[[p, k]]
            x[[k, p]] = x[[p, k]]
        for i in range(k + 1, n):
            f = a[i, k] / a[k, k]
            a[i, k:] -= f * a[k, k:]
            x[i] -= f * x[k]
    for k in range(n - 1, -1, -1):
        x[k] = (x[k] - a[k, k + 1:] @ x[k + 1:]) / a[k, k]
    return x


def dense_embedding(seed, s, n, gamma):
    """Materialize the sparse sign embedding from its documented column law.

    Per column j: a generator keyed (seed mod 2^64, j) on the Philox counter
    stream draws gamma distinct rows as the first gamma entries of a
    Fisher-Yates shuffle of range(s) (one integers(k, s) draw per step), then
    gamma signs from the same stream; nonzero values are +/- 1/sqrt(gamma).
    """
    out = np.zeros((s, n))
    for col in range(n):
        key = np.array([seed & ((1 << 64) - 1), col], dtype=np.uint64)
        rng = np.random.Generator(np.random.Philox(key=key))
        arr = list(range(s))
        for k in range(gamma):
            j = int(rng.integers(k, s))
            arr[k], arr[j] = arr[j], arr[k]
        rows = arr[:gamma]
        signs = 2.0 * rng.integers(0, 2, size=gamma) - 1.0
        for r, sign in zip(rows, signs):
            out[r, col] = sign / math.sqrt(gamma)
    return out


def plain_lanczos_textbook(a, b, tol=1e-10, t_max=None):
    """Unpreconditioned Lanczos for SPD A x = b, the textbook way.

    Full Q is stored and x_t = Q_t T_t^{-1} (||b|| e_1) is formed with a dense
    solve each iteration; returns the first iterate whose true residual drops
    below tol * ||b||, else the last one.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    n = len(b)
    if t_max is None:
        t_max = n
    beta0 = np.linalg.norm(b)
    q_cols = [b / beta0]
    alphas, betas = [], []
    q_prev = np.zeros(n)
    for t in range(1, t_max + 1):
        q = q_cols[-1]
        v = a @ q
        if betas:
            v = v - betas[-1] * q_prev
        alpha = float(q @ v)
        v = v - alpha * q
        alphas.append(alpha)
        tri = np.diag(alphas)
        if betas:
            tri += np.diag(betas, 1) + np.diag(betas, -1)
        y = np.linalg.solve(tri, beta0 * np.eye(t)[:, 0])
        x = np.column_stack(q_cols) @ y
        if np.linalg.norm(a @ x - b) <= tol * beta0:
            return x, t
        beta = float(np.linalg.norm(v))
        if beta == 0.0:
            return x, t
        betas.append(beta)
        q_prev = q
        q_cols.append(v / beta)
    return x, t_max


def dense_minv_apply(c, w_j, lt, r):
    """M^{-1} r for M = C W_j^{-1} C^T + lt*I formed explicitly."""
    c = np.asarray(c, dtype=np.float64)
    m = c @ np.linalg.solve(w_j, c.T) + lt * np.eye(c.shape[0])
    return np.linalg.solve(m, np.asarray(r, dtype=np.float64))


def nystrom_dense(c, w_j):
    """The rank-s approximation C W_j^{-1} C^T as an explicit array."""
    c = np.asarray(c, dtype=np.float64)
    return c @ np.linalg.solve(w_j, c.T)


def psd_sqrt_pair(a):
    """(A^{1/2}, A^{-1/2}) via a dense eigendecomposition."""
    vals, vecs = np.linalg.eigh(np.asarray(a, dtype=np.float64))
    vals = np.maximum(vals, 0.0)
    root = (vecs * np.sqrt(vals)) @ vecs.T
    inv_root = (vecs * (1.0 / np.sqrt(vals))) @ vecs.T
    return root, inv_root


def pencil_eig_range(top, bottom):
    """(min, max) generalized eigenvalues of the SPD pencil (top, bottom)."""
    vals = scipy.linalg.eigh(
        np.asarray(top, dtype=np.float64),
        np.asarray(bottom, dtype=np.float64),
        eigvals_only=True,
    )
    return float(vals[0]), float(vals[-1])


def tridiag_e1_dense(alpha, beta, scale):
    """scale * T^{-1} e_1 through an explicit dense tridiagonal solve."""
    alpha = np.asarray(alpha, dtype=np.float64)
    beta = np.asarray(beta, dtype=np.float64)
    t = np.diag(alpha)
    if len(beta):
        t += np.diag(beta, 1) + np.diag(beta, -1)
    e1 = np.zeros(len(alpha))
    e1[0] = scale
    return np.linalg.solve(t, e1)


def least_squares_qr(a, b):
    """argmin ||Ax - b|| by explicit thin QR."""
    q, r = np.linalg.qr(np.asarray(a, dtype=np.float64))
    return scipy.linalg.solve_triangular(r, q.T @ np.asarray(b, dtype=np.float64))
