"""Coarse Nystrom preconditioner M = A_nys + lambda_tilde*I from a sparse sketch.

Given PSD A sketched by a sparse embedding S, the preconditioner is defined by
C = A S^T and W = S A S^T through the regularized inversion formula

    M^{-1} = (1/lt) * (I - C (C^T C + lt*W)^{-1} C^T),      lt = lambda + lambda0,

which never forms the rank-s approximation C W^{-1} C^T explicitly.  lambda0
compensates for the spectral tail that rank l cannot capture: the target value
(2/l) * sum_{i>l} lambda_i(A) is estimated stochastically since the spectrum
is unavailable.

W is symmetrized and carries a small diagonal jitter chosen once at build
time; the jittered W is then used consistently in every formula above, so the
inversion identity remains exact for the (jittered) preconditioner actually
applied.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np
import scipy.linalg

from .config import DEFAULT, Tunables, sketch_nnz_per_column, sketch_rows
from .core import MatrixHandle, as_vector, operator_of
from .errors import (
    DomainError,
    InconsistentEstimate,
    SizeGuardError,
    SketchRankCollapse,
)
from .sketch import make_ose, make_sparse_embedding, sketch_apply_left, sketch_apply_right

# Seed offsets: the sparse embedding consumes (seed, column) keys directly,
# so sibling randomness gets distinct additive offsets.
_SEED_OSE = 1
_SEED_PROBE = 2
_SEED_EST = 5


@dataclass(eq=False)
class NystromPreconditioner:
    """C = A S^T, W = S A S^T and the prefactored inner system.

    `jitter` is the absolute diagonal shift applied to W everywhere it is
    used.  `inner` holds the Cholesky factor of M2 = (Phi C)^T (Phi C) + lt*W_j,
    the direct preconditioner for the level-2 system (C^T C + lt*W_j) y = C^T r.
    """

    C: MatrixHandle
    W: MatrixHandle
    lambda_tilde: float
    lambda0: float
    lam: float
    jitter: float
    inner: tuple
    w_chol: tuple
    l: int
    gamma: int
    seed: int
    phi_rows: int
    kappa_hat: Optional[float] = None
    _w_j: Optional[np.ndarray] = field(default=None, repr=False)
    _exact_factor: Optional[tuple] = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return self.C.rows

    @property
    def s(self) -> int:
        return self.C.cols

    def w_jittered(self) -> np.ndarray:
        if self._w_j is None:
            w = np.array(self.W.to_dense(), copy=True)
            w[np.diag_indices_from(w)] += self.jitter
            self._w_j = w
        return self._w_j

    def diagnostics(self) -> dict:
        """JSON-ready fragment describing the built preconditioner."""
        return {
            "s": self.s,
            "gamma": self.gamma,
            "l": self.l,
            "phi_rows": self.phi_rows,
            "lambda0": self.lambda0,
            "lambda_tilde": self.lambda_tilde,
            "jitter": self.jitter,
            "kappa_hat": self.kappa_hat,
        }


def _apply_to_columns(a, cols: np.ndarray) -> np.ndarray:
    """A @ cols for A given as handle/array/callable."""
    if isinstance(a, MatrixHandle):
        return a.matmat(cols)
    if callable(a) and not isinstance(a, np.ndarray):
        out = np.empty_like(cols)
        for j in range(cols.shape[1]):
            out[:, j] = a(cols[:, j])
        return out
    return np.asarray(a, dtype=np.float64) @ cols


def _jitter_ladder(trace_w: float, s: int, tun: Tunables):
    rel = tun.jitter_initial
    while rel <= tun.jitter_max * (1 + 1e-9):
        yield rel * trace_w / s
        rel *= 10.0


def estimate_lambda0(
    a,
    c: Union[MatrixHandle, np.ndarray],
    w_factor,
    l: int,
    probes: int,
    seed: int,
) -> float:
    """Estimate lambda0 = (2/l) * sum_{i>l} lambda_i(A) stochastically.

    The tail sum equals tr(A - A_nys) when the sketch captures the top-l
    range, so it is estimated by Hutchinson probing with Rademacher vectors:
    z^T A z - ||L^{-1} C^T z||^2 per probe, L the Cholesky factor of the
    (jittered) W.  The estimate is floored at 1e-12 * tr(A) so lambda0 stays
    nonnegative; a markedly negative estimate means the factor is broken.
    """
    if probes < 1:
        raise DomainError(f"need at least one probe, got {probes}")
    a_apply = operator_of(a)
    c_mat = c.to_dense() if isinstance(c, MatrixHandle) else np.asarray(c)
    n = c_mat.shape[0]
    rng = np.random.default_rng([seed & ((1 << 63) - 1), _SEED_PROBE])
    tail_terms = np.empty(probes)
    trace_terms = np.empty(probes)
    for p in range(probes):
        z = 2.0 * rng.integers(0, 2, size=n) - 1.0
        az = a_apply(z)
        zaz = float(z @ az)
        ctz = c_mat.T @ z
        lz = scipy.linalg.solve_triangular(
            w_factor[0], ctz, lower=w_factor[1], check_finite=False
        )
        trace_terms[p] = zaz
        tail_terms[p] = zaz - float(lz @ lz)
    trace_hat = float(np.mean(trace_terms))
    est = float(np.mean(tail_terms))
    if est < -0.1 * trace_hat:
        raise InconsistentEstimate(
            f"tail-trace estimate {est:.6e} is negative beyond tolerance "
            f"(trace estimate {trace_hat:.6e}); W factor is inconsistent"
        )
    floor = 1e-12 * trace_hat
    return (2.0 / l) * max(est, floor)


def tail_probe_factor(a, l: int, n: int, gamma: int, seed: int, tun: Tunables):
    """l-row sketch pieces (C_l, chol factor of jittered W_l) for lambda0.

    The tail sum being estimated is sum_{i>l}, so the probe sketch must have
    exactly l rows: the main embedding's s = O(l log l) rows can reach s >= n
    on small problems, where its Nystrom approximation is exact and the
    estimate collapses to the floor even though the rank-l tail is large.
    """
    emb = make_sparse_embedding(l, n, min(gamma, l), seed + _SEED_EST)
    if isinstance(a, MatrixHandle):
        c_l_handle = sketch_apply_right(a, emb)
    else:
        c_l_handle = MatrixHandle(_apply_to_columns(a, emb.matrix().T.toarray()))
    w_raw = sketch_apply_left(emb, c_l_handle).to_dense()
    w_l = 0.5 * (w_raw + w_raw.T)
    last_exc: Optional[Exception] = None
    for jitter in _jitter_ladder(float(np.trace(w_l)), l, tun):
        w_j = w_l.copy()
        w_j[np.diag_indices_from(w_j)] += jitter
        try:
            chol = scipy.linalg.cho_factor(w_j, lower=True, check_finite=False)
        except scipy.linalg.LinAlgError as exc:
            last_exc = exc
            continue
        return c_l_handle.to_dense(), (chol[0], chol[1])
    raise SketchRankCollapse(
        f"probe W ({l}x{l}) failed Cholesky at every jitter level: {last_exc}"
    )


def build_nystrom_psd(
    a,
    l: int,
    lam: float,
    delta: float,
    seed: int,
    *,
    n: Optional[int] = None,
    probes: Optional[int] = None,
    exact_tail_sum: Optional[float] = None,
    tun: Tunables = DEFAULT,
) -> NystromPreconditioner:
    """Build the two-level Nystrom preconditioner for PSD A.

    Draws the sparse embedding at the default sizing, forms C = A S^T and
    W = S C (symmetrized), estimates lambda0 from a separate l-row probe
    sketch (or uses (2/l)*exact_tail_sum when the exact tail is supplied,
    e.g. in oracle-mode tests), picks the smallest jitter that makes W pass
    Cholesky, and prefactors the inner direct preconditioner
    M2 = (Phi C)^T (Phi C) + lt*W_j.

    Raises SketchRankCollapse if W cannot be factored even at the largest
    jitter — re-seeding is the caller's remedy.
    """
    if isinstance(a, MatrixHandle):
        n = a.rows
    elif not callable(a) or isinstance(a, np.ndarray):
        a = MatrixHandle(np.asarray(a, dtype=np.float64), sym="spd")
        n = a.rows
    elif n is None:
        raise DomainError("operator-only A needs an explicit dimension n")
    if lam < 0:
        raise DomainError(f"lambda must be nonnegative, got {lam}")
    if not (math.log(n) < l < n):
        raise DomainError(f"rank parameter must satisfy log n < l < n, got l={l}, n={n}")

    s = sketch_rows(l, n, delta, tun)
    gamma = sketch_nnz_per_column(l, delta, tun)
    gamma = min(gamma, s)
    emb = make_sparse_embedding(s, n, gamma, seed)

    if isinstance(a, MatrixHandle):
        c_handle = sketch_apply_right(a, emb)
    else:
        c_handle = MatrixHandle(_apply_to_columns(a, emb.matrix().T.toarray()))
    c = c_handle.to_dense()
    w_raw = sketch_apply_left(emb, c_handle).to_dense()
    w = 0.5 * (w_raw + w_raw.T)

    if exact_tail_sum is not None:
        lambda0 = (2.0 / l) * max(float(exact_tail_sum), 0.0)
    else:
        c_l, w_l_chol = tail_probe_factor(a, l, n, gamma, seed, tun)
        lambda0 = estimate_lambda0(
            a, c_l, w_l_chol, l,
            probes if probes is not None else tun.lambda0_probes,
            seed,
        )
    lambda_tilde = lam + lambda0
    if lambda_tilde <= 0.0:
        raise DomainError(
            "lambda + lambda0 must be positive; the matrix appears to be zero"
        )

    trace_w = float(np.trace(w))
    last_exc: Optional[Exception] = None
    for jitter in _jitter_ladder(trace_w, s, tun):
        w_j = w.copy()
        w_j[np.diag_indices_from(w_j)] += jitter
        try:
            w_chol = scipy.linalg.cho_factor(w_j, lower=True, check_finite=False)
        except scipy.linalg.LinAlgError as exc:
            last_exc = exc
            continue

        phi = make_ose(n, s, delta, tun.ose_epsilon, seed + _SEED_OSE, tun=tun)
        pc = phi.apply(c)
        m2 = pc.T @ pc + lambda_tilde * w_j
        try:
            inner = scipy.linalg.cho_factor(m2, lower=True, check_finite=False)
        except scipy.linalg.LinAlgError as exc:
            last_exc = exc
            continue

        pre = NystromPreconditioner(
            C=c_handle,
            W=MatrixHandle(w, sym="spd"),
            lambda_tilde=lambda_tilde,
            lambda0=lambda0,
            lam=lam,
            jitter=jitter,
            inner=inner,
            w_chol=w_chol,
            l=l,
            gamma=gamma,
            seed=seed,
            phi_rows=phi.phi,
        )
        pre._w_j = w_j
        return pre

    raise SketchRankCollapse(
        f"W ({s}x{s}) failed Cholesky at every jitter level up to "
        f"{tun.jitter_max:.1e}*tr(W)/s: {last_exc}"
    )


def apply_minv_via_formula(
    pre: NystromPreconditioner,
    r: np.ndarray,
    inner_solve: Callable[[np.ndarray, float], np.ndarray],
    eps1: float,
) -> np.ndarray:
    """M^{-1} r through the inversion formula with an inexact inner solve.

    inner_solve(rhs, eps1) must return y_hat approximating the solution of
    (C^T C + lt*W_j) y = rhs with relative energy-norm error <= eps1; then
    w_hat = (r - C y_hat) / lt.
    """
    r = as_vector(r, pre.n)
    c = pre.C.to_dense()
    rhs = c.T @ r
    y = inner_solve(rhs, eps1)
    return (r - c @ y) / pre.lambda_tilde


def exact_minv_reference(pre: NystromPreconditioner, r: np.ndarray) -> np.ndarray:
    """M^{-1} r with a dense direct solve of the inner system (test oracle).

    Guard: s <= 2000 so the dense Gram factorization stays cheap.
    """
    if pre.s > 2000:
        raise SizeGuardError(f"exact reference limited to s <= 2000, got s={pre.s}")
    r = as_vector(r, pre.n)
    if pre._exact_factor is None:
        c = pre.C.to_dense()
        g = c.T @ c + pre.lambda_tilde * pre.w_jittered()
        pre._exact_factor = scipy.linalg.cho_factor(g, lower=True, check_finite=False)
    c = pre.C.to_dense()
    y = scipy.linalg.cho_solve(pre._exact_factor, c.T @ r, check_finite=False)
    return (r - c @ y) / pre.lambda_tilde
