"""Reproducible benchmark instances with known spectra and solutions.

All random matrices are built as Q diag(values) Q^T (or U diag V^T) with
orthogonal factors from sign-fixed QR of seeded Gaussians, so the generated
spectrum equals the requested one to rounding.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .core import MatrixHandle, SpectrumSummary
from .errors import DomainError
from .io import read_matrix

GENERATORS = (
    "k-large-psd",
    "k-large-general",
    "hidden-rotation",
    "block-lowerbound",
    "rbf-kernel",
    "mtx-file",
)

_DENSE_SPECTRUM_LIMIT = 1500


@dataclass
class InstanceSpec:
    """What to generate; unused fields may stay at their defaults."""

    generator: str
    n: int = 0
    m: Optional[int] = None
    k: int = 8
    ratio: float = 1e4
    seed: int = 0
    i: Optional[int] = None  # hidden-rotation indices
    j: Optional[int] = None
    bandwidth: float = 1.0
    path: Optional[str] = None
    tail_low: float = 1.0
    tail_high: float = 2.0

    def __post_init__(self):
        if self.generator not in GENERATORS:
            raise DomainError(
                f"unknown generator {self.generator!r}; pick one of {GENERATORS}"
            )
        if self.generator != "mtx-file" and self.n < 2:
            raise DomainError(f"need n >= 2, got {self.n}")
        if self.generator == "mtx-file" and not self.path:
            raise DomainError("mtx-file generator needs a path")
        if self.generator.startswith("k-large") or self.generator == "block-lowerbound":
            if not (1 <= self.k < self.n):
                raise DomainError(f"need 1 <= k < n, got k={self.k}, n={self.n}")
            if self.ratio <= 1.0:
                raise DomainError(f"ratio must exceed 1, got {self.ratio}")
        if not (0.0 < self.tail_low <= self.tail_high):
            raise DomainError("need 0 < tail_low <= tail_high")


def random_orthogonal(n: int, rng: np.random.Generator, m: Optional[int] = None) -> np.ndarray:
    """Orthonormal columns (m x n, m >= n) from QR with the sign fix Q*sign(diag R)."""
    rows = m if m is not None else n
    g = rng.standard_normal((rows, n))
    q, r = np.linalg.qr(g)
    q *= np.sign(np.diag(r))
    return q


def hidden_rotation_solution(n: int, i: int, j: int) -> np.ndarray:
    """Exact solution of (I + e_i e_j^T - e_j e_i^T) x = 1: all ones, x_i = 0."""
    x = np.ones(n)
    x[i] = 0.0
    return x


def _tail(rng: np.random.Generator, count: int, lo: float, hi: float) -> np.ndarray:
    return rng.uniform(lo, hi, size=count)


def gen_instance(spec: InstanceSpec) -> Tuple[MatrixHandle, np.ndarray, Optional[SpectrumSummary]]:
    """Instantiate (A, b, spectrum).  Spectrum is None when unknown/too big."""
    rng = np.random.default_rng(spec.seed)
    n = spec.n

    if spec.generator == "hidden-rotation":
        i, j = spec.i, spec.j
        if i is None or j is None:
            i, j = map(int, rng.choice(n, size=2, replace=False))
        if not (0 <= i < n and 0 <= j < n) or i == j:
            raise DomainError(f"need distinct indices in [0,{n}), got ({i},{j})")
        a = sp.eye(n, format="lil")
        a[i, j] += 1.0
        a[j, i] -= 1.0
        b = np.ones(n)
        sigma = np.concatenate([[np.sqrt(2.0), np.sqrt(2.0)], np.ones(n - 2)])
        handle = MatrixHandle(a.tocsr())
        handle.hidden_indices = (i, j)
        return handle, b, SpectrumSummary(sigma, "singular-values")

    if spec.generator == "k-large-psd":
        vals = np.concatenate(
            [
                spec.ratio * _tail(rng, spec.k, spec.tail_low, spec.tail_high),
                _tail(rng, n - spec.k, spec.tail_low, spec.tail_high),
            ]
        )
        vals[::-1].sort()
        q = random_orthogonal(n, rng)
        a = (q * vals) @ q.T
        a = 0.5 * (a + a.T)
        b = rng.standard_normal(n)
        return MatrixHandle(a, sym="spd"), b, SpectrumSummary(vals, "eigenvalues")

    if spec.generator == "k-large-general":
        m = spec.m if spec.m is not None else n
        if m < n:
            raise DomainError(f"need m >= n for k-large-general, got {m}x{n}")
        sigma = np.concatenate(
            [
                spec.ratio * _tail(rng, spec.k, spec.tail_low, spec.tail_high),
                _tail(rng, n - spec.k, spec.tail_low, spec.tail_high),
            ]
        )
        sigma[::-1].sort()
        u = random_orthogonal(n, rng, m=m)
        v = random_orthogonal(n, rng)
        a = (u * sigma) @ v.T
        b = rng.standard_normal(m)
        return MatrixHandle(a), b, SpectrumSummary(sigma, "singular-values")

    if spec.generator == "block-lowerbound":
        k = spec.k
        vals_m = spec.ratio * _tail(rng, k, spec.tail_low, spec.tail_high)
        vals_m[::-1].sort()
        q = random_orthogonal(k, rng)
        m_block = (q * vals_m) @ q.T
        m_block = 0.5 * (m_block + m_block.T)
        sigma_min = float(vals_m[-1])
        a = scipy.linalg.block_diag(m_block, sigma_min * np.eye(n - k))
        vals = np.sort(np.concatenate([vals_m, sigma_min * np.ones(n - k)]))[::-1]
        b = rng.standard_normal(n)
        return MatrixHandle(a, sym="spd"), b, SpectrumSummary(vals, "eigenvalues")

    if spec.generator == "rbf-kernel":
        from .apps import KernelSpec, kernel_matrix

        centers = rng.uniform(-4.0, 4.0, size=(10, 2))
        pts = centers[rng.integers(0, 10, size=n)] + 0.3 * rng.standard_normal((n, 2))
        handle = kernel_matrix(KernelSpec("rbf", pts, bandwidth=spec.bandwidth))
        b = rng.standard_normal(n)
        if n <= _DENSE_SPECTRUM_LIMIT:
            vals = np.sort(np.linalg.eigvalsh(handle.to_dense()))[::-1]
            vals = np.maximum(vals, 0.0)
            spectrum = SpectrumSummary(vals, "eigenvalues")
        else:
            spectrum = None
        handle.points = pts
        return handle, b, spectrum

    # mtx-file
    handle = read_matrix(spec.path)
    b = np.ones(handle.rows)
    spectrum = None
    if max(handle.shape) <= _DENSE_SPECTRUM_LIMIT:
        dense = handle.to_dense()
        if handle.rows == handle.cols and np.allclose(dense, dense.T, atol=1e-12):
            vals = np.sort(np.linalg.eigvalsh(dense))[::-1]
            spectrum = SpectrumSummary(vals, "eigenvalues")
        else:
            vals = np.sort(np.linalg.svd(dense, compute_uv=False))[::-1]
            spectrum = SpectrumSummary(vals, "singular-values")
    return handle, b, spectrum
