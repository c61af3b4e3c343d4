"""Matrix file formats: Matrix Market text and the MSPM binary dump.

Matrix Market covers interchange (dense `array` and `coordinate` sparse,
via scipy.io).  MSPM is a trivial little-endian binary container for large
dense benchmark matrices:

    bytes 0..3   magic b"MSPM"
    bytes 4..11  rows, unsigned 64-bit little-endian
    bytes 12..19 cols, unsigned 64-bit little-endian
    bytes 20..   rows*cols float64 little-endian, row-major
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Union

import numpy as np
import scipy.io
import scipy.sparse as sp

from .core import MatrixHandle
from .errors import DomainError

MAGIC = b"MSPM"


def write_mtx(path, a: Union[MatrixHandle, np.ndarray], comment: str = "") -> None:
    """Write a matrix to Matrix Market (dense `array` or sparse `coordinate`)."""
    mat = a.raw() if isinstance(a, MatrixHandle) else np.asarray(a, dtype=np.float64)
    scipy.io.mmwrite(str(path), sp.coo_matrix(mat) if sp.issparse(mat) else mat,
                     comment=comment)


def read_mtx(path, sym: str = "general") -> MatrixHandle:
    """Read a Matrix Market file into a MatrixHandle (CSR if coordinate)."""
    mat = scipy.io.mmread(str(path))
    if sp.issparse(mat):
        return MatrixHandle(mat.tocsr(), sym=sym)
    return MatrixHandle(np.asarray(mat, dtype=np.float64), sym=sym)


def write_mspm(path, a: Union[MatrixHandle, np.ndarray]) -> None:
    """Write a dense matrix as an MSPM binary dump (see module docstring)."""
    mat = a.to_dense() if isinstance(a, MatrixHandle) else np.asarray(a, dtype=np.float64)
    if mat.ndim != 2:
        raise DomainError(f"MSPM stores 2-D matrices, got shape {mat.shape}")
    rows, cols = mat.shape
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<QQ", rows, cols))
        fh.write(np.ascontiguousarray(mat, dtype="<f8").tobytes())


def read_mspm(path, sym: str = "general") -> MatrixHandle:
    """Read an MSPM binary dump back into a dense MatrixHandle."""
    raw = Path(path).read_bytes()
    if len(raw) < 20 or raw[:4] != MAGIC:
        raise DomainError(f"{path}: not an MSPM file (bad magic)")
    rows, cols = struct.unpack("<QQ", raw[4:20])
    expected = 20 + rows * cols * 8
    if len(raw) != expected:
        raise DomainError(
            f"{path}: payload size mismatch ({len(raw)} bytes, expected {expected})"
        )
    mat = np.frombuffer(raw, dtype="<f8", offset=20, count=rows * cols)
    return MatrixHandle(mat.reshape(rows, cols).astype(np.float64), sym=sym)


def read_matrix(path, sym: str = "general") -> MatrixHandle:
    """Dispatch on extension: .mtx -> Matrix Market, .mspm -> binary dump."""
    suffix = Path(path).suffix.lower()
    if suffix == ".mtx":
        return read_mtx(path, sym=sym)
    if suffix == ".mspm":
        return read_mspm(path, sym=sym)
    raise DomainError(f"unrecognized matrix file extension {suffix!r} (want .mtx or .mspm)")


def read_vector(path) -> np.ndarray:
    """Read a vector: whitespace-separated text, or a 1-column .mtx."""
    suffix = Path(path).suffix.lower()
    if suffix == ".mtx":
        mat = scipy.io.mmread(str(path))
        arr = mat.toarray() if sp.issparse(mat) else np.asarray(mat)
        return np.asarray(arr, dtype=np.float64).reshape(-1)
    return np.loadtxt(path, dtype=np.float64).reshape(-1)


def write_vector(path, x) -> None:
    np.savetxt(path, np.asarray(x, dtype=np.float64))
