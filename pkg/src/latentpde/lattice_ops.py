"""Sparse periodic lattice operators.

States on an ``n x n`` periodic pixel grid are flattened row-major:
pixel ``(i, j)`` maps to index ``k = n*i + j``.  Axis ``x`` moves the
first index ``i``, axis ``y`` the second index ``j``; both wrapModulo n.

The divergence-form generator follows the standard staggered composition

    A = D_x^- diag(a) D_x^+ + D_y^- diag(a) D_y^+

with forward differences ``D^+ u_k = (u_{k+1} - u_k)/dx`` and backward
differences ``D^- u_k = (u_k - u_{k-1})/dx``.  For constant ``a = 1`` this
reduces to the five-point Laplacian stencil.
"""

from dataclasses import dataclass
import struct

import numpy as np
import scipy.sparse as sp

from .errors import DataFormatError, ParameterError


@dataclass(frozen=True)
class GridSpec:
    """Periodic square grid: n pixels per side, spacing dx."""

    n: int
    dx: float = 1.0

    def __post_init__(self):
        if self.n < 2:
            raise ParameterError(f"grid must have n >= 2, got {self.n}")
        if self.dx <= 0:
            raise ParameterError(f"dx must be > 0, got {self.dx}")


def _flat_index(i, j, n):
    return (n * (i % n) + (j % n)).ravel() if isinstance(i, np.ndarray) else n * (i % n) + (j % n)


def build_difference(grid: GridSpec, axis: str, direction: str) -> sp.csr_array:
    """One-sided periodic difference operator of shape (n^2, n^2)."""
    if axis not in ("x", "y"):
        raise ParameterError(f"axis must be 'x' or 'y', got {axis!r}")
    if direction not in ("forward", "backward"):
        raise ParameterError(f"direction must be 'forward' or 'backward', got {direction!r}")
    n = grid.n
    i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    here = _flat_index(i, j, n)
    shift = 1 if direction == "forward" else -1
    there = _flat_index(i + shift, j, n) if axis == "x" else _flat_index(i, j + shift, n)
    sign = 1.0 if direction == "forward" else -1.0
    rows = np.concatenate([here, here])
    cols = np.concatenate([here, there])
    vals = np.concatenate([np.full(n * n, -sign / grid.dx), np.full(n * n, sign / grid.dx)])
    op = sp.csr_array(sp.coo_array((vals, (rows, cols)), shape=(n * n, n * n)))
    op.sum_duplicates()
    op.sort_indices()
    return op


def build_modified_laplacian(a: np.ndarray, grid: GridSpec) -> sp.csr_array:
    """Divergence-form generator with per-pixel coefficient field a > 0.

    Row sums are zero (constants are in the kernel) and the operator is
    symmetric on the torus since the backward difference is minus the
    transpose of the forward one.
    """
    a = np.asarray(a, dtype=float)
    if a.shape != (grid.n, grid.n):
        raise ParameterError(f"coefficient field shape {a.shape} != {(grid.n, grid.n)}")
    if not np.all(a > 0):
        raise ParameterError("coefficient field must be strictly positive")
    diag = sp.dia_array((a.ravel()[None, :], [0]), shape=(grid.n**2, grid.n**2))
    out = None
    for axis in ("x", "y"):
        fwd = build_difference(grid, axis, "forward")
        bwd = build_difference(grid, axis, "backward")
        term = bwd @ diag @ fwd
        out = term if out is None else out + term
    out = sp.csr_array(out)
    out.sum_duplicates()
    out.sort_indices()
    return out


def build_wave_generator(a: np.ndarray, grid: GridSpec) -> sp.csr_array:
    """First-order wave generator [[0, I], [A, 0]] on stacked (u, v) states."""
    lap = build_modified_laplacian(a, grid)
    eye = sp.identity(grid.n**2, format="csr")
    op = sp.csr_array(sp.bmat([[None, eye], [lap, None]], format="csr"))
    op.sort_indices()
    return op


def build_tokenizer_matrix(grid: GridSpec, patch: int, wave: bool = False) -> sp.csr_array:
    """Patch-averaging token map of shape (m, n^2), m = (n/patch)^2.

    Each row averages one patch x patch block of pixels.  With
    ``wave=True`` the columns span a stacked (u, v) state of length
    2*n^2 and only the amplitude block u is read; the velocity block is
    ignored entirely.
    """
    n = grid.n
    if patch < 1 or n % patch != 0:
        raise ParameterError(f"patch {patch} must divide grid size {n}")
    blocks = n // patch
    m = blocks * blocks
    rows = np.empty(m * patch * patch, dtype=np.int64)
    cols = np.empty(m * patch * patch, dtype=np.int64)
    idx = 0
    for bi in range(blocks):
        for bj in range(blocks):
            row = bi * blocks + bj
            for di in range(patch):
                for dj in range(patch):
                    rows[idx] = row
                    cols[idx] = n * (bi * patch + di) + (bj * patch + dj)
                    idx += 1
    vals = np.full(m * patch * patch, 1.0 / (patch * patch))
    ncols = 2 * n * n if wave else n * n
    op = sp.csr_array(sp.coo_array((vals, (rows, cols)), shape=(m, ncols)))
    op.sum_duplicates()
    op.sort_indices()
    return op


_MAGIC = b"LPSP"
_VERSION = 1


def save_operator(op, path) -> None:
    """Write a sparse operator as sorted COO triplets.

    Layout (all little-endian): 4-byte magic ``LPSP``, uint32 version,
    int64 rows/cols/nnz, then nnz int64 row indices, nnz int64 column
    indices, nnz float64 values.
    """
    coo = sp.coo_array(op)
    order = np.lexsort((coo.col, coo.row))
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", _VERSION))
        fh.write(struct.pack("<qqq", coo.shape[0], coo.shape[1], coo.nnz))
        fh.write(coo.row[order].astype("<i8").tobytes())
        fh.write(coo.col[order].astype("<i8").tobytes())
        fh.write(coo.data[order].astype("<f8").tobytes())


def load_operator(path) -> sp.csr_array:
    """Inverse of :func:`save_operator`; validates header and sizes."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != _MAGIC:
        raise DataFormatError(f"{path}: not a sparse-operator file")
    (version,) = struct.unpack("<I", blob[4:8])
    if version != _VERSION:
        raise DataFormatError(f"{path}: unsupported version {version}")
    nrows, ncols, nnz = struct.unpack("<qqq", blob[8:32])
    need = 32 + nnz * (8 + 8 + 8)
    if len(blob) != need:
        raise DataFormatError(f"{path}: expected {need} bytes, found {len(blob)}")
    rows = np.frombuffer(blob, dtype="<i8", count=nnz, offset=32)
    cols = np.frombuffer(blob, dtype="<i8", count=nnz, offset=32 + 8 * nnz)
    vals = np.frombuffer(blob, dtype="<f8", count=nnz, offset=32 + 16 * nnz)
    if nnz and (rows.min() < 0 or rows.max() >= nrows or cols.min() < 0 or cols.max() >= ncols):
        raise DataFormatError(f"{path}: triplet indices out of range")
    op = sp.csr_array(sp.coo_array((vals, (rows, cols)), shape=(nrows, ncols)))
    op.sum_duplicates()
    op.sort_indices()
    return op
