"""Sparse-matrix kernels: CSR canonicalization, products, and M-matrix filters.

Matrices are ``scipy.sparse.csr_matrix`` with sorted, duplicate-free column
indices (enforced by :func:`canonical_csr`); vectors are 1-D numpy arrays.
All functions are pure: inputs are never mutated.
"""

from __future__ import annotations

import numpy as np
import scipy.io
import scipy.sparse as sp

# Magnitudes below this are treated as numerical zeros and removed from
# sparsity patterns. Keeps tiny-but-real values, drops exact zeros.
DROP_TOL = 1e-300


def canonical_csr(A, drop_below: float = DROP_TOL) -> sp.csr_matrix:
    """Return ``A`` as CSR with sorted columns, summed duplicates, and
    entries of magnitude below ``drop_below`` removed from the pattern."""
    A = sp.csr_matrix(A, copy=True)
    A.sum_duplicates()
    A.sort_indices()
    mask = np.abs(A.data) >= drop_below
    if not mask.all():
        coo = A.tocoo()
        A = sp.csr_matrix(
            (coo.data[mask], (coo.row[mask], coo.col[mask])), shape=A.shape
        )
        A.sum_duplicates()
        A.sort_indices()
    return A


def spmv(A: sp.csr_matrix, x: np.ndarray) -> np.ndarray:
    """Matrix-vector product ``y = A x``.

    Row sums are accumulated left to right within each row, so results are
    deterministic for a fixed sparsity pattern.
    """
    x = np.asarray(x)
    if A.shape[1] != x.shape[0]:
        raise ValueError(
            f"dimension mismatch: matrix is {A.shape[0]}x{A.shape[1]}, "
            f"vector has length {x.shape[0]}"
        )
    return A @ x


def triple_product(R: sp.csr_matrix, A: sp.csr_matrix, P: sp.csr_matrix) -> sp.csr_matrix:
    """Galerkin triple product ``R A P`` with numerical zeros dropped."""
    if R.shape[1] != A.shape[0]:
        raise ValueError(
            f"dimension mismatch: R is {R.shape[0]}x{R.shape[1]}, A has {A.shape[0]} rows"
        )
    if A.shape[1] != P.shape[0]:
        raise ValueError(
            f"dimension mismatch: A is {A.shape[0]}x{A.shape[1]}, P has {P.shape[0]} rows"
        )
    return canonical_csr((R @ A) @ P)


def filter_to_m(A: sp.csr_matrix) -> sp.csr_matrix:
    """Keep only the negative off-diagonal part of ``A``.

    Off-diagonal entries become ``min(A_ij, 0)``; entries that become exactly
    zero are removed from the pattern. The diagonal is dropped entirely (it is
    rebuilt later by :func:`filter_zero_rowsum`). Requires a strictly positive
    diagonal, the sign convention of a discretized elliptic operator.
    """
    A = canonical_csr(A)
    diag = A.diagonal()
    bad = np.flatnonzero(diag <= 0.0)
    if bad.size:
        raise ValueError(
            f"filter_to_m requires a positive diagonal; row {bad[0]} has "
            f"diagonal {diag[bad[0]]!r}"
        )
    coo = A.tocoo()
    keep = (coo.row != coo.col) & (coo.data < 0.0)
    out = sp.csr_matrix(
        (coo.data[keep], (coo.row[keep], coo.col[keep])), shape=A.shape
    )
    out.sort_indices()
    return out


def filter_zero_rowsum(Aoff: sp.csr_matrix) -> tuple[sp.csr_matrix, np.ndarray]:
    """Complete an off-diagonal matrix with the zero-row-sum diagonal.

    Returns ``(Ghat, isolated)`` where ``Ghat`` has the off-diagonal entries
    of ``Aoff`` plus diagonal entries ``-sum(row)`` so that every row sums to
    zero, and ``isolated`` is a boolean mask of rows that had no off-diagonal
    entries at all (their diagonal stays zero and is left out of the pattern).
    """
    Aoff = canonical_csr(Aoff)
    coo = Aoff.tocoo()
    if np.any(coo.row == coo.col):
        raise ValueError("filter_zero_rowsum expects a matrix without diagonal entries")
    n = Aoff.shape[0]
    rowsum = np.zeros(n)
    np.add.at(rowsum, coo.row, coo.data)
    isolated = np.diff(Aoff.indptr) == 0
    diag_rows = np.flatnonzero(~isolated)
    rows = np.concatenate([coo.row, diag_rows])
    cols = np.concatenate([coo.col, diag_rows])
    data = np.concatenate([coo.data, -rowsum[diag_rows]])
    Ghat = sp.csr_matrix((data, (rows, cols)), shape=Aoff.shape)
    Ghat.sum_duplicates()
    Ghat.sort_indices()
    return Ghat, isolated


def read_matrix_market(path) -> sp.csr_matrix:
    """Read a Matrix Market coordinate file into canonical CSR."""
    return canonical_csr(scipy.io.mmread(path))


def write_matrix_market(path, A, comment: str = "") -> None:
    """Write a matrix in Matrix Market coordinate format (real, general or
    symmetric as detected by scipy)."""
    scipy.io.mmwrite(path, sp.coo_matrix(A), comment=comment)
