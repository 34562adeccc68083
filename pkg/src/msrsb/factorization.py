"""No-fill incomplete factorizations ILU(0) and IC(0).

Factors are restricted to the sparsity pattern of the input (no fill-in),
eliminated in natural row order. The row loops are sequential by nature, so
the kernels are numba-compiled to keep large systems cheap.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from numba import njit

from .sparselinalg import canonical_csr


class FactorizationError(RuntimeError):
    """Raised on a zero (ILU0) or non-positive (IC0) pivot.

    ``row`` identifies the offending row of the input matrix.
    """

    def __init__(self, message: str, row: int):
        super().__init__(message)
        self.row = row


@njit(cache=True)
def _ilu0_kernel(indptr, indices, data, diag_pos):
    n = indptr.shape[0] - 1
    for i in range(n):
        for p in range(indptr[i], indptr[i + 1]):
            k = indices[p]
            if k >= i:
                break
            ukk = data[diag_pos[k]]
            if ukk == 0.0:
                return k
            lik = data[p] / ukk
            data[p] = lik
            # subtract lik * upper(row k) on the existing pattern of row i
            q = diag_pos[k] + 1
            r = p + 1
            row_end_k = indptr[k + 1]
            row_end_i = indptr[i + 1]
            while q < row_end_k and r < row_end_i:
                jk = indices[q]
                ji = indices[r]
                if jk == ji:
                    data[r] -= lik * data[q]
                    q += 1
                    r += 1
                elif jk < ji:
                    q += 1
                else:
                    r += 1
        if data[diag_pos[i]] == 0.0:
            return i
    return -1


@njit(cache=True)
def _ic0_kernel(indptr, indices, data, diag_pos):
    # Left-looking row Cholesky on the strict lower pattern plus diagonal.
    n = indptr.shape[0] - 1
    for i in range(n):
        for p in range(indptr[i], diag_pos[i]):
            k = indices[p]
            s = data[p]
            q = indptr[i]
            r = indptr[k]
            while q < p and r < diag_pos[k]:
                ji = indices[q]
                jk = indices[r]
                if ji == jk:
                    s -= data[q] * data[r]
                    q += 1
                    r += 1
                elif ji < jk:
                    q += 1
                else:
                    r += 1
            data[p] = s / data[diag_pos[k]]
        d = data[diag_pos[i]]
        for p in range(indptr[i], diag_pos[i]):
            d -= data[p] * data[p]
        if d <= 0.0:
            return i
        data[diag_pos[i]] = np.sqrt(d)
    return -1


@njit(cache=True)
def _solve_lower(indptr, indices, data, b):
    # Diagonal is the last entry of each row (sorted lower-triangular CSR).
    n = indptr.shape[0] - 1
    x = np.empty(n)
    for i in range(n):
        s = b[i]
        end = indptr[i + 1] - 1
        for p in range(indptr[i], end):
            s -= data[p] * x[indices[p]]
        x[i] = s / data[end]
    return x


@njit(cache=True)
def _solve_upper(indptr, indices, data, b):
    # Diagonal is the first entry of each row (sorted upper-triangular CSR).
    n = indptr.shape[0] - 1
    x = np.empty(n)
    for i in range(n - 1, -1, -1):
        s = b[i]
        start = indptr[i]
        for p in range(start + 1, indptr[i + 1]):
            s -= data[p] * x[indices[p]]
        x[i] = s / data[start]
    return x


def _diag_positions(A: sp.csr_matrix) -> np.ndarray:
    n = A.shape[0]
    row_of = np.repeat(np.arange(n), np.diff(A.indptr))
    hits = np.flatnonzero(A.indices == row_of)
    pos = np.full(n, -1, dtype=np.int64)
    pos[row_of[hits]] = hits
    missing = np.flatnonzero(pos < 0)
    if missing.size:
        raise FactorizationError(
            f"matrix has no diagonal entry in row {missing[0]}", int(missing[0])
        )
    return pos


@dataclass(frozen=True)
class TriangularFactorization:
    """Incomplete triangular factors ``A ~ lower @ upper``.

    For ILU0 ``lower`` carries a unit diagonal; for IC0 ``upper`` is the
    transpose of ``lower``. The combined pattern equals the input pattern.
    """

    lower: sp.csr_matrix
    upper: sp.csr_matrix
    kind: str

    def apply(self, v: np.ndarray) -> np.ndarray:
        """Solve ``lower @ upper @ x = v`` by substitution."""
        y = _solve_lower(self.lower.indptr, self.lower.indices, self.lower.data,
                         np.asarray(v, dtype=np.float64))
        return _solve_upper(self.upper.indptr, self.upper.indices, self.upper.data, y)


def incomplete_factorize(
    A: sp.csr_matrix, kind: str = "ilu0", pivot_shift: bool = False,
    shift_factor: float = 1e-8,
) -> TriangularFactorization:
    """Factor ``A`` without fill-in.

    Parameters
    ----------
    A : square CSR matrix. For ``kind="ic0"`` it must be symmetric in both
        pattern and values.
    kind : "ilu0" or "ic0".
    pivot_shift : if True, a failed pivot triggers one retry on
        ``A + delta*I`` with ``delta = shift_factor * max|diag(A)|``. Off by
        default; breakdowns then raise :class:`FactorizationError`. Matrices
        far from M-matrix structure may need a larger ``shift_factor`` than
        the 1e-8 default.
    """
    kind = kind.lower()
    if kind not in ("ilu0", "ic0"):
        raise ValueError(f"unknown factorization kind {kind!r}")
    A = canonical_csr(A)
    if A.shape[0] != A.shape[1]:
        raise ValueError("incomplete factorization needs a square matrix")

    def attempt(M: sp.csr_matrix) -> TriangularFactorization:
        if kind == "ilu0":
            work = M.copy()
            dpos = _diag_positions(work)
            bad = _ilu0_kernel(work.indptr, work.indices, work.data, dpos)
            if bad >= 0:
                raise FactorizationError(f"zero pivot in ILU(0) at row {bad}", int(bad))
            lower = canonical_csr(sp.tril(work, k=-1) + sp.eye(M.shape[0], format="csr"))
            upper = canonical_csr(sp.triu(work, k=0))
            return TriangularFactorization(lower, upper, "ilu0")
        asym = M - M.T
        scale = np.abs(M.data).max() if M.nnz else 1.0
        if asym.nnz and np.abs(asym.data).max() > 1e-10 * scale:
            raise ValueError("IC(0) requires a symmetric matrix")
        work = canonical_csr(sp.tril(M, k=0))
        dpos = _diag_positions(work)
        bad = _ic0_kernel(work.indptr, work.indices, work.data, dpos)
        if bad >= 0:
            raise FactorizationError(
                f"non-positive pivot in IC(0) at row {bad}", int(bad)
            )
        lower = work
        upper = canonical_csr(work.T)
        return TriangularFactorization(lower, upper, "ic0")

    try:
        return attempt(A)
    except FactorizationError:
        if not pivot_shift:
            raise
        delta = shift_factor * np.abs(A.diagonal()).max()
        shifted = canonical_csr(A + delta * sp.eye(A.shape[0], format="csr"))
        return attempt(shifted)
