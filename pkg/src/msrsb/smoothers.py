"""Stationary smoothers used as single-level preconditioners and as the
pre/post stages of the two-level composition."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .factorization import TriangularFactorization, incomplete_factorize, \
    _solve_lower, _solve_upper
from .sparselinalg import canonical_csr

KINDS = ("none", "jacobi", "l1_jacobi", "sgs", "ilu0", "ic0")


@dataclass(frozen=True)
class SmootherSpec:
    """Smoother choice: kind, sweep count, and damping.

    ``damping`` scales the application of Jacobi-type and incomplete-factor
    smoothers. Symmetric pre/post compositions for CG require the smoothed
    operator spectrum below 2; damping an incomplete factorization is the
    standard way to enforce that when the factor is aggressive
    (Gauss-Seidel needs no damping, so it ignores the setting).
    """

    kind: str = "ilu0"
    sweeps: int = 1
    damping: float = 1.0
    pivot_shift: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown smoother kind {self.kind!r}")
        if self.kind != "none" and self.sweeps < 1:
            raise ValueError("smoothers need at least one sweep")
        if self.damping <= 0:
            raise ValueError("smoother damping must be positive")


class Smoother:
    """One smoother bound to a matrix; ``apply(v)`` approximates ``A^-1 v``.

    Sweeps are fixed-point iterations on the residual,
    ``x <- x + B(v - A x)``, where B is one pass of the chosen method.

    For vector problems (``n_sd > 1``) with direction-major DOF ordering, the
    ordering-dependent smoothers (Gauss-Seidel, ILU0, IC0) work on a
    node-interleaved reordering of the matrix: eliminating all x DOFs before
    any y or z DOF makes no-fill factorizations of elastic stiffness matrices
    prone to pivot breakdowns, while interleaving keeps the elimination local
    and well behaved.
    """

    def __init__(self, spec: SmootherSpec, A: sp.csr_matrix, n_sd: int = 1):
        self.spec = spec
        self.A = A
        kind = spec.kind
        self._perm = None
        if n_sd > 1 and kind in ("sgs", "ilu0", "ic0"):
            n = A.shape[0]
            if n % n_sd:
                raise ValueError("matrix size is not a multiple of n_sd")
            nn = n // n_sd
            perm = np.empty(n, dtype=np.int64)
            for d in range(n_sd):
                perm[np.arange(nn) * n_sd + d] = d * nn + np.arange(nn)
            self._perm = perm
            self._iperm = np.argsort(perm)
            A = canonical_csr(A[perm][:, perm])
        self._Ap = A
        if kind in ("jacobi", "l1_jacobi"):
            if kind == "jacobi":
                d = A.diagonal()
            else:
                d = np.zeros(A.shape[0])
                np.add.at(d, _row_indices(A), np.abs(A.data))
            if np.any(d == 0.0):
                raise ValueError("zero (scaled) diagonal entry in Jacobi smoother")
            self._dinv = spec.damping / d
        elif kind == "sgs":
            lower = canonical_csr(sp.tril(A, k=0))
            upper = canonical_csr(sp.triu(A, k=0))
            if np.any(A.diagonal() == 0.0):
                raise ValueError("zero diagonal entry in Gauss-Seidel smoother")
            self._lower, self._upper = lower, upper
        elif kind in ("ilu0", "ic0"):
            self._fact: TriangularFactorization = incomplete_factorize(
                A, kind, pivot_shift=spec.pivot_shift
            )

    def _pass(self, r: np.ndarray) -> np.ndarray:
        kind = self.spec.kind
        if kind == "jacobi" or kind == "l1_jacobi":
            return self._dinv * r
        if kind in ("ilu0", "ic0"):
            w = self._fact.apply(r)
            if self.spec.damping != 1.0:
                w *= self.spec.damping
            return w
        raise AssertionError(kind)

    def apply(self, v: np.ndarray) -> np.ndarray:
        if self.spec.kind == "none":
            return np.zeros_like(v)
        if self._perm is not None:
            v = v[self._perm]
        A = self._Ap
        x = np.zeros_like(v)
        for sweep in range(self.spec.sweeps):
            if self.spec.kind == "sgs":
                # forward then backward Gauss-Seidel relaxation on Ax = v
                r = v if sweep == 0 else v - A @ x
                x = x + _solve_lower(self._lower.indptr, self._lower.indices,
                                     self._lower.data, np.asarray(r, float))
                r = v - A @ x
                x = x + _solve_upper(self._upper.indptr, self._upper.indices,
                                     self._upper.data, np.asarray(r, float))
            else:
                r = v if sweep == 0 else v - A @ x
                x = x + self._pass(np.asarray(r, dtype=float))
        if self._perm is not None:
            x = x[self._iperm]
        return x


def _row_indices(A: sp.csr_matrix) -> np.ndarray:
    return np.repeat(np.arange(A.shape[0]), np.diff(A.indptr))


def smoother_apply(spec: SmootherSpec, A: sp.csr_matrix, v: np.ndarray) -> np.ndarray:
    """Convenience one-shot application (builds the smoother each call)."""
    return Smoother(spec, A).apply(v)
