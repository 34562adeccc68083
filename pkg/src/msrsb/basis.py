"""Construction of restriction-smoothed basis functions.

Each coarse block contributes one basis function (per displacement direction
for vector problems), iterated from its characteristic function by damped
Jacobi smoothing on a zero-row-sum operator. With filtering enabled the
operator is built from the negative off-diagonal part of the system matrix,
which keeps every iterate a partition of unity with entries in [0, 1] even
when the discretization itself is not an M-matrix. Updates are restricted to
each basis' support region and rows are rescaled after every update so the
partition of unity holds to round-off.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field as dc_field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .partition import CoarsePartition
from .sparselinalg import canonical_csr, filter_to_m, filter_zero_rowsum, triple_product


@dataclass(frozen=True)
class BasisConfig:
    """Knobs of the basis smoothing iteration.

    ``omega`` is the Jacobi relaxation factor (2/3 is optimal for the
    homogeneous Poisson problem); ``tol`` the convergence threshold on the
    largest update outside support edges, checked every ``n_it`` iterations.
    ``filter=False`` disables the M-matrix filter and reproduces the plain
    method, which diverges on non-M operators.
    """

    omega: float = 2.0 / 3.0
    tol: float = 1e-3
    n_it: int = 5
    max_iters: int = 1000
    filter: bool = True
    track_invariants: bool = False

    def __post_init__(self):
        if not 0.0 < self.omega < 1.0:
            raise ValueError("relaxation factor must lie in (0, 1)")
        if self.tol < 0:
            raise ValueError("tolerance must be nonnegative")
        if self.n_it < 1 or self.max_iters < 1:
            raise ValueError("iteration counts must be positive")


@dataclass
class BasisBuildReport:
    iterations: int = 0
    converged: bool = False
    diverged: bool = False
    e_history: list = dc_field(default_factory=list)          # (iteration, e_it)
    update_max_history: list = dc_field(default_factory=list)  # max|dP| per iteration
    pou_defect_history: list = dc_field(default_factory=list)
    entry_range_history: list = dc_field(default_factory=list)
    message: str = ""


class BasisDivergenceError(RuntimeError):
    """Smoothing produced non-finite updates (expected for filter=off on
    non-M operators)."""

    def __init__(self, message: str, report: BasisBuildReport):
        super().__init__(message)
        self.report = report


@dataclass
class Prolongation:
    """Sparse prolongation whose columns are the basis functions."""

    P: sp.csr_matrix
    partition: CoarsePartition
    n_sd: int = 1
    reports: list = dc_field(default_factory=list)

    @property
    def report(self) -> BasisBuildReport:
        return self.reports[0]

    @property
    def converged(self) -> bool:
        return all(r.converged for r in self.reports)


def init_prolongation(partition: CoarsePartition) -> sp.csr_matrix:
    """Characteristic initial guess: 1 on each entity's own block."""
    n = partition.n_entities
    rows = np.arange(n)
    return sp.csr_matrix(
        (np.ones(n), (rows, partition.block_of)), shape=(n, partition.n_blocks)
    )


def smoothing_operator(A: sp.csr_matrix, use_filter: bool):
    """Jacobi iteration matrix ``D^-1 Ghat`` of the (optionally filtered)
    zero-row-sum operator. Returns ``(J, isolated)``; isolated rows (no
    off-diagonal entries, or zero row sum) never update."""
    A = canonical_csr(A)
    diag = A.diagonal()
    if np.any(diag <= 0):
        bad = int(np.flatnonzero(diag <= 0)[0])
        raise ValueError(f"basis smoothing requires a positive diagonal; "
                         f"row {bad} has {diag[bad]!r}")
    if use_filter:
        off = filter_to_m(A)
    else:
        coo = A.tocoo()
        keep = coo.row != coo.col
        off = sp.csr_matrix(
            (coo.data[keep], (coo.row[keep], coo.col[keep])), shape=A.shape
        )
        off = canonical_csr(off)
    Ghat, isolated = filter_zero_rowsum(off)
    d = Ghat.diagonal()
    isolated = isolated | (d == 0.0)
    inv_d = np.where(isolated, 0.0, 1.0 / np.where(d == 0.0, 1.0, d))
    J = sp.diags(inv_d).tocsr() @ Ghat
    return canonical_csr(J), isolated


def build_basis(A: sp.csr_matrix, partition: CoarsePartition,
                config: BasisConfig = BasisConfig()) -> Prolongation:
    """Iterate the restricted smoothing until the basis converges.

    Raises :class:`BasisDivergenceError` when updates overflow, which is the
    expected outcome for ``filter=False`` on a non-M matrix. The returned
    prolongation carries a :class:`BasisBuildReport` with the convergence
    metric history and, with ``track_invariants``, the partition-of-unity
    defect and entry range after every iteration.
    """
    if A.shape[0] != A.shape[1]:
        raise ValueError("system matrix must be square")
    if A.shape[0] != partition.n_entities:
        raise ValueError("partition does not match the matrix size")
    J, _ = smoothing_operator(A, config.filter)
    S = partition.support_csr
    S_int = partition.interior_csr
    P = init_prolongation(partition)
    report = BasisBuildReport()

    k = 0
    while k < config.max_iters:
        dP = (-config.omega) * (J @ P)
        dP = dP.multiply(S).tocsr()
        if not np.isfinite(dP.data).all():
            report.iterations = k
            report.diverged = True
            report.message = (
                f"basis update overflowed at iteration {k}; the operator is "
                "not an M-matrix (enable filtering)"
            )
            raise BasisDivergenceError(report.message, report)
        report.update_max_history.append(
            float(np.abs(dP.data).max()) if dP.nnz else 0.0
        )
        P = (P + dP).tocsr()
        rowsum = np.asarray(P.sum(axis=1)).ravel()
        safe = np.abs(rowsum) > 1e-300
        scale = np.where(safe, 1.0 / np.where(safe, rowsum, 1.0), 1.0)
        P = sp.diags(scale).tocsr() @ P
        if config.track_invariants:
            defect = np.abs(np.asarray(P.sum(axis=1)).ravel() - 1.0).max()
            report.pou_defect_history.append(float(defect))
            report.entry_range_history.append(
                (float(P.data.min()), float(P.data.max()))
            )
        if k % config.n_it == 0:
            interior = dP.multiply(S_int)
            e_it = float(np.abs(interior.data).max()) if interior.nnz else 0.0
            report.e_history.append((k, e_it))
            if e_it < config.tol:
                report.iterations = k + 1
                report.converged = True
                return Prolongation(canonical_csr(P), partition, 1, [report])
        k += 1
    report.iterations = k
    report.message = f"basis did not converge within {config.max_iters} iterations"
    return Prolongation(canonical_csr(P), partition, 1, [report])


def build_basis_vector(A: sp.csr_matrix, partition: CoarsePartition,
                       config: BasisConfig, n_sd: int) -> Prolongation:
    """Directional bases from the SDC diagonal blocks of a vector operator.

    The prolongation is block diagonal: one basis per coarse node and
    direction, with x bases supported on x DOFs only (and so on). The coarse
    operator built from it still couples the directions through the
    off-diagonal blocks of the fine matrix.
    """
    n = A.shape[0]
    if n % n_sd:
        raise ValueError("matrix size is not a multiple of n_sd")
    nn = n // n_sd
    if nn != partition.n_entities:
        raise ValueError("partition does not match the per-direction DOF count")
    blocks, reports = [], []
    for ell in range(n_sd):
        sub = A[ell * nn:(ell + 1) * nn, ell * nn:(ell + 1) * nn]
        try:
            prol = build_basis(canonical_csr(sub), partition, config)
        except BasisDivergenceError as err:
            err.report.message += f" (direction {ell})"
            raise
        blocks.append(prol.P)
        reports.append(prol.reports[0])
    P = canonical_csr(sp.block_diag(blocks, format="csr"))
    return Prolongation(P, partition, n_sd, reports)


def make_restriction(prolongation: Prolongation, mode: str = "galerkin") -> sp.csr_matrix:
    """Restriction operator: Galerkin transpose or control-volume rows.

    The control-volume (Petrov-Galerkin) variant has characteristic rows over
    the primary blocks, so coarse equations are discrete mass balances; it is
    defined for scalar problems only.
    """
    if mode == "galerkin":
        return canonical_csr(prolongation.P.T)
    if mode == "control_volume":
        if prolongation.n_sd != 1:
            raise ValueError("control-volume restriction is undefined for "
                             "vector problems")
        part = prolongation.partition
        n = part.n_entities
        return sp.csr_matrix(
            (np.ones(n), (part.block_of, np.arange(n))),
            shape=(part.n_blocks, n),
        )
    raise ValueError(f"unknown restriction mode {mode!r}")


class SingularCoarseSystemError(RuntimeError):
    """Coarse operator is singular (e.g. a pure-Neumann problem); pin one
    coarse DOF and rebuild."""


@dataclass
class CoarseSystem:
    A_c: sp.csr_matrix
    R: sp.csr_matrix
    solver: spla.SuperLU

    def solve(self, b_c: np.ndarray) -> np.ndarray:
        return self.solver.solve(b_c)


def build_coarse_system(A: sp.csr_matrix, P: sp.csr_matrix, R: sp.csr_matrix,
                        pin_dof: int | None = None) -> CoarseSystem:
    """Coarse operator ``A_c = R A P`` with a sparse direct factorization.

    ``pin_dof`` symmetric-diagonalizes one coarse DOF to zero, the standard
    fix for the all-Neumann null space.
    """
    A_c = triple_product(R, A, P)
    if pin_dof is not None:
        n_c = A_c.shape[0]
        keep = np.ones(n_c)
        keep[pin_dof] = 0.0
        S = sp.diags(keep).tocsr()
        A_c = canonical_csr(S @ A_c @ S + sp.diags(1.0 - keep).tocsr())
    try:
        lu = spla.splu(A_c.tocsc())
    except RuntimeError as err:
        raise SingularCoarseSystemError(
            f"coarse system factorization failed ({err}); for pure-Neumann "
            "problems pin one coarse DOF via pin_dof"
        ) from err
    return CoarseSystem(A_c, canonical_csr(R), lu)


def initial_multiscale_solution(A, f, prolongation: Prolongation,
                                restriction_mode: str = "galerkin",
                                pin_dof: int | None = None) -> np.ndarray:
    """Uniterated multiscale approximation ``P A_c^-1 R f``."""
    R = make_restriction(prolongation, restriction_mode)
    coarse = build_coarse_system(A, prolongation.P, R, pin_dof=pin_dof)
    return prolongation.P @ coarse.solve(R @ f)
