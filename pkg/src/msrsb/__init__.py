"""Multiscale restriction-smoothed basis (MsRSB) preconditioning toolkit.

Builds two-level preconditioners from restricted-smoothing basis functions,
with an M-matrix filter that makes the basis iteration robust for multipoint
finite-volume and finite-element operators. Includes the supporting pieces:
structured mesh generation, coarse partitioning, TPFA/MPFA-O flow assembly,
Q1 elasticity assembly, smoothers and Krylov solvers, and a benchmark runner.
"""

from .sparselinalg import (
    canonical_csr,
    spmv,
    triple_product,
    filter_to_m,
    filter_zero_rowsum,
    read_matrix_market,
    write_matrix_market,
)
from .factorization import (
    FactorizationError,
    TriangularFactorization,
    incomplete_factorize,
)
from .mesh import GridDistortion, Mesh, build_structured_mesh, write_vtk
from .partition import (
    CoarsePartition,
    build_support_regions,
    export_partition,
    partition_agglomerate,
    partition_structured,
    partition_structured_nodes,
)
from .flow import (
    DiffusionField,
    FlowBoundarySpec,
    FluxStencil,
    assemble_mpfa_o,
    assemble_tpfa,
    flux_reconstruct,
)
from .elasticity import (
    DepthProfileParams,
    ElasticBoundarySpec,
    ElasticMaterial,
    apply_dirichlet_symmetric,
    assemble_elasticity,
    dof_index,
    reservoir_load,
    sdc_blocks,
    young_profile,
)
from .basis import (
    BasisConfig,
    BasisBuildReport,
    BasisDivergenceError,
    CoarseSystem,
    Prolongation,
    SingularCoarseSystemError,
    build_basis,
    build_basis_vector,
    build_coarse_system,
    init_prolongation,
    initial_multiscale_solution,
    make_restriction,
)
from .smoothers import Smoother, SmootherSpec, smoother_apply
from .solvers import (
    ConvergenceHistory,
    SolverSpec,
    TwoLevelPreconditioner,
    apply_ms,
    apply_two_level,
    solve,
)
from .bench import (
    CaseArtifacts,
    RunReport,
    build_case,
    compute_initial_ms_error,
    load_config,
    run_case,
    run_sweep,
    run_variant,
)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
