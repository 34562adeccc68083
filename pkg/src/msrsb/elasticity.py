"""Q1 finite-element assembly of linear elastostatics.

Displacement DOFs are ordered direction-major (all x components, then y,
then z), which exposes the block structure used by the separate-displacement-
component (SDC) approximation. Systems are assembled ignoring essential
boundary conditions; those are applied afterwards by symmetric
diagonalization so the matrix stays SPD.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np
import scipy.sparse as sp

from .mesh import Mesh, gauss_points, shape_gradients, shape_values
from .sparselinalg import canonical_csr

BAR_TO_PA = 1.0e5
_ASSEMBLY_CHUNK = 20000


@dataclass(frozen=True)
class ElasticMaterial:
    """Per-cell isotropic elastic properties."""

    E: np.ndarray    # Young's modulus, Pa
    nu: np.ndarray   # Poisson ratio

    def __post_init__(self):
        if np.any(self.E <= 0):
            raise ValueError("Young's modulus must be positive")
        if np.any(self.nu <= -1.0) or np.any(self.nu >= 0.5):
            raise ValueError("Poisson ratio must lie in (-1, 0.5)")

    @classmethod
    def uniform(cls, mesh: Mesh, E: float, nu: float) -> "ElasticMaterial":
        return cls(np.full(mesh.n_cells, float(E)), np.full(mesh.n_cells, float(nu)))

    @property
    def lame_lambda(self) -> np.ndarray:
        return self.E * self.nu / ((1.0 + self.nu) * (1.0 - 2.0 * self.nu))

    @property
    def shear(self) -> np.ndarray:
        return self.E / (2.0 * (1.0 + self.nu))


@dataclass
class ElasticBoundarySpec:
    """Prescribed displacements, tractions, and body forces.

    ``fixed_dofs`` are direction-major DOF ids with values ``fixed_values``;
    a node-direction pair may appear only once. Tractions are constant per
    boundary face and direction.
    """

    fixed_dofs: np.ndarray = dc_field(default_factory=lambda: np.empty(0, np.int64))
    fixed_values: np.ndarray = dc_field(default_factory=lambda: np.empty(0))
    traction_faces: np.ndarray = dc_field(default_factory=lambda: np.empty(0, np.int64))
    traction_dirs: np.ndarray = dc_field(default_factory=lambda: np.empty(0, np.int64))
    traction_values: np.ndarray = dc_field(default_factory=lambda: np.empty(0))
    body_force: np.ndarray | None = None     # (n_cells, dim)

    def validate(self, mesh: Mesh) -> None:
        uniq, counts = np.unique(self.fixed_dofs, return_counts=True)
        if np.any(counts > 1):
            raise ValueError(
                f"DOF {uniq[counts > 1][0]} is constrained more than once"
            )
        if self.fixed_dofs.size and (
            self.fixed_dofs.min() < 0
            or self.fixed_dofs.max() >= mesh.dim * mesh.n_nodes
        ):
            raise ValueError("constrained DOF out of range")

    @classmethod
    def rollers(cls, mesh: Mesh, sides, extra_fixed=None) -> "ElasticBoundarySpec":
        """Zero normal displacement on the named box sides.

        ``sides`` is an iterable like ("xmin", "ymax", "zmin"); the remaining
        sides are traction-free.
        """
        axis_of = {"x": 0, "y": 1, "z": 2}
        dofs = []
        for name in sides:
            axis = axis_of[name[0]]
            nodes = mesh.boundary_nodes(axis, name[1:])
            dofs.append(axis * mesh.n_nodes + nodes)
        dofs = np.unique(np.concatenate(dofs)) if dofs else np.empty(0, np.int64)
        values = np.zeros(dofs.size)
        if extra_fixed is not None:
            ed, ev = extra_fixed
            dofs = np.concatenate([dofs, ed])
            values = np.concatenate([values, ev])
        spec = cls(fixed_dofs=dofs, fixed_values=values)
        spec.validate(mesh)
        return spec


def dof_index(mesh: Mesh, nodes, direction) -> np.ndarray:
    """Direction-major DOF id of (node, direction) pairs."""
    return np.asarray(direction) * mesh.n_nodes + np.asarray(nodes)


def _element_stiffness(X, lam, G, dim):
    """Batched Q1 element stiffness, shape (ne, npc, dim, npc, dim).

    Uses the isotropic identity
    K[a,i,b,j] = int( lam dN_a,i dN_b,j + G dN_a,j dN_b,i
                      + G delta_ij grad N_a . grad N_b ).
    """
    pts, wts = gauss_points(dim)
    dN = shape_gradients(dim, pts)                      # (g, npc, dim)
    J = np.einsum("gci,ecj->egij", dN, X)               # dx/dxi
    detJ = np.linalg.det(J)
    if np.any(detJ <= 0):
        bad = int(np.argwhere(np.any(detJ <= 0, axis=1))[0, 0])
        raise ValueError(f"inverted element Jacobian in element {bad}")
    Jinv = np.linalg.inv(J)
    dNdx = np.einsum("egij,gcj->egci", Jinv, dN)        # (e, g, npc, dim)
    w = detJ * wts[None, :]
    gg = np.einsum("eg,egai,egbj->eaibj", w, dNdx, dNdx)
    dot = np.einsum("eg,egak,egbk->eab", w, dNdx, dNdx)
    K = lam[:, None, None, None, None] * gg \
        + G[:, None, None, None, None] * np.transpose(gg, (0, 1, 4, 3, 2))
    eye = np.eye(dim)
    K += np.einsum("eab,ij->eaibj", G[:, None, None] * dot, eye)
    return K, detJ


def assemble_elasticity(mesh: Mesh, material: ElasticMaterial,
                        bc: ElasticBoundarySpec):
    """Assemble the stiffness matrix and load vector (no essential BCs).

    Returns ``(A, f)`` with DOFs direction-major. Essential conditions are
    applied separately with :func:`apply_dirichlet_symmetric`.
    """
    bc.validate(mesh)
    dim = mesh.dim
    nn = mesh.n_nodes
    npc = mesh.cells.shape[1]
    lam = material.lame_lambda
    G = material.shear
    ndof = dim * nn

    rows, cols, vals = [], [], []
    f = np.zeros(ndof)
    pts, wts = gauss_points(dim)
    Nvals = shape_values(dim, pts)                      # (g, npc)

    for start in range(0, mesh.n_cells, _ASSEMBLY_CHUNK):
        sl = slice(start, min(start + _ASSEMBLY_CHUNK, mesh.n_cells))
        cells = mesh.cells[sl]
        X = mesh.nodes[cells]
        K, detJ = _element_stiffness(X, lam[sl], G[sl], dim)
        ne = cells.shape[0]
        dof = (np.arange(dim)[None, None, :] * nn + cells[:, :, None])  # (ne,npc,dim)
        r = np.broadcast_to(dof[:, :, :, None, None], K.shape)
        c = np.broadcast_to(dof[:, None, None, :, :], K.shape)
        rows.append(r.ravel().astype(np.int64))
        cols.append(c.ravel().astype(np.int64))
        vals.append(K.ravel())
        if bc.body_force is not None:
            b = np.asarray(bc.body_force)[sl]           # (ne, dim)
            w = detJ * wts[None, :]
            nodal = np.einsum("eg,ga,el->eal", w, Nvals, b)
            np.add.at(f, dof.reshape(ne, npc, dim), nodal)

    A = canonical_csr(sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(ndof, ndof),
    ))
    # round-off from accumulation order breaks exact symmetry; restore it
    A = canonical_csr(0.5 * (A + A.T))
    _add_tractions(mesh, bc, f)
    return A, f


def _add_tractions(mesh: Mesh, bc: ElasticBoundarySpec, f: np.ndarray) -> None:
    if bc.traction_faces.size == 0:
        return
    nn = mesh.n_nodes
    fnodes = mesh.face_nodes[bc.traction_faces]
    coords = mesh.nodes[fnodes]
    if mesh.dim == 2:
        length = np.linalg.norm(coords[:, 1] - coords[:, 0], axis=1)
        weights = 0.5 * length[:, None] * np.ones((1, 2))
    else:
        pts, wts = gauss_points(2)
        dNf = shape_gradients(2, pts)                   # (g, 4, 2)
        tang = np.einsum("gcp,ecd->egpd", dNf, coords)
        t1 = tang[:, :, 0, :]
        t2 = tang[:, :, 1, :]
        dA = np.linalg.norm(np.cross(t1, t2), axis=2)   # (e, g)
        Nf = shape_values(2, pts)                       # (g, 4)
        weights = np.einsum("eg,g,gc->ec", dA, wts, Nf)
    dofs = bc.traction_dirs[:, None] * nn + fnodes
    np.add.at(f, dofs, weights * bc.traction_values[:, None])


def apply_dirichlet_symmetric(A: sp.csr_matrix, f: np.ndarray,
                              bc_or_dofs, values=None):
    """Impose prescribed DOF values while keeping the matrix symmetric.

    For each constrained DOF k with value g: the k-th column times g is
    subtracted from the right-hand side, row and column k are zeroed, the
    diagonal is set to one and ``f[k] = g``. Solutions at free DOFs are
    unchanged and constrained DOFs reproduce g exactly.
    """
    if values is None:
        dofs = bc_or_dofs.fixed_dofs
        values = bc_or_dofs.fixed_values
    else:
        dofs = np.asarray(bc_or_dofs, dtype=np.int64)
        values = np.asarray(values, dtype=float)
    n = A.shape[0]
    g = np.zeros(n)
    g[dofs] = values
    free = np.ones(n)
    free[dofs] = 0.0
    f2 = f - A @ g
    S = sp.diags(free, format="csr")
    fixed_diag = sp.diags(1.0 - free, format="csr")
    A2 = canonical_csr(S @ A @ S + fixed_diag)
    f2 = f2 * free
    f2[dofs] = values
    return A2, f2


def sdc_blocks(A: sp.csr_matrix, n_sd: int) -> sp.csr_matrix:
    """Separate-displacement-component approximation: keep only the diagonal
    direction blocks of a direction-major stiffness matrix."""
    n = A.shape[0]
    if A.shape[0] != A.shape[1] or n % n_sd:
        raise ValueError("matrix size is not a multiple of the direction count; "
                         "expected direction-major ordering")
    nn = n // n_sd
    blocks = [A[ell * nn:(ell + 1) * nn, ell * nn:(ell + 1) * nn]
              for ell in range(n_sd)]
    return canonical_csr(sp.block_diag(blocks, format="csr"))


@dataclass(frozen=True)
class DepthProfileParams:
    """Coefficients of the depth-dependent compressibility correlation.

    Vertical effective stress (bar):  sigma'_z = stress_coeff*|z|^stress_exp
    + hydro_grad*|z|;  compressibility (1/bar): c_M = cm_coeff*|sigma'_z|^cm_exp.
    Optional layer offsets (Pa) are added per elevation band to emulate
    discontinuities between geological layers.
    """

    cm_coeff: float = 0.01241
    cm_exp: float = -1.1342
    stress_coeff: float = -0.12218
    stress_exp: float = 1.0766
    hydro_grad: float = 0.1
    layer_edges: tuple[float, ...] = ()    # descending z values separating layers
    layer_offsets: tuple[float, ...] = ()  # one per layer (len(edges) + 1)


def young_profile(z, nu: float = 0.3,
                  params: DepthProfileParams = DepthProfileParams()) -> np.ndarray:
    """Young's modulus (Pa) from the depth correlation, for elevations z < 0."""
    z = np.asarray(z, dtype=float)
    scalar = z.ndim == 0
    z = np.atleast_1d(z)
    if np.any(z >= 0):
        raise ValueError("depth profile is defined for elevations z < 0 only")
    depth = np.abs(z)
    sigma = params.stress_coeff * depth ** params.stress_exp \
        + params.hydro_grad * depth
    c_m = params.cm_coeff * np.abs(sigma) ** params.cm_exp      # 1/bar
    E = (1.0 - 2.0 * nu) * (1.0 + nu) / ((1.0 - nu) * c_m) * BAR_TO_PA
    if params.layer_edges:
        layer = np.searchsorted(-np.asarray(params.layer_edges), -z)
        E = E + np.asarray(params.layer_offsets)[layer]
    return E[0] if scalar else E


def reservoir_load(mesh: Mesh, zone_cells: np.ndarray, dp_bar: float) -> np.ndarray:
    """Equivalent nodal forces of a pressure drawdown in a reservoir zone.

    The pressure change acts as an isotropic eigenstress with unit Biot
    coefficient:  f_i = -integral( sym(grad eta_i) : dp*I ) over the zone,
    i.e. minus the discrete gradient of the pressure change. ``dp_bar`` is
    the drawdown in bar.
    """
    zone_cells = np.asarray(zone_cells, dtype=np.int64)
    if zone_cells.size == 0:
        raise ValueError("reservoir zone is empty")
    dim = mesh.dim
    nn = mesh.n_nodes
    dp = dp_bar * BAR_TO_PA
    pts, wts = gauss_points(dim)
    dN = shape_gradients(dim, pts)
    cells = mesh.cells[zone_cells]
    X = mesh.nodes[cells]
    J = np.einsum("gci,ecj->egij", dN, X)
    detJ = np.linalg.det(J)
    Jinv = np.linalg.inv(J)
    dNdx = np.einsum("egij,gcj->egci", Jinv, dN)
    nodal = -dp * np.einsum("eg,g,egcl->ecl", detJ, wts, dNdx)
    f = np.zeros(dim * nn)
    dof = np.arange(dim)[None, None, :] * nn + cells[:, :, None]
    np.add.at(f, dof, nodal)
    return f
