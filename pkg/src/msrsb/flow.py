"""Finite-volume assembly of the incompressible single-phase pressure system.

Two flux approximations are provided: the two-point scheme (TPFA), consistent
only on grids aligned with the diffusion tensor's principal axes, and the
multipoint O-method (MPFA-O), consistent on rough grids and full tensors but
generally not an M-matrix. Assembled systems use cell-centered unknowns; the
discrete balance of cell K reads  sum(outward fluxes) = q_K * V_K.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from itertools import product

import numpy as np
import scipy.sparse as sp

from .mesh import Mesh
from .sparselinalg import canonical_csr

# 1 millidarcy / centipoise in m^2 / (Pa s)
MD_PER_CP_TO_SI = 9.869233e-16 / 1.0e-3


@dataclass(frozen=True)
class DiffusionField:
    """Per-cell symmetric positive definite diffusion tensors."""

    tensors: np.ndarray          # (n_cells, dim, dim)
    unit: str = "si"             # "si" | "md_per_cp"

    def __post_init__(self):
        t = self.tensors
        if t.ndim != 3 or t.shape[1] != t.shape[2]:
            raise ValueError("tensors must have shape (n_cells, dim, dim)")
        if not np.allclose(t, np.swapaxes(t, 1, 2), rtol=1e-12, atol=0.0):
            raise ValueError("diffusion tensors must be symmetric")
        eigs = np.linalg.eigvalsh(t)
        if np.any(eigs <= 0):
            bad = int(np.argwhere(np.any(eigs <= 0, axis=1))[0, 0])
            raise ValueError(f"diffusion tensor of cell {bad} is not positive definite")
        if self.unit not in ("si", "md_per_cp"):
            raise ValueError(f"unknown unit system {self.unit!r}")

    def si_tensors(self) -> np.ndarray:
        if self.unit == "si":
            return self.tensors
        return self.tensors * MD_PER_CP_TO_SI

    @classmethod
    def isotropic(cls, mesh: Mesh, values, unit: str = "si") -> "DiffusionField":
        values = np.broadcast_to(np.asarray(values, dtype=float), (mesh.n_cells,))
        eye = np.eye(mesh.dim)
        return cls(values[:, None, None] * eye[None], unit=unit)

    @classmethod
    def constant_tensor(cls, mesh: Mesh, tensor, unit: str = "si") -> "DiffusionField":
        tensor = np.asarray(tensor, dtype=float)
        return cls(np.broadcast_to(tensor, (mesh.n_cells, mesh.dim, mesh.dim)).copy(),
                   unit=unit)


@dataclass
class FlowBoundarySpec:
    """Boundary conditions and sources for the pressure equation.

    Unlisted boundary faces default to homogeneous Neumann (no flow). Each
    face may carry at most one condition. Neumann values are outward flux
    densities.
    """

    dirichlet_faces: np.ndarray = dc_field(default_factory=lambda: np.empty(0, np.int64))
    dirichlet_values: np.ndarray = dc_field(default_factory=lambda: np.empty(0))
    neumann_faces: np.ndarray = dc_field(default_factory=lambda: np.empty(0, np.int64))
    neumann_values: np.ndarray = dc_field(default_factory=lambda: np.empty(0))
    source: np.ndarray | None = None

    def validate(self, mesh: Mesh) -> None:
        for faces in (self.dirichlet_faces, self.neumann_faces):
            if faces.size and np.any(mesh.face_cells[faces, 1] >= 0):
                raise ValueError("boundary condition set on an interior face")
        both = np.intersect1d(self.dirichlet_faces, self.neumann_faces)
        if both.size:
            raise ValueError(f"face {both[0]} carries two boundary conditions")
        if self.source is not None and self.source.shape[0] != mesh.n_cells:
            raise ValueError("source must have one value per cell")

    @classmethod
    def from_sides(cls, mesh: Mesh, sides: dict, source=None) -> "FlowBoundarySpec":
        """Build from a {"xmin": ("dirichlet", value), ...} mapping.

        Side names combine an axis letter (x, y, z) with "min"/"max".
        """
        axis_of = {"x": 0, "y": 1, "z": 2}
        dfaces, dvals, nfaces, nvals = [], [], [], []
        for name, (kind, value) in sides.items():
            faces = mesh.boundary_faces(axis_of[name[0]], name[1:])
            if kind == "dirichlet":
                dfaces.append(faces)
                dvals.append(np.full(faces.size, float(value)))
            elif kind == "neumann":
                nfaces.append(faces)
                nvals.append(np.full(faces.size, float(value)))
            else:
                raise ValueError(f"unknown boundary kind {kind!r}")
        cat = lambda parts, dtype: (
            np.concatenate(parts).astype(dtype) if parts else np.empty(0, dtype)
        )
        spec = cls(
            dirichlet_faces=cat(dfaces, np.int64),
            dirichlet_values=cat(dvals, float),
            neumann_faces=cat(nfaces, np.int64),
            neumann_values=cat(nvals, float),
            source=None if source is None else np.asarray(source, dtype=float),
        )
        spec.validate(mesh)
        return spec


@dataclass
class FluxStencil:
    """Linear flux expressions  w_face = sum(coeff * u[cell]) + const.

    Fluxes are oriented along each face's stored normal (lower cell to upper
    cell on interior faces, outward on boundary faces). The constant part
    carries Dirichlet data and prescribed Neumann fluxes.
    """

    n_faces: int
    entry_face: np.ndarray
    entry_cell: np.ndarray
    entry_coeff: np.ndarray
    const: np.ndarray


def flux_reconstruct(stencils: FluxStencil, pressure: np.ndarray) -> np.ndarray:
    """Evaluate per-face fluxes for a given cell-pressure vector."""
    w = stencils.const.copy()
    np.add.at(w, stencils.entry_face,
              stencils.entry_coeff * pressure[stencils.entry_cell])
    return w


def _bc_arrays(mesh: Mesh, bc: FlowBoundarySpec):
    bc.validate(mesh)
    is_dir = np.zeros(mesh.n_faces, dtype=bool)
    is_dir[bc.dirichlet_faces] = True
    g_dir = np.zeros(mesh.n_faces)
    g_dir[bc.dirichlet_faces] = bc.dirichlet_values
    g_neu = np.zeros(mesh.n_faces)
    g_neu[bc.neumann_faces] = bc.neumann_values
    q = np.zeros(mesh.n_cells) if bc.source is None else bc.source
    return is_dir, g_dir, g_neu, q


def _half_transmissibility(mesh: Mesh, Lam: np.ndarray, faces: np.ndarray,
                           cells: np.ndarray, sign: float) -> np.ndarray:
    d = mesh.face_centroids[faces] - mesh.cell_centroids[cells]
    d2 = np.einsum("fi,fi->f", d, d)
    if np.any(d2 <= 0):
        raise ValueError("degenerate centroid-to-face vector in TPFA")
    n = sign * mesh.face_normals[faces]
    nLd = np.einsum("fi,fij,fj->f", n, Lam[cells], d)
    return mesh.face_areas[faces] * nLd / d2


def assemble_tpfa(mesh: Mesh, field: DiffusionField, bc: FlowBoundarySpec,
                  with_stencils: bool = False):
    """Two-point flux assembly.

    Face transmissibility is the harmonic average of the two half-cell
    transmissibilities  t_K = area * (n . Lambda_K . d_K) / |d_K|^2  with
    ``d_K`` the centroid-to-face vector and ``n`` outward from K.
    """
    Lam = field.si_tensors()
    is_dir, g_dir, g_neu, q = _bc_arrays(mesh, bc)

    interior = mesh.interior_faces
    K = mesh.face_cells[interior, 0]
    L = mesh.face_cells[interior, 1]
    tK = _half_transmissibility(mesh, Lam, interior, K, +1.0)
    tL = _half_transmissibility(mesh, Lam, interior, L, -1.0)
    t_int = tK * tL / (tK + tL)

    dir_faces = np.flatnonzero(is_dir)
    Kd = mesh.face_cells[dir_faces, 0]
    t_dir = _half_transmissibility(mesh, Lam, dir_faces, Kd, +1.0)

    rows = np.concatenate([K, K, L, L, Kd])
    cols = np.concatenate([K, L, L, K, Kd])
    vals = np.concatenate([t_int, -t_int, t_int, -t_int, t_dir])
    A = canonical_csr(sp.coo_matrix((vals, (rows, cols)),
                                    shape=(mesh.n_cells, mesh.n_cells)))

    f = q * mesh.cell_volumes
    np.add.at(f, Kd, t_dir * g_dir[dir_faces])
    neu = np.flatnonzero(~is_dir & (mesh.face_cells[:, 1] < 0))
    np.add.at(f, mesh.face_cells[neu, 0], -g_neu[neu] * mesh.face_areas[neu])

    if not with_stencils:
        return A, f
    ef = np.concatenate([interior, interior, dir_faces])
    ec = np.concatenate([K, L, Kd])
    ev = np.concatenate([t_int, -t_int, t_dir])
    const = np.zeros(mesh.n_faces)
    const[dir_faces] = -t_dir * g_dir[dir_faces]
    const[neu] = g_neu[neu] * mesh.face_areas[neu]
    return A, f, FluxStencil(mesh.n_faces, ef, ec, ev, const)


# ---------------------------------------------------------------------------
# MPFA-O
# ---------------------------------------------------------------------------

def _cell_offsets(dim: int) -> np.ndarray:
    # offset o: bit a set -> cell on the + side of the vertex along axis a
    offs = np.empty((2 ** dim, dim), dtype=np.int64)
    for o in range(2 ** dim):
        for a in range(dim):
            offs[o, a] = ((o >> a) & 1) - 1
    return offs


def _subface_slots(dim: int):
    """Static subface slots of a vertex: (axis, perp offsets, lower/upper cell
    offset indices). Ordering is fixed: axis-major, perp combinations in
    lexicographic {-1,0} order."""
    offs = _cell_offsets(dim)
    index_of = {tuple(v): i for i, v in enumerate(offs)}
    slots = []
    for axis in range(dim):
        perp = [a for a in range(dim) if a != axis]
        for combo in product((-1, 0), repeat=dim - 1):
            lower = [0] * dim
            lower[axis] = -1
            upper = [0] * dim
            upper[axis] = 0
            for a, v in zip(perp, combo):
                lower[a] = v
                upper[a] = v
            slots.append((axis, combo, index_of[tuple(lower)], index_of[tuple(upper)]))
    return slots


def assemble_mpfa_o(mesh: Mesh, field: DiffusionField, bc: FlowBoundarySpec,
                    with_stencils: bool = False, diagnostics: bool = False):
    """Multipoint flux O-method assembly.

    Around every mesh vertex, adjacent cells are split into sub-cells; a
    linear pressure is reconstructed in each from the cell value and the
    continuity-point values of its sub-faces (continuity points sit at the
    parent face centroids). Enforcing flux continuity across interior
    sub-faces yields a solvable local system per vertex; eliminating the
    interface values produces multipoint transmissibilities that are
    scattered into the global matrix.
    """
    dim = mesh.dim
    Lam = field.si_tensors()
    is_dir, g_dir, g_neu, q = _bc_arrays(mesh, bc)

    node_dims = np.array([n + 1 for n in mesh.cart_dims])
    counts = np.array(mesh.cart_dims)
    n_nodes = mesh.n_nodes
    vert_ijk = mesh.node_ijk(np.arange(n_nodes))
    offs = _cell_offsets(dim)
    slots = _subface_slots(dim)
    n_off = offs.shape[0]

    # presence mask of each candidate cell around each vertex
    cell_ijk = vert_ijk[:, None, :] + offs[None, :, :]          # (nv, n_off, d)
    present = np.all((cell_ijk >= 0) & (cell_ijk < counts), axis=2)
    cell_ids = np.zeros((n_nodes, n_off), dtype=np.int64)
    mult = np.cumprod(np.concatenate([[1], counts[:-1]]))
    cell_ids = np.where(present, np.clip(cell_ijk, 0, None) @ mult, -1)

    # face id per subface slot (valid where at least one adjacent cell exists)
    n_slots = len(slots)
    sub_face = np.full((n_nodes, n_slots), -1, dtype=np.int64)
    sub_active = np.zeros((n_nodes, n_slots), dtype=bool)
    for s, (axis, combo, lo_off, hi_off) in enumerate(slots):
        perp_axes = [a for a in range(dim) if a != axis]
        perp_cells = np.stack(
            [vert_ijk[:, a] + v for a, v in zip(perp_axes, combo)], axis=1
        )
        valid = present[:, lo_off] | present[:, hi_off]
        valid &= np.all(
            (perp_cells >= 0) & (perp_cells < counts[perp_axes]), axis=1
        )
        ids = mesh.structured_face_index(axis, vert_ijk[:, axis],
                                         np.clip(perp_cells, 0, None))
        sub_face[:, s] = np.where(valid, ids, -1)
        sub_active[:, s] = valid

    # bc kind per subface: 0 interior, 1 dirichlet, 2 neumann, -1 absent
    kind = np.full((n_nodes, n_slots), -1, dtype=np.int8)
    act = sub_active
    fid = np.clip(sub_face, 0, None)
    interior_face = mesh.face_cells[:, 1] >= 0
    kind[act & interior_face[fid]] = 0
    kind[act & ~interior_face[fid] & is_dir[fid]] = 1
    kind[act & ~interior_face[fid] & ~is_dir[fid]] = 2

    # group vertices by (cell presence, subface bc pattern)
    pres_key = present @ (1 << np.arange(n_off))
    kind_key = (kind + 1).astype(np.int64) @ (4 ** np.arange(n_slots))
    _, group_ids = np.unique(
        np.stack([pres_key, kind_key], axis=1), axis=0, return_inverse=True
    )

    rows_acc, cols_acc, vals_acc = [], [], []
    f = q * mesh.cell_volumes
    st_face, st_cell, st_coeff = [], [], []
    st_const = np.zeros(mesh.n_faces)
    max_resid = 0.0

    for g in range(group_ids.max() + 1):
        verts = np.flatnonzero(group_ids == g)
        v0 = verts[0]
        loc_cells = np.flatnonzero(present[v0])          # offset indices
        loc_subs = np.flatnonzero(sub_active[v0])        # slot indices
        nc, ns = loc_cells.size, loc_subs.size
        nv = verts.size
        cell_loc_of = {int(o): i for i, o in enumerate(loc_cells)}
        sub_loc_of = {int(s): i for i, s in enumerate(loc_subs)}

        cells_g = cell_ids[verts][:, loc_cells]          # (nv, nc)
        faces_g = sub_face[verts][:, loc_subs]           # (nv, ns)
        cts = mesh.face_centroids[faces_g]               # (nv, ns, d)

        # sub-face area vectors aligned with the stored face normal
        vc = mesh.nodes[verts]                           # (nv, d)
        if dim == 2:
            t = cts - vc[:, None, :]
            av = np.stack([t[..., 1], -t[..., 0]], axis=-1)
        else:
            fnodes = mesh.face_nodes[faces_g]            # (nv, ns, 4)
            pos = np.argmax(fnodes == verts[:, None, None], axis=2)
            nxt = mesh.nodes[np.take_along_axis(fnodes, ((pos + 1) % 4)[..., None],
                                                axis=2)[..., 0]]
            prv = mesh.nodes[np.take_along_axis(fnodes, ((pos + 3) % 4)[..., None],
                                                axis=2)[..., 0]]
            em1 = 0.5 * (vc[:, None, :] + nxt)
            em2 = 0.5 * (vc[:, None, :] + prv)
            av = 0.5 * np.cross(cts - vc[:, None, :], em2 - em1)
        nrm = mesh.face_normals[faces_g]
        sign = np.sign(np.einsum("vsd,vsd->vs", av, nrm))
        av = av * sign[..., None]                        # along stored normal
        subarea = np.linalg.norm(av, axis=2)

        # per local cell: its dim subfaces, outward sign of av
        cell_subs = np.zeros((nc, dim), dtype=np.int64)
        cell_sub_sign = np.zeros((nc, dim))
        fill = np.zeros(nc, dtype=np.int64)
        for s_local, s_slot in enumerate(loc_subs):
            axis, combo, lo_off, hi_off = slots[s_slot]
            for off, is_lower in ((lo_off, True), (hi_off, False)):
                if off in cell_loc_of and present[v0, off]:
                    c = cell_loc_of[off]
                    cell_subs[c, fill[c]] = s_local
                    # interior faces: stored normal is lower->upper;
                    # boundary faces: outward from the single cell.
                    if kind[v0, s_slot] == 0:
                        cell_sub_sign[c, fill[c]] = 1.0 if is_lower else -1.0
                    else:
                        cell_sub_sign[c, fill[c]] = 1.0
                    fill[c] += 1
        assert np.all(fill == dim)

        # omega[c]: (nv, d, d) flux coefficients of each sub-cell
        M = np.zeros((nv, ns, ns))
        N = np.zeros((nv, ns, nc))
        r = np.zeros((nv, ns))
        omega_rows = np.zeros((nv, ns, dim))   # primary-side omega row per subface
        prim_cell = np.full(ns, -1, dtype=np.int64)
        prim_subs = np.zeros((ns, dim), dtype=np.int64)

        centroids_g = mesh.cell_centroids[cells_g]       # (nv, nc, d)
        for c in range(nc):
            sub_idx = cell_subs[c]
            X = cts[:, sub_idx, :] - centroids_g[:, c, None, :]
            Arows = av[:, sub_idx, :] * cell_sub_sign[c][None, :, None]
            B = np.einsum("vsd,vde->vse", Arows, Lam[cells_g[:, c]])
            # omega = B X^{-1}  via  X^T omega^T = B^T
            omega = np.linalg.solve(np.swapaxes(X, 1, 2),
                                    np.swapaxes(B, 1, 2))
            omega = np.swapaxes(omega, 1, 2)             # (nv, d, d)
            rowsum = omega.sum(axis=2)                   # (nv, d)
            for a in range(dim):
                s_local = sub_idx[a]
                s_slot = loc_subs[s_local]
                k = kind[v0, s_slot]
                if k == 1:
                    continue  # Dirichlet rows are identities
                if k == 2 and cell_sub_sign[c, a] != 1.0:
                    continue  # Neumann rows use the interior side only
                M[:, s_local, sub_idx] += omega[:, a, :]
                N[:, s_local, c] += rowsum[:, a]
            # primary side (flux along the stored normal): sign +1
            for a in range(dim):
                if cell_sub_sign[c, a] == 1.0:
                    s_local = sub_idx[a]
                    prim_cell[s_local] = c
                    prim_subs[s_local] = sub_idx
                    omega_rows[:, s_local, :] = omega[:, a, :]

        for s_local, s_slot in enumerate(loc_subs):
            k = kind[v0, s_slot]
            if k == 1:
                M[:, s_local, s_local] = 1.0
                r[:, s_local] = g_dir[faces_g[:, s_local]]
            elif k == 2:
                r[:, s_local] = -g_neu[faces_g[:, s_local]] * subarea[:, s_local]

        rhs = np.concatenate([N, r[..., None]], axis=2)
        try:
            sol = np.linalg.solve(M, rhs)
        except np.linalg.LinAlgError:
            bad = _find_singular_vertex(M, verts)
            raise ValueError(
                f"singular MPFA interaction system at vertex {bad}"
            ) from None
        if diagnostics:
            resid = np.abs(np.einsum("vij,vjk->vik", M, sol) - rhs).max()
            scale = max(np.abs(rhs).max(), 1e-30)
            max_resid = max(max_resid, resid / scale)
        sol_N, sol_r = sol[:, :, :nc], sol[:, :, nc]

        # transmissibilities for interior + Dirichlet subfaces
        for s_local, s_slot in enumerate(loc_subs):
            k = kind[v0, s_slot]
            faces_s = faces_g[:, s_local]
            if k == 2:
                np.add.at(f, cells_g[:, prim_cell[s_local]],
                          -g_neu[faces_s] * subarea[:, s_local])
                np.add.at(st_const, faces_s, g_neu[faces_s] * subarea[:, s_local])
                continue
            orow = omega_rows[:, s_local, :]             # (nv, d)
            T = -np.einsum("vd,vdc->vc", orow, sol_N[:, prim_subs[s_local], :])
            T[:, prim_cell[s_local]] += orow.sum(axis=1)
            tconst = -np.einsum("vd,vd->v", orow, sol_r[:, prim_subs[s_local]])

            K0 = cells_g[:, prim_cell[s_local]]
            for c in range(nc):
                rows_acc.append(K0)
                cols_acc.append(cells_g[:, c])
                vals_acc.append(T[:, c])
            np.add.at(f, K0, -tconst)
            if k == 0:
                other = mesh.face_cells[faces_s]
                K1 = np.where(other[:, 0] == K0, other[:, 1], other[:, 0])
                for c in range(nc):
                    rows_acc.append(K1)
                    cols_acc.append(cells_g[:, c])
                    vals_acc.append(-T[:, c])
                np.add.at(f, K1, tconst)
            if with_stencils:
                for c in range(nc):
                    st_face.append(faces_s)
                    st_cell.append(cells_g[:, c])
                    st_coeff.append(T[:, c])
                np.add.at(st_const, faces_s, tconst)

    A = canonical_csr(sp.coo_matrix(
        (np.concatenate(vals_acc),
         (np.concatenate(rows_acc), np.concatenate(cols_acc))),
        shape=(mesh.n_cells, mesh.n_cells),
    ))
    out = [A, f]
    if with_stencils:
        stencil = FluxStencil(
            mesh.n_faces,
            np.concatenate(st_face) if st_face else np.empty(0, np.int64),
            np.concatenate(st_cell) if st_cell else np.empty(0, np.int64),
            np.concatenate(st_coeff) if st_coeff else np.empty(0),
            st_const,
        )
        out.append(stencil)
    if diagnostics:
        out.append({"max_local_residual": max_resid})
    return tuple(out)


def _find_singular_vertex(M: np.ndarray, verts: np.ndarray) -> int:
    for i in range(M.shape[0]):
        if abs(np.linalg.det(M[i])) < 1e-300:
            return int(verts[i])
    return int(verts[0])
