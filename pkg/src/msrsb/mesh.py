"""Structured quadrilateral/hexahedral meshes with optional distortion.

Cells and nodes are indexed x-fastest: ``cell = i + nx*(j + ny*k)``. Faces
are enumerated per axis (all x-normal faces, then y, then z); interior face
normals point from the lower- to the higher-index cell, boundary normals
point outward. Meshes are immutable after construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

GAUSS_1D = (-1.0 / np.sqrt(3.0), 1.0 / np.sqrt(3.0))


@dataclass(frozen=True)
class GridDistortion:
    """Node perturbation and affine distortion of a structured lattice.

    ``amplitude`` scales the random interior-vertex displacement as a fraction
    of the (per-axis) grid spacing: each coordinate moves by
    ``amplitude * psi * dx`` with ``psi`` uniform on [-1/2, 1/2]. Draws come
    from a seeded 64-bit PCG64 stream in vertex-major order (all coordinates
    of vertex 0, then vertex 1, ...; x before y before z). Vertices on a
    boundary plane are not moved normal to that plane. ``stretch`` multiplies
    coordinates per axis and ``skew`` adds shear terms
    ``x[tgt] += factor * x[src]``; both are applied after the perturbation.
    ``topography_amplitude`` (3D only) rescales node elevations columnwise by
    a smooth two-frequency cosine surface of that relative amplitude.
    """

    amplitude: float = 0.0
    stretch: tuple[float, ...] = ()
    skew: tuple[tuple[int, int, float], ...] = ()
    seed: int = 0
    topography_amplitude: float = 0.0

    def __post_init__(self):
        if self.amplitude < 0:
            raise ValueError("perturbation amplitude must be nonnegative")


@dataclass
class Mesh:
    dim: int
    cart_dims: tuple[int, ...]
    extents: tuple[float, ...]
    nodes: np.ndarray          # (n_nodes, dim)
    cells: np.ndarray          # (n_cells, 2**dim) node ids, VTK corner order
    cell_centroids: np.ndarray
    cell_volumes: np.ndarray
    face_nodes: np.ndarray     # (n_faces, 2 or 4)
    face_cells: np.ndarray     # (n_faces, 2); -1 marks the outside
    face_normals: np.ndarray   # unit
    face_areas: np.ndarray
    face_centroids: np.ndarray
    face_axis: np.ndarray      # axis each face is logically normal to
    face_slice: np.ndarray     # lattice position of the face along its axis

    @property
    def n_cells(self) -> int:
        return self.cells.shape[0]

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_faces(self) -> int:
        return self.face_nodes.shape[0]

    @cached_property
    def interior_faces(self) -> np.ndarray:
        return np.flatnonzero(self.face_cells[:, 1] >= 0)

    @cached_property
    def boundary_face_ids(self) -> np.ndarray:
        return np.flatnonzero(self.face_cells[:, 1] < 0)

    @cached_property
    def cell_adjacency(self) -> sp.csr_matrix:
        """Symmetric cell-to-cell graph over shared faces."""
        fc = self.face_cells[self.interior_faces]
        ones = np.ones(fc.shape[0])
        g = sp.coo_matrix(
            (np.concatenate([ones, ones]),
             (np.concatenate([fc[:, 0], fc[:, 1]]),
              np.concatenate([fc[:, 1], fc[:, 0]]))),
            shape=(self.n_cells, self.n_cells),
        )
        return g.tocsr()

    @cached_property
    def node_cells(self) -> sp.csr_matrix:
        """Node-to-cell incidence (cells sharing each vertex)."""
        nc = self.cells.shape[1]
        rows = self.cells.ravel()
        cols = np.repeat(np.arange(self.n_cells), nc)
        inc = sp.coo_matrix(
            (np.ones(rows.size), (rows, cols)), shape=(self.n_nodes, self.n_cells)
        )
        return inc.tocsr()

    @cached_property
    def node_adjacency(self) -> sp.csr_matrix:
        """Cell-to-cell graph over shared vertices."""
        inc = self.node_cells
        g = (inc.T @ inc).tocsr()
        g.setdiag(0)
        g.eliminate_zeros()
        return g

    def cell_index(self, ijk) -> np.ndarray:
        ijk = np.atleast_2d(ijk)
        idx = ijk[:, 0].copy()
        mult = 1
        for a in range(1, self.dim):
            mult *= self.cart_dims[a - 1]
            idx = idx + mult * ijk[:, a]
        return idx if idx.size > 1 else idx[0]

    def cell_ijk(self, ids) -> np.ndarray:
        ids = np.atleast_1d(np.asarray(ids))
        out = np.empty((ids.size, self.dim), dtype=np.int64)
        rem = ids.copy()
        for a in range(self.dim):
            out[:, a] = rem % self.cart_dims[a]
            rem = rem // self.cart_dims[a]
        return out

    def node_ijk(self, ids) -> np.ndarray:
        ids = np.atleast_1d(np.asarray(ids))
        dims = [n + 1 for n in self.cart_dims]
        out = np.empty((ids.size, self.dim), dtype=np.int64)
        rem = ids.copy()
        for a in range(self.dim):
            out[:, a] = rem % dims[a]
            rem = rem // dims[a]
        return out

    @cached_property
    def _face_axis_offsets(self) -> np.ndarray:
        counts = np.bincount(self.face_axis, minlength=self.dim)
        return np.concatenate([[0], np.cumsum(counts)])

    def structured_face_index(self, axis: int, slice_pos, perp_ijk) -> np.ndarray:
        """Global face id from lattice position.

        ``slice_pos`` is the face's position along its normal axis (0..n_axis)
        and ``perp_ijk`` the cell indices along the remaining axes, in
        ascending axis order.
        """
        perp_axes = [a for a in range(self.dim) if a != axis]
        idx = np.asarray(slice_pos).copy()
        mult = self.cart_dims[axis] + 1
        perp_ijk = np.atleast_2d(perp_ijk)
        for col, a in enumerate(perp_axes):
            idx = idx + mult * perp_ijk[..., col]
            mult *= self.cart_dims[a]
        return self._face_axis_offsets[axis] + idx

    def boundary_faces(self, axis: int, side: str) -> np.ndarray:
        """Boundary face ids on one side of the box ('min' or 'max')."""
        pos = 0 if side == "min" else self.cart_dims[axis]
        mask = (
            (self.face_axis == axis)
            & (self.face_slice == pos)
            & (self.face_cells[:, 1] < 0)
        )
        return np.flatnonzero(mask)

    def boundary_nodes(self, axis: int, side: str) -> np.ndarray:
        ijk = self.node_ijk(np.arange(self.n_nodes))
        pos = 0 if side == "min" else self.cart_dims[axis]
        return np.flatnonzero(ijk[:, axis] == pos)

    def cells_in_box(self, lo, hi) -> np.ndarray:
        """Cells whose centroid lies in the closed box [lo, hi]."""
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        mask = np.all(
            (self.cell_centroids >= lo) & (self.cell_centroids <= hi), axis=1
        )
        return np.flatnonzero(mask)


def _reference_corners(dim: int) -> np.ndarray:
    if dim == 2:
        return np.array([[-1, -1], [1, -1], [1, 1], [-1, 1]], dtype=float)
    return np.array(
        [[-1, -1, -1], [1, -1, -1], [1, 1, -1], [-1, 1, -1],
         [-1, -1, 1], [1, -1, 1], [1, 1, 1], [-1, 1, 1]],
        dtype=float,
    )


def shape_values(dim: int, points: np.ndarray) -> np.ndarray:
    """Q1 shape-function values on the reference element, (n_points, n_corners)."""
    corners = _reference_corners(dim)
    terms = 0.5 * (1.0 + points[:, None, :] * corners[None, :, :])
    return np.prod(terms, axis=2)


def shape_gradients(dim: int, points: np.ndarray) -> np.ndarray:
    """Q1 shape-function gradients on the reference element.

    Returns an array of shape ``(n_points, n_corners, dim)``.
    """
    corners = _reference_corners(dim)
    npts = points.shape[0]
    grads = np.empty((npts, corners.shape[0], dim))
    for a in range(dim):
        terms = 0.5 * (1.0 + points[:, None, :] * corners[None, :, :])
        terms[:, :, a] = 0.5 * corners[None, :, a]
        grads[:, :, a] = np.prod(terms, axis=2)
    return grads


def gauss_points(dim: int) -> tuple[np.ndarray, np.ndarray]:
    """Tensor-product 2-point Gauss rule: (points, weights)."""
    axes = [np.array(GAUSS_1D)] * dim
    grids = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=1)
    return pts, np.ones(pts.shape[0])


def cell_jacobian_dets(nodes: np.ndarray, cells: np.ndarray, dim: int) -> np.ndarray:
    """det(J) of the Q1 map at every Gauss point; shape (n_cells, n_gauss)."""
    pts, _ = gauss_points(dim)
    dN = shape_gradients(dim, pts)  # (g, corner, dim)
    X = nodes[cells]                # (cell, corner, dim)
    J = np.einsum("gci,ecj->egij", dN, X)
    return np.linalg.det(J)


def _lattice_nodes(counts, extents):
    axes = [np.linspace(0.0, extents[a], counts[a] + 1) for a in range(len(counts))]
    grids = np.meshgrid(*axes, indexing="ij")
    return np.stack([g.ravel(order="F") for g in grids], axis=1)


def _lattice_cells(counts):
    dim = len(counts)
    node_dims = [n + 1 for n in counts]

    def nid(*ijk):
        idx = ijk[0]
        mult = 1
        for a in range(1, dim):
            mult *= node_dims[a - 1]
            idx = idx + mult * ijk[a]
        return idx

    if dim == 2:
        nx, ny = counts
        i, j = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
        i = i.ravel(order="F")
        j = j.ravel(order="F")
        return np.stack(
            [nid(i, j), nid(i + 1, j), nid(i + 1, j + 1), nid(i, j + 1)], axis=1
        )
    nx, ny, nz = counts
    i, j, k = np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz), indexing="ij")
    i = i.ravel(order="F")
    j = j.ravel(order="F")
    k = k.ravel(order="F")
    return np.stack(
        [nid(i, j, k), nid(i + 1, j, k), nid(i + 1, j + 1, k), nid(i, j + 1, k),
         nid(i, j, k + 1), nid(i + 1, j, k + 1), nid(i + 1, j + 1, k + 1),
         nid(i, j + 1, k + 1)],
        axis=1,
    )


def _enumerate_faces(counts):
    """Face connectivity of the lattice.

    Returns (face_nodes, face_cells, face_axis, face_slice). Node orderings
    are chosen so the geometric normal of an axis-a face points along +a on
    the undistorted lattice.
    """
    dim = len(counts)
    node_dims = [n + 1 for n in counts]

    def nid(ijk):
        idx = ijk[0]
        mult = 1
        for a in range(1, dim):
            mult *= node_dims[a - 1]
            idx = idx + mult * ijk[a]
        return idx

    def cid(ijk, valid):
        idx = ijk[0]
        mult = 1
        for a in range(1, dim):
            mult *= counts[a - 1]
            idx = idx + mult * ijk[a]
        return np.where(valid, idx, -1)

    all_nodes, all_cells, all_axis, all_slice = [], [], [], []
    for axis in range(dim):
        perp = [a for a in range(dim) if a != axis]
        ranges = [np.arange(counts[a]) for a in perp]
        ranges.insert(0, np.arange(counts[axis] + 1))
        grids = np.meshgrid(*ranges, indexing="ij")
        s = grids[0].ravel(order="F")
        pp = [g.ravel(order="F") for g in grids[1:]]

        def coords(ds, dperp):
            ijk = [None] * dim
            ijk[axis] = s + ds
            for a, d, base in zip(perp, dperp, pp):
                ijk[a] = base + d
            return ijk

        if dim == 2:
            if axis == 0:
                fn = np.stack([nid(coords(0, (0,))), nid(coords(0, (1,)))], axis=1)
            else:
                fn = np.stack([nid(coords(0, (1,))), nid(coords(0, (0,)))], axis=1)
        else:
            if axis == 0:
                quad = [(0, 0), (1, 0), (1, 1), (0, 1)]
            elif axis == 1:
                quad = [(0, 0), (0, 1), (1, 1), (1, 0)]
            else:
                quad = [(0, 0), (1, 0), (1, 1), (0, 1)]
            fn = np.stack([nid(coords(0, d)) for d in quad], axis=1)

        lower = coords(-1, (0,) * (dim - 1))
        upper = coords(0, (0,) * (dim - 1))
        fc_lo = cid(lower, s > 0)
        fc_hi = cid(upper, s < counts[axis])
        all_nodes.append(fn)
        all_cells.append(np.stack([fc_lo, fc_hi], axis=1))
        all_axis.append(np.full(s.size, axis, dtype=np.int64))
        all_slice.append(s)
    return (
        np.concatenate(all_nodes),
        np.concatenate(all_cells),
        np.concatenate(all_axis),
        np.concatenate(all_slice),
    )


def _face_geometry(nodes, face_nodes, dim):
    if dim == 2:
        t = nodes[face_nodes[:, 1]] - nodes[face_nodes[:, 0]]
        area_vec = np.stack([t[:, 1], -t[:, 0]], axis=1)
    else:
        d1 = nodes[face_nodes[:, 2]] - nodes[face_nodes[:, 0]]
        d2 = nodes[face_nodes[:, 3]] - nodes[face_nodes[:, 1]]
        area_vec = 0.5 * np.cross(d1, d2)
    areas = np.linalg.norm(area_vec, axis=1)
    if np.any(areas <= 0):
        raise ValueError("degenerate face (zero area) in mesh")
    normals = area_vec / areas[:, None]
    centroids = nodes[face_nodes].mean(axis=1)
    return normals, areas, centroids


def build_structured_mesh(
    nx: int,
    ny: int,
    nz: int | None = None,
    extents: tuple[float, ...] = None,
    distortion: GridDistortion | None = None,
) -> Mesh:
    """Build a structured (optionally distorted) quad or hex mesh.

    ``extents`` are the physical box lengths before stretch/skew; they default
    to the unit box. Raises ``ValueError`` if distortion inverts any cell.
    """
    counts = (nx, ny) if nz is None else (nx, ny, nz)
    if any(c < 1 for c in counts):
        raise ValueError("cell counts must be positive")
    dim = len(counts)
    if extents is None:
        extents = (1.0,) * dim
    extents = tuple(float(e) for e in extents)
    if len(extents) != dim or any(e <= 0 for e in extents):
        raise ValueError("extents must be positive and match the dimension")

    nodes = _lattice_nodes(counts, extents)
    spacing = np.array([extents[a] / counts[a] for a in range(dim)])

    if distortion is not None and (
        distortion.amplitude > 0 or distortion.topography_amplitude > 0
    ):
        rng = np.random.default_rng(distortion.seed)
        if distortion.amplitude > 0:
            psi = rng.uniform(-0.5, 0.5, size=nodes.shape)
            node_dims = [n + 1 for n in counts]
            idx = np.arange(nodes.shape[0])
            interior = np.empty(nodes.shape, dtype=bool)
            rem = idx.copy()
            for a in range(dim):
                pos = rem % node_dims[a]
                rem = rem // node_dims[a]
                interior[:, a] = (pos > 0) & (pos < counts[a])
            nodes = nodes + distortion.amplitude * psi * spacing * interior
        if distortion.topography_amplitude > 0:
            if dim != 3:
                raise ValueError("topography requires a 3D mesh")
            phases = rng.uniform(0.0, 1.0, size=4)
            lx, ly, lz = extents
            x, y = nodes[:, 0], nodes[:, 1]
            h = 0.5 * distortion.topography_amplitude * lz * (
                np.cos(2 * np.pi * (x / lx + phases[0]))
                * np.cos(2 * np.pi * (y / ly + phases[1]))
                + np.cos(2 * np.pi * (3 * x / lx + phases[2]))
                * np.cos(2 * np.pi * (3 * y / ly + phases[3]))
            )
            nodes[:, 2] *= 1.0 + h / lz

    if distortion is not None:
        if distortion.stretch:
            if len(distortion.stretch) != dim:
                raise ValueError("stretch factors must match the dimension")
            nodes = nodes * np.asarray(distortion.stretch)
        if distortion.skew:
            base = nodes.copy()
            for tgt, src, factor in distortion.skew:
                nodes[:, tgt] += factor * base[:, src]

    cells = _lattice_cells(counts)
    dets = cell_jacobian_dets(nodes, cells, dim)
    if np.any(dets <= 0):
        bad = int(np.argwhere(np.any(dets <= 0, axis=1))[0, 0])
        raise ValueError(
            f"distortion inverted cell {bad} (nonpositive Jacobian); "
            "reduce the amplitude or change the seed"
        )
    volumes = dets.sum(axis=1)
    centroids = nodes[cells].mean(axis=1)

    face_nodes, face_cells, face_axis, face_slice = _enumerate_faces(counts)
    # Boundary faces keep their single (interior) cell in column 0.
    swap = face_cells[:, 0] < 0
    face_cells[swap] = face_cells[swap][:, ::-1]
    normals, areas, face_centroids = _face_geometry(nodes, face_nodes, dim)

    # Orient: interior lower->upper, boundary outward. Pointing away from
    # cell 0 covers both (cell 0 is the lower cell on interior faces and the
    # only cell on boundary faces).
    outward = face_centroids - centroids[face_cells[:, 0]]
    flip = np.einsum("fi,fi->f", normals, outward) < 0
    normals = np.where(flip[:, None], -normals, normals)

    return Mesh(
        dim=dim,
        cart_dims=counts,
        extents=extents,
        nodes=nodes,
        cells=cells,
        cell_centroids=centroids,
        cell_volumes=volumes,
        face_nodes=face_nodes,
        face_cells=face_cells,
        face_normals=normals,
        face_areas=areas,
        face_centroids=face_centroids,
        face_axis=face_axis,
        face_slice=face_slice,
    )


def write_vtk(mesh: Mesh, path, cell_data=None, point_data=None) -> None:
    """Write the mesh as legacy VTK unstructured-grid text."""
    vtk_type = 9 if mesh.dim == 2 else 12
    npc = mesh.cells.shape[1]
    with open(path, "w") as f:
        f.write("# vtk DataFile Version 3.0\nmsrsb mesh\nASCII\n")
        f.write("DATASET UNSTRUCTURED_GRID\n")
        f.write(f"POINTS {mesh.n_nodes} double\n")
        pts = mesh.nodes
        if mesh.dim == 2:
            pts = np.column_stack([pts, np.zeros(mesh.n_nodes)])
        for p in pts:
            f.write(f"{p[0]:.17g} {p[1]:.17g} {p[2]:.17g}\n")
        f.write(f"CELLS {mesh.n_cells} {mesh.n_cells * (npc + 1)}\n")
        for c in mesh.cells:
            f.write(f"{npc} " + " ".join(str(v) for v in c) + "\n")
        f.write(f"CELL_TYPES {mesh.n_cells}\n")
        f.write("\n".join([str(vtk_type)] * mesh.n_cells) + "\n")
        if cell_data:
            f.write(f"CELL_DATA {mesh.n_cells}\n")
            for name, values in cell_data.items():
                f.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
                f.write("\n".join(f"{v:.17g}" for v in np.asarray(values)) + "\n")
        if point_data:
            f.write(f"POINT_DATA {mesh.n_nodes}\n")
            for name, values in point_data.items():
                f.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
                f.write("\n".join(f"{v:.17g}" for v in np.asarray(values)) + "\n")
