"""Coarse partitions, coarse-node selection, and basis support regions.

A partition assigns every fine entity (cell for finite volumes, node for
finite elements) to a coarse block anchored by one representative entity,
the coarse node. Support regions restrict where each basis function may be
nonzero; their hulls define the support-boundary cells, and the cells of one
basis lying on other bases' hulls are its edge cells.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy.sparse import csgraph

from .mesh import Mesh


@dataclass
class CoarsePartition:
    entity: str                     # "cell" | "node"
    kind: str                       # "structured" | "agglomerated"
    n_entities: int
    block_of: np.ndarray            # (n_entities,) block id per entity
    coarse_entity: np.ndarray       # (n_blocks,) anchor entity per block
    entity_dims: tuple[int, ...] | None = None   # lattice dims (structured)
    block_grid: tuple[int, ...] | None = None    # blocks per axis (structured)
    support: list[np.ndarray] | None = None      # sorted entity ids per basis
    boundary: list[np.ndarray] | None = None
    edge: list[np.ndarray] | None = None
    boundary_mask: np.ndarray | None = None      # union of all hulls

    @property
    def n_blocks(self) -> int:
        return self.coarse_entity.shape[0]

    @property
    def has_support(self) -> bool:
        return self.support is not None

    def block_members(self, j: int) -> np.ndarray:
        return np.flatnonzero(self.block_of == j)

    @cached_property
    def support_csr(self) -> sp.csr_matrix:
        """Mask (n_entities x n_blocks): 1 where entity i may carry basis j."""
        self._require_support()
        cols = np.concatenate(
            [np.full(s.size, j) for j, s in enumerate(self.support)]
        )
        rows = np.concatenate(self.support)
        return sp.csr_matrix(
            (np.ones(rows.size), (rows, cols)),
            shape=(self.n_entities, self.n_blocks),
        )

    @cached_property
    def interior_csr(self) -> sp.csr_matrix:
        """Support minus edge cells: where the basis convergence is measured."""
        self._require_support()
        rows, cols = [], []
        for j, s in enumerate(self.support):
            keep = np.setdiff1d(s, self.edge[j], assume_unique=True)
            rows.append(keep)
            cols.append(np.full(keep.size, j))
        rows = np.concatenate(rows)
        cols = np.concatenate(cols)
        return sp.csr_matrix(
            (np.ones(rows.size), (rows, cols)),
            shape=(self.n_entities, self.n_blocks),
        )

    def _require_support(self):
        if self.support is None:
            raise ValueError("partition has no support regions; "
                             "call build_support_regions first")


def _ijk(ids: np.ndarray, dims) -> np.ndarray:
    ids = np.atleast_1d(np.asarray(ids))
    out = np.empty((ids.size, len(dims)), dtype=np.int64)
    rem = ids.copy()
    for a, d in enumerate(dims):
        out[:, a] = rem % d
        rem = rem // d
    return out


def _flat(ijk: np.ndarray, dims) -> np.ndarray:
    idx = ijk[..., 0].copy()
    mult = 1
    for a in range(1, len(dims)):
        mult *= dims[a - 1]
        idx = idx + mult * ijk[..., a]
    return idx


def partition_structured(mesh: Mesh, ratios) -> CoarsePartition:
    """Partition fine cells into logically structured blocks.

    ``ratios`` gives the fine-cells-per-block count along each axis (one int
    is broadcast). The last block per axis absorbs any remainder. The coarse
    node of a block is the member cell whose centroid is nearest the block's
    mean centroid (ties break to the lowest cell index).
    """
    ratios = _check_ratios(ratios, mesh.dim, mesh.cart_dims)
    dims = mesh.cart_dims
    nb_axis = tuple(dims[a] // ratios[a] for a in range(mesh.dim))

    ijk = _ijk(np.arange(mesh.n_cells), dims)
    block_axis = np.minimum(ijk // np.array(ratios), np.array(nb_axis) - 1)
    block_of = _flat(block_axis, nb_axis)
    n_blocks = int(np.prod(nb_axis))

    coarse = _centroid_nearest_anchor(mesh.cell_centroids, block_of, n_blocks)
    return CoarsePartition(
        entity="cell",
        kind="structured",
        n_entities=mesh.n_cells,
        block_of=block_of,
        coarse_entity=coarse,
        entity_dims=dims,
        block_grid=nb_axis,
    )


def partition_structured_nodes(mesh: Mesh, ratios) -> CoarsePartition:
    """Partition fine nodes for finite-element bases.

    Coarse nodes sit on the block-corner lattice (multiples of the ratio plus
    the domain boundary), so basis anchors coincide with coarse-grid vertices.
    Every fine node joins the block of its nearest coarse node in lattice
    index distance (ties to the lower coarse index per axis).
    """
    ratios = _check_ratios(ratios, mesh.dim, mesh.cart_dims)
    dims = mesh.cart_dims
    node_dims = tuple(n + 1 for n in dims)
    positions = []
    for a in range(mesh.dim):
        pos = list(range(0, dims[a], ratios[a]))
        if pos[-1] != dims[a]:
            pos.append(dims[a])
        # remainder smaller than the ratio: merge into the last interval
        if len(pos) >= 3 and pos[-1] - pos[-2] < ratios[a]:
            del pos[-2]
        positions.append(np.asarray(pos))
    nb_axis = tuple(len(p) for p in positions)

    ijk = _ijk(np.arange(int(np.prod(node_dims))), node_dims)
    block_axis = np.empty_like(ijk)
    for a in range(mesh.dim):
        dist = np.abs(ijk[:, a][:, None] - positions[a][None, :])
        block_axis[:, a] = np.argmin(dist, axis=1)
    block_of = _flat(block_axis, nb_axis)

    grids = np.meshgrid(*positions, indexing="ij")
    anchor_ijk = np.stack([g.ravel(order="F") for g in grids], axis=1)
    coarse = _flat(anchor_ijk, node_dims)
    return CoarsePartition(
        entity="node",
        kind="structured",
        n_entities=int(np.prod(node_dims)),
        block_of=block_of,
        coarse_entity=coarse,
        entity_dims=node_dims,
        block_grid=nb_axis,
    )


def _check_ratios(ratios, dim, dims):
    if np.isscalar(ratios):
        ratios = (int(ratios),) * dim
    ratios = tuple(int(r) for r in ratios)
    if len(ratios) != dim:
        raise ValueError("one coarsening ratio per axis required")
    if any(r < 2 for r in ratios):
        raise ValueError("coarsening ratio below 2 is rejected; small ratios "
                         "defeat the purpose of the coarse space")
    if any(dims[a] < ratios[a] for a in range(dim)):
        raise ValueError("coarsening ratio exceeds the fine cell count")
    return ratios


def _centroid_nearest_anchor(centroids, block_of, n_blocks) -> np.ndarray:
    anchors = np.empty(n_blocks, dtype=np.int64)
    order = np.argsort(block_of, kind="stable")
    bounds = np.searchsorted(block_of[order], np.arange(n_blocks + 1))
    for j in range(n_blocks):
        members = order[bounds[j]:bounds[j + 1]]
        members = np.sort(members)
        if members.size == 0:
            raise ValueError(f"block {j} is empty")
        center = centroids[members].mean(axis=0)
        d2 = np.einsum("ij,ij->i", centroids[members] - center,
                       centroids[members] - center)
        anchors[j] = members[int(np.argmin(d2))]
    return anchors


def partition_agglomerate(mesh: Mesh, target_blocks: int,
                          lloyd_iters: int = 4) -> CoarsePartition:
    """Seeded region-growing agglomeration over the face-adjacency graph.

    Seeds start from a farthest-point (maximin) traversal; a few Lloyd
    sweeps (graph Voronoi assignment, then recentering each seed at its
    block's graph center) even out the block sizes, and a final local
    rebalancing pass enforces sizes within a factor of two. The coarse node
    of each block is the member cell minimizing the maximum in-block graph
    distance (ties to the lowest index).
    """
    if target_blocks < 1 or target_blocks > mesh.n_cells:
        raise ValueError("target block count out of range")
    graph = mesh.cell_adjacency
    n = mesh.n_cells
    ncomp, _ = csgraph.connected_components(graph, directed=False)
    if ncomp != 1:
        raise ValueError("agglomeration requires a connected mesh")

    d0 = csgraph.dijkstra(graph, indices=0, unweighted=True)
    seeds = [int(np.argmax(d0))]
    while len(seeds) < target_blocks:
        d = csgraph.dijkstra(graph, indices=seeds, unweighted=True, min_only=True)
        d[seeds] = -1.0
        seeds.append(int(np.argmax(d)))

    block_of = None
    for sweep in range(lloyd_iters + 1):
        block_of = _voronoi_assign(graph, seeds)
        if sweep == lloyd_iters:
            break
        new_seeds = [
            _block_center(graph, np.flatnonzero(block_of == b))
            for b in range(target_blocks)
        ]
        if new_seeds == seeds:
            break
        seeds = new_seeds

    sizes = np.bincount(block_of, minlength=target_blocks)
    _rebalance(graph, block_of, sizes)

    anchors = np.array(
        [_block_center(graph, np.flatnonzero(block_of == b))
         for b in range(target_blocks)],
        dtype=np.int64,
    )
    return CoarsePartition(
        entity="cell",
        kind="agglomerated",
        n_entities=n,
        block_of=block_of,
        coarse_entity=anchors,
    )


def _voronoi_assign(graph, seeds) -> np.ndarray:
    _, _, sources = csgraph.dijkstra(
        graph, indices=seeds, unweighted=True, min_only=True,
        return_predecessors=True,
    )
    seed_block = {int(s): b for b, s in enumerate(seeds)}
    return np.array([seed_block[int(s)] for s in sources], dtype=np.int64)


def _block_center(graph, members: np.ndarray) -> int:
    if members.size == 1:
        return int(members[0])
    sub = graph[members][:, members]
    dist = csgraph.dijkstra(sub, unweighted=True)
    ecc = dist.max(axis=1)
    return int(members[int(np.argmin(ecc))])


def _rebalance(graph, block_of, sizes, max_moves_factor: int = 4):
    """Grow undersized blocks by pulling hull cells from larger neighbors."""
    indptr, indices = graph.indptr, graph.indices
    budget = max_moves_factor * block_of.shape[0]
    while sizes.max() > 2 * sizes.min() and budget > 0:
        moved = False
        for rec in np.argsort(sizes, kind="stable"):
            rec = int(rec)
            if sizes[rec] * 2 >= sizes.max():
                break  # remaining receivers are big enough already
            members = np.flatnonzero(block_of == rec)
            hull = np.unique(indices[np.concatenate(
                [np.arange(indptr[c], indptr[c + 1]) for c in members])])
            hull = hull[block_of[hull] != rec]
            if hull.size == 0:
                continue
            order = np.argsort(-sizes[block_of[hull]], kind="stable")
            for c in hull[order]:
                donor = int(block_of[c])
                if sizes[donor] <= sizes[rec] + 1:
                    break
                if _stays_connected(indptr, indices, block_of, donor, int(c)):
                    block_of[c] = rec
                    sizes[donor] -= 1
                    sizes[rec] += 1
                    moved = True
                    break
            if moved:
                break
        budget -= 1
        if not moved:
            break
    if sizes.max() > 2 * sizes.min():
        raise RuntimeError(
            "could not balance agglomerated block sizes within a factor of 2"
        )


def _stays_connected(indptr, indices, block_of, b, removed) -> bool:
    members = np.flatnonzero(block_of == b)
    rest = members[members != removed]
    if rest.size <= 1:
        return rest.size == 1
    seen = {int(rest[0])}
    stack = [int(rest[0])]
    target = set(int(c) for c in rest)
    while stack:
        c = stack.pop()
        for nb in indices[indptr[c]:indptr[c + 1]]:
            nb = int(nb)
            if nb in target and nb not in seen and nb != removed:
                seen.add(nb)
                stack.append(nb)
    return len(seen) == rest.size


def build_support_regions(mesh: Mesh, partition: CoarsePartition) -> CoarsePartition:
    """Complete a partition with support, boundary, and edge sets.

    Structured rule: the support of basis j spans, per axis, the open index
    interval between the coarse nodes of the neighboring blocks (clamped to
    the domain where no neighbor exists); the hull of that box forms the
    support-boundary cells. Agglomerated rule: the support is block j plus
    the face-adjacent blocks, trimmed to cells not much closer to another
    coarse node, and the hull is its face-neighbor shell.
    """
    if partition.kind == "structured":
        support, boundary = _box_supports(partition)
    else:
        support, boundary = _graph_supports(mesh, partition)

    n = partition.n_entities
    boundary_mask = np.zeros(n, dtype=bool)
    for b in boundary:
        boundary_mask[b] = True
    edge = [s[boundary_mask[s]] for s in support]

    covered = np.zeros(n, dtype=bool)
    for s in support:
        if s.size == 0:
            raise ValueError("degenerate partition produced an empty support")
        covered[s] = True
    if not covered.all():
        raise ValueError("support regions do not cover all entities")
    return replace(
        partition,
        support=support,
        boundary=boundary,
        edge=edge,
        boundary_mask=boundary_mask,
    )


def _box_supports(partition: CoarsePartition):
    dims = partition.entity_dims
    nb_axis = partition.block_grid
    dim = len(dims)
    anchor_ijk = _ijk(partition.coarse_entity, dims)
    support, boundary = [], []
    for j in range(partition.n_blocks):
        bidx = _ijk(np.array([j]), nb_axis)[0]
        lo = np.zeros(dim, dtype=np.int64)
        hi = np.asarray(dims, dtype=np.int64) - 1
        has_lo = np.zeros(dim, dtype=bool)
        has_hi = np.zeros(dim, dtype=bool)
        for a in range(dim):
            if bidx[a] > 0:
                nb = bidx.copy()
                nb[a] -= 1
                bound = anchor_ijk[_flat(nb, nb_axis)][a]
                lo[a] = bound + 1
                has_lo[a] = True
            if bidx[a] < nb_axis[a] - 1:
                nb = bidx.copy()
                nb[a] += 1
                bound = anchor_ijk[_flat(nb, nb_axis)][a]
                hi[a] = bound - 1
                has_hi[a] = True
            if lo[a] > hi[a]:
                raise ValueError(
                    f"degenerate partition: empty support for basis {j} on axis {a}"
                )
        support.append(np.sort(_box_ids(lo, hi, dims)))
        ext_lo = np.where(has_lo, lo - 1, lo)
        ext_hi = np.where(has_hi, hi + 1, hi)
        box = _box_ids(ext_lo, ext_hi, dims)
        ijk = _ijk(box, dims)
        on_hull = np.zeros(box.size, dtype=bool)
        for a in range(dim):
            if has_lo[a]:
                on_hull |= ijk[:, a] == ext_lo[a]
            if has_hi[a]:
                on_hull |= ijk[:, a] == ext_hi[a]
        boundary.append(np.sort(box[on_hull]))
    return support, boundary


def _box_ids(lo, hi, dims) -> np.ndarray:
    axes = [np.arange(lo[a], hi[a] + 1) for a in range(len(dims))]
    grids = np.meshgrid(*axes, indexing="ij")
    ijk = np.stack([g.ravel() for g in grids], axis=1)
    return _flat(ijk, dims)


def _graph_supports(mesh: Mesh, partition: CoarsePartition):
    graph = mesh.cell_adjacency
    block_of = partition.block_of
    nb = partition.n_blocks
    fc = mesh.face_cells[mesh.interior_faces]
    ba, bb = block_of[fc[:, 0]], block_of[fc[:, 1]]
    cross = ba != bb
    block_adj = sp.coo_matrix(
        (np.ones(cross.sum() * 2),
         (np.concatenate([ba[cross], bb[cross]]),
          np.concatenate([bb[cross], ba[cross]]))),
        shape=(nb, nb),
    ).tocsr()

    support, boundary = [], []
    for j in range(nb):
        nbr_blocks = np.unique(block_adj[j].indices)
        nbr_blocks = nbr_blocks[nbr_blocks != j]
        cand_blocks = np.concatenate([[j], nbr_blocks])
        cand = np.flatnonzero(np.isin(block_of, cand_blocks))
        sub = graph[cand][:, cand]
        local_of = {int(c): i for i, c in enumerate(cand)}
        seeds = [local_of[int(partition.coarse_entity[b])] for b in cand_blocks]
        dist = csgraph.dijkstra(sub, indices=seeds, unweighted=True)
        own = dist[0]
        if len(seeds) > 1:
            others = dist[1:].min(axis=0)
        else:
            others = np.full(cand.size, np.inf)
        keep = (own <= others + 1.0) & np.isfinite(own)
        keep |= block_of[cand] == j
        s = np.sort(cand[keep])
        support.append(s)
        in_s = np.zeros(partition.n_entities, dtype=bool)
        in_s[s] = True
        touched = graph @ in_s.astype(float) > 0
        boundary.append(np.flatnonzero(touched & ~in_s))
    return support, boundary


def export_partition(partition: CoarsePartition, path) -> None:
    """Write the entity-to-block map as one integer per line."""
    np.savetxt(path, partition.block_of, fmt="%d")
