import dataclasses

import numpy as np
import pytest

from msrsb.mesh import GridDistortion, build_structured_mesh
from msrsb.partition import (build_support_regions, export_partition,
                             partition_agglomerate, partition_structured,
                             partition_structured_nodes)


@pytest.fixture(scope="module")
def mesh9():
    return build_structured_mesh(9, 9)


@pytest.fixture(scope="module")
def part9(mesh9):
    return build_support_regions(mesh9, partition_structured(mesh9, 3))


def test_nine_blocks_of_nine(mesh9):
    p = partition_structured(mesh9, 3)
    assert p.n_blocks == 9
    assert np.all(np.bincount(p.block_of) == 9)


def test_interior_coarse_node_is_center_cell(mesh9):
    p = partition_structured(mesh9, 3)
    # center block anchors at fine cell (4, 4)
    assert p.coarse_entity[4] == mesh9.cell_index(np.array([[4, 4]]))


def test_coarse_node_lies_in_its_block(mesh9):
    p = partition_structured(mesh9, 3)
    assert all(p.block_of[p.coarse_entity[j]] == j for j in range(p.n_blocks))


def test_block_counts_match_benchmarks():
    m = build_structured_mesh(100, 100, extents=(20.0, 150.0))
    assert partition_structured(m, 5).n_blocks == 400
    m3 = build_structured_mesh(50, 50, 30)
    assert partition_structured(m3, 5).n_blocks == 600


def test_small_ratio_rejected(mesh9):
    with pytest.raises(ValueError, match="ratio"):
        partition_structured(mesh9, 1)


def test_remainder_absorbed_by_last_block():
    m = build_structured_mesh(10, 3)
    p = partition_structured(m, (3, 3))
    sizes = np.bincount(p.block_of)
    assert sorted(sizes.tolist()) == [9, 9, 12]


def test_center_support_box(mesh9, part9):
    sup = mesh9.cell_ijk(part9.support[4])
    assert sup[:, 0].min() == 2 and sup[:, 0].max() == 6
    assert sup[:, 1].min() == 2 and sup[:, 1].max() == 6
    assert part9.support[4].size == 25


def test_center_boundary_on_hull_lines(mesh9, part9):
    bd = mesh9.cell_ijk(part9.boundary[4])
    on_hull = (bd[:, 0] == 1) | (bd[:, 0] == 7) | (bd[:, 1] == 1) | (bd[:, 1] == 7)
    assert on_hull.all()
    assert part9.boundary[4].size == 24  # ring of the 7x7 extended box


def test_center_edge_is_the_cross(mesh9, part9):
    edge = mesh9.cell_ijk(part9.edge[4])
    assert np.all((edge[:, 0] == 4) | (edge[:, 1] == 4))
    assert part9.edge[4].size == 9


def test_corner_support_clamped(mesh9, part9):
    sup = mesh9.cell_ijk(part9.support[0])
    assert sup[:, 0].min() == 0 and sup[:, 1].min() == 0
    assert sup[:, 0].max() == 3 and sup[:, 1].max() == 3


def test_single_block_support_is_everything(mesh9):
    p = build_support_regions(mesh9, partition_structured(mesh9, 9))
    assert p.support[0].size == mesh9.n_cells
    assert p.boundary[0].size == 0


def test_supports_cover_all_cells(part9, mesh9):
    covered = np.zeros(mesh9.n_cells, dtype=bool)
    for s in part9.support:
        covered[s] = True
    assert covered.all()


def test_support_contains_block(part9):
    for j in range(part9.n_blocks):
        block = np.flatnonzero(part9.block_of == j)
        assert np.isin(block, part9.support[j]).all()


def test_edge_boundary_duality(part9):
    # each edge cell of one basis is a boundary cell of another
    for j in range(part9.n_blocks):
        assert part9.boundary_mask[part9.edge[j]].all()
        assert not np.isin(part9.boundary[j], part9.support[j]).any()


def test_distorted_mesh_same_invariants():
    m = build_structured_mesh(12, 10, distortion=GridDistortion(amplitude=0.25, seed=8))
    p = build_support_regions(m, partition_structured(m, (3, 5)))
    covered = np.zeros(m.n_cells, dtype=bool)
    for j, s in enumerate(p.support):
        covered[s] = True
        assert np.isin(np.flatnonzero(p.block_of == j), s).all()
    assert covered.all()


def test_node_partition_12x12():
    m = build_structured_mesh(12, 12)
    p = partition_structured_nodes(m, 3)
    assert p.n_blocks == 25  # 5 coarse nodes per direction
    center = 12
    assert np.array_equal(m.node_ijk(p.coarse_entity[center])[0], [6, 6])
    pc = build_support_regions(m, p)
    sup = m.node_ijk(pc.support[center])
    assert sup[:, 0].min() == 4 and sup[:, 0].max() == 8


def test_node_partition_remainder_positions():
    m = build_structured_mesh(10, 10)
    p = partition_structured_nodes(m, 3)
    pos = np.unique(m.node_ijk(p.coarse_entity)[:, 0])
    assert pos.tolist() == [0, 3, 6, 10]


def test_agglomerate_path_graph():
    m = build_structured_mesh(4, 1)
    p = partition_agglomerate(m, 2)
    parts = {frozenset(np.flatnonzero(p.block_of == b).tolist()) for b in range(2)}
    assert parts == {frozenset({0, 1}), frozenset({2, 3})}


def test_agglomerate_singletons():
    m = build_structured_mesh(4, 1)
    p = partition_agglomerate(m, 4)
    assert np.all(np.bincount(p.block_of) == 1)
    assert np.array_equal(np.sort(p.coarse_entity), np.arange(4))


def test_agglomerate_disconnected_rejected():
    m = build_structured_mesh(2, 1)
    severed = dataclasses.replace(
        m, face_cells=np.where(m.face_cells >= 0, -1, m.face_cells))
    with pytest.raises(ValueError, match="connected"):
        partition_agglomerate(severed, 2)


def test_agglomerate_46932_cells_into_50_blocks():
    # coarsening ratio ~938.6 with connected, balanced blocks
    m = build_structured_mesh(12, 3911)
    p = partition_agglomerate(m, 50)
    sizes = np.bincount(p.block_of)
    assert sizes.sum() == 46932
    assert m.n_cells / p.n_blocks == pytest.approx(938.64)
    assert sizes.max() <= 2 * sizes.min()
    # block connectivity: grow from the coarse node within the block
    graph = m.cell_adjacency
    for b in (0, 17, 49):
        members = set(np.flatnonzero(p.block_of == b).tolist())
        seen = {int(p.coarse_entity[b])}
        stack = [int(p.coarse_entity[b])]
        while stack:
            c = stack.pop()
            for nb in graph.indices[graph.indptr[c]:graph.indptr[c + 1]]:
                if int(nb) in members and int(nb) not in seen:
                    seen.add(int(nb))
                    stack.append(int(nb))
        assert seen == members


def test_graph_supports_cover_and_contain():
    m = build_structured_mesh(10, 10)
    p = build_support_regions(m, partition_agglomerate(m, 7))
    covered = np.zeros(m.n_cells, dtype=bool)
    for j, s in enumerate(p.support):
        covered[s] = True
        assert np.isin(np.flatnonzero(p.block_of == j), s).all()
        assert p.boundary_mask[p.edge[j]].all()
    assert covered.all()


def test_export_partition(tmp_path, mesh9):
    p = partition_structured(mesh9, 3)
    path = tmp_path / "part.txt"
    export_partition(p, path)
    data = np.loadtxt(path, dtype=int)
    assert np.array_equal(data, p.block_of)
