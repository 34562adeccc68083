import numpy as np
import pytest

from msrsb.mesh import (GridDistortion, build_structured_mesh, gauss_points,
                        shape_gradients, shape_values, write_vtk)


def test_unit_grid_cells_and_volumes():
    m = build_structured_mesh(9, 9)
    assert m.n_cells == 81
    assert np.allclose(m.cell_volumes, 1.0 / 81.0)


def test_volume_sums_match_domain():
    m = build_structured_mesh(4, 5, 6, extents=(1.0, 2.0, 3.0))
    assert m.cell_volumes.sum() == pytest.approx(6.0)
    md = build_structured_mesh(9, 9, distortion=GridDistortion(amplitude=0.2, seed=7))
    assert md.cell_volumes.sum() == pytest.approx(1.0)


def test_benchmark_geometry_100x100():
    m = build_structured_mesh(100, 100, extents=(20.0, 150.0),
                              distortion=GridDistortion(amplitude=0.2, seed=1))
    assert m.n_cells == 10000
    assert m.cell_volumes.sum() == pytest.approx(20.0 * 150.0)
    assert m.cell_volumes.min() > 0


def test_stretch_factor_20():
    m = build_structured_mesh(12, 12, distortion=GridDistortion(stretch=(1.0, 20.0)))
    widths = m.nodes[:, 0].max() / 12, m.nodes[:, 1].max() / 12
    assert widths[1] / widths[0] == pytest.approx(20.0)


def test_zero_amplitude_is_bitwise_cartesian():
    a = build_structured_mesh(9, 9, distortion=GridDistortion(amplitude=0.0, seed=9))
    b = build_structured_mesh(9, 9)
    assert a.nodes.tobytes() == b.nodes.tobytes()


def test_distortion_reproducible_and_seed_sensitive():
    a = build_structured_mesh(8, 8, distortion=GridDistortion(amplitude=0.2, seed=3))
    b = build_structured_mesh(8, 8, distortion=GridDistortion(amplitude=0.2, seed=3))
    c = build_structured_mesh(8, 8, distortion=GridDistortion(amplitude=0.2, seed=4))
    assert a.nodes.tobytes() == b.nodes.tobytes()
    assert a.nodes.tobytes() != c.nodes.tobytes()


def test_boundary_nodes_stay_on_boundary():
    m = build_structured_mesh(6, 6, distortion=GridDistortion(amplitude=0.3, seed=2))
    for axis, side, value in ((0, "min", 0.0), (0, "max", 1.0),
                              (1, "min", 0.0), (1, "max", 1.0)):
        nodes = m.boundary_nodes(axis, side)
        assert np.allclose(m.nodes[nodes, axis], value)


def test_inverted_cell_rejected():
    with pytest.raises(ValueError, match="inverted"):
        build_structured_mesh(10, 10, distortion=GridDistortion(amplitude=4.0, seed=1))


def test_negative_amplitude_rejected():
    with pytest.raises(ValueError):
        GridDistortion(amplitude=-0.1)


def test_face_normals_unit_and_outward():
    m = build_structured_mesh(5, 4, 3, extents=(1.0, 1.0, 1.0),
                              distortion=GridDistortion(amplitude=0.2, seed=5))
    norms = np.linalg.norm(m.face_normals, axis=1)
    assert np.abs(norms - 1.0).max() <= 1e-12
    # interior normals point from cell 0 to cell 1, boundary normals outward
    interior = m.interior_faces
    d = m.cell_centroids[m.face_cells[interior, 1]] \
        - m.cell_centroids[m.face_cells[interior, 0]]
    assert np.all(np.einsum("fi,fi->f", m.face_normals[interior], d) > 0)
    bnd = m.boundary_face_ids
    d = m.face_centroids[bnd] - m.cell_centroids[m.face_cells[bnd, 0]]
    assert np.all(np.einsum("fi,fi->f", m.face_normals[bnd], d) > 0)


def test_every_interior_face_has_two_cells():
    m = build_structured_mesh(4, 3, 2)
    fc = m.face_cells
    interior = m.interior_faces
    assert np.all(fc[interior] >= 0)
    assert interior.size == 3 * 3 * 2 + 4 * 2 * 2 + 4 * 3 * 1


def test_cell_node_index_roundtrip():
    m = build_structured_mesh(4, 5, 6)
    ids = np.arange(m.n_cells)
    assert np.array_equal(m.cell_index(m.cell_ijk(ids)), ids)


def test_structured_face_index_consistent():
    m = build_structured_mesh(5, 4, 3)
    for axis in range(3):
        faces = np.flatnonzero(m.face_axis == axis)
        f = faces[7]
        upper = m.face_cells[f].max()
        ijk = m.cell_ijk(np.array([upper]))[0]
        perp = [ijk[a] for a in range(3) if a != axis]
        got = m.structured_face_index(axis, m.face_slice[f], np.array([perp]))
        assert got[0] == f


def test_topography_moves_top_only():
    flat = build_structured_mesh(6, 6, 4, extents=(10.0, 10.0, 2.0))
    topo = build_structured_mesh(
        6, 6, 4, extents=(10.0, 10.0, 2.0),
        distortion=GridDistortion(seed=3, topography_amplitude=0.1))
    bottom = topo.boundary_nodes(2, "min")
    top = topo.boundary_nodes(2, "max")
    assert np.allclose(topo.nodes[bottom, 2], 0.0)
    assert np.std(topo.nodes[top, 2]) > 0
    assert np.allclose(topo.nodes[:, :2], flat.nodes[:, :2])


def test_shape_functions_partition_of_unity():
    for dim in (2, 3):
        pts, _ = gauss_points(dim)
        vals = shape_values(dim, pts)
        grads = shape_gradients(dim, pts)
        assert np.allclose(vals.sum(axis=1), 1.0)
        assert np.allclose(grads.sum(axis=1), 0.0)


def test_vtk_export(tmp_path):
    m = build_structured_mesh(3, 2)
    path = tmp_path / "m.vtk"
    write_vtk(m, path, cell_data={"vol": m.cell_volumes},
              point_data={"x": m.nodes[:, 0]})
    text = path.read_text().splitlines()
    assert text[0].startswith("# vtk DataFile")
    assert any(line.startswith("CELLS 6 ") for line in text)
    assert "CELL_DATA 6" in text
    assert "POINT_DATA 12" in text
