import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rbfield.mesh import build_field_mesh, build_tri_mesh


def test_single_cell_mesh():
    m = build_field_mesh(1)
    assert m.n_cells == 1
    assert m.h == 1.0
    np.testing.assert_allclose(m.centers, [[0.5, 0.5]])
    np.testing.assert_allclose(m.mass_diag, [1.0])


def test_two_by_two_centers():
    m = build_field_mesh(2)
    assert m.h == 0.5
    expected = {(0.25, 0.25), (0.75, 0.25), (0.25, 0.75), (0.75, 0.75)}
    assert {tuple(np.round(c, 12)) for c in m.centers} == expected


def test_large_mesh_counts():
    m = build_field_mesh(256)
    assert m.n_cells == 65536
    assert m.h == 1.0 / 256


def test_rejects_zero_cells():
    with pytest.raises(ValueError):
        build_field_mesh(0)
    with pytest.raises(ValueError):
        build_tri_mesh(0)


@given(st.integers(min_value=1, max_value=40))
@settings(max_examples=25, deadline=None)
def test_field_mesh_invariants(n):
    m = build_field_mesh(n)
    assert m.n_cells == n * n
    assert np.all(m.centers > 0.0) and np.all(m.centers < 1.0)
    # center formula
    i, j = 3 % n, (2 * n // 3) % n
    idx = j * n + i
    np.testing.assert_allclose(m.centers[idx], [(i + 0.5) * m.h, (j + 0.5) * m.h])
    # unit total mass
    assert abs(m.mass_diag.sum() - 1.0) < 1e-12


def test_cell_index_roundtrip(mesh8):
    idx = mesh8.cell_index(mesh8.centers)
    np.testing.assert_array_equal(idx, np.arange(mesh8.n_cells))


def test_distance_matrix_symmetry(mesh8):
    D = mesh8.pairwise_distances()
    assert np.array_equal(D, D.T)
    assert np.all(np.diag(D) == 0.0)
    # triangle inequality on random triples
    rng = np.random.default_rng(0)
    for _ in range(100):
        i, j, k = rng.integers(0, mesh8.n_cells, 3)
        assert D[i, j] <= D[i, k] + D[k, j] + 1e-12


def test_tri_mesh_minimal():
    t = build_tri_mesh(1)
    assert t.n_vertices == 4
    assert t.n_triangles == 2


def test_tri_mesh_counts():
    t = build_tri_mesh(2)
    assert t.n_vertices == 9
    assert t.n_triangles == 8
    assert int(t.boundary.sum()) == 8
    t = build_tri_mesh(128)
    assert t.n_triangles == 2 * 128**2


@given(st.integers(min_value=1, max_value=24))
@settings(max_examples=20, deadline=None)
def test_tri_mesh_area_and_orientation(n):
    t = build_tri_mesh(n)
    areas = t.areas()
    assert np.all(areas > 0.0)
    assert abs(areas.sum() - 1.0) < 1e-12


def test_boundary_tags():
    t = build_tri_mesh(4)
    x, y = t.vertices[:, 0], t.vertices[:, 1]
    assert np.array_equal(t.west, x == 0.0)
    assert np.array_equal(t.east, x == 1.0)
    assert np.array_equal(t.south, y == 0.0)
    assert np.array_equal(t.north, y == 1.0)
