import json

import numpy as np
import pytest
from scipy.spatial import ConvexHull

from lib import geometry
from lib.geometry import DegenerateMeshError, SpatialMesh


@pytest.mark.parametrize('k', [2, 3, 4, 5, 6, 7])
def test_square_grid_counts_and_diameter(k):
    mesh = geometry.square_grid_mesh(k)
    assert mesh.n_nodes == k * k
    assert len(mesh.undirected_edges()) == 2 * k * (k - 1) + (k - 1) ** 2
    assert mesh.n_edges == 2 * len(mesh.undirected_edges())
    assert mesh.is_connected()
    assert mesh.diameter() == 2 * (k - 1)


def test_square_grid_node_order():
    mesh = geometry.square_grid_mesh(3)
    np.testing.assert_allclose(mesh.positions[1], [0.5, 0.0])
    np.testing.assert_allclose(mesh.positions[3], [0.0, 0.5])
    np.testing.assert_allclose(mesh.positions[8], [1.0, 1.0])


def test_grid_order_below_two_raises():
    with pytest.raises(ValueError):
        geometry.square_grid_mesh(1)
    with pytest.raises(ValueError):
        geometry.sphere_mesh(1)


def test_sphere_mesh_small_orders():
    two = geometry.sphere_mesh(2)
    assert two.n_nodes == 5
    assert len(two.undirected_edges()) == 10

    three = geometry.sphere_mesh(3)
    assert three.n_nodes == 6
    assert len(three.undirected_edges()) == 12
    np.testing.assert_allclose(np.linalg.norm(three.positions, axis=1), 1.0)


@pytest.mark.parametrize('k', range(2, 11))
def test_sphere_mesh_is_connected_on_the_sphere(k):
    mesh = geometry.sphere_mesh(k)
    assert mesh.is_connected()
    assert geometry.get_space('sphere').contains(mesh.positions).all()


def test_delaunay_euler_counts_on_random_sets():
    rng = np.random.Generator(np.random.Philox(7))
    for _ in range(100):
        n = int(rng.integers(4, 25))
        points = rng.uniform(0.0, 1.0, size=(n, 2))
        mesh = geometry.delaunay(points)
        hull = len(ConvexHull(points).vertices)
        assert len(mesh.undirected_edges()) == 3 * n - 3 - hull
        assert len(mesh.triangles) == 2 * n - 2 - hull
        assert geometry.is_delaunay(points, mesh.triangles)
        assert mesh.is_connected()


def test_delaunay_degenerate_inputs():
    with pytest.raises(DegenerateMeshError):
        geometry.delaunay(np.array([[0.1, 0.1], [0.9, 0.9]]))
    with pytest.raises(DegenerateMeshError):
        geometry.delaunay(np.array([[0.1, 0.1], [0.1, 0.1], [0.5, 0.9]]))
    with pytest.raises(DegenerateMeshError):
        geometry.delaunay(np.array([[0.0, 0.0], [0.5, 0.5], [1.0, 1.0]]))


def test_jitter_separates_duplicate_points_inside_the_square():
    rng = np.random.Generator(np.random.Philox(0))
    points = np.array([[0.0, 0.0], [0.0, 0.0], [0.8, 0.3], [0.5, 1.0]])
    mesh, used = geometry.delaunay_with_jitter(points, rng)
    assert mesh.n_nodes == 4
    assert np.abs(used - points).max() <= 1e-9 * geometry.constants.DELAUNAY_MAX_RETRIES
    assert geometry.get_space('square').contains(used, tol=0.0).all()


def test_halton_points_unscrambled():
    pts = geometry.halton_points(4)
    np.testing.assert_allclose(pts[:, 0], [0.5, 0.25, 0.75, 0.125])
    np.testing.assert_allclose(pts[:, 1], [1 / 3, 2 / 3, 1 / 9, 4 / 9])


def test_halton_points_seeded_are_reproducible():
    a = geometry.halton_points(9, seed=3)
    b = geometry.halton_points(9, seed=3)
    np.testing.assert_array_equal(a, b)
    assert ((a >= 0) & (a <= 1)).all()


def test_distances():
    square = geometry.get_space('square')
    sphere = geometry.get_space('sphere')
    assert square.distance([0, 0], [0.3, 0.4]) == pytest.approx(0.5)
    assert sphere.distance([1, 0, 0], [0, 1, 0]) == pytest.approx(np.pi / 2)
    d = sphere.distance_matrix(np.array([[0.0, 0.0, 1.0]]), np.array([[0.0, 0.0, 1.0], [0.0, 0.0, -1.0]]))
    np.testing.assert_allclose(d.data, [[0.0, np.pi]], atol=1e-7)


def test_clamp_and_unknown_space():
    np.testing.assert_array_equal(geometry.clamp_to_space([[-0.2, 1.3]], 'square'), [[0.0, 1.0]])
    np.testing.assert_allclose(geometry.clamp_to_space([[0.0, 3.0, 4.0]], 'sphere'), [[0.0, 0.6, 0.8]])
    with pytest.raises(ValueError):
        geometry.get_space('torus')


def test_mesh_json_round_trip():
    mesh = geometry.square_grid_mesh(3)
    payload = json.loads(json.dumps(mesh.to_json()))
    restored = SpatialMesh.from_json(payload)
    np.testing.assert_array_equal(restored.positions, mesh.positions)
    np.testing.assert_array_equal(restored.directed_edges, mesh.directed_edges)
    assert restored.grid_order == 3
    assert restored.diameter() == 4


def test_single_node_mesh():
    mesh = geometry.single_node_mesh()
    assert mesh.n_nodes == 1 and mesh.n_edges == 0
    assert mesh.is_connected()


def test_unit_square_corners_triangulate_into_two_triangles():
    corners = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    mesh = geometry.delaunay(corners)
    assert len(mesh.triangles) == 2
    assert len(mesh.undirected_edges()) == 5
    assert geometry.is_delaunay(corners, mesh.triangles)


def test_single_triangle():
    mesh = geometry.delaunay(np.array([[0.0, 0.0], [1.0, 0.0], [0.5, 1.0]]))
    assert len(mesh.triangles) == 1
    assert sorted(map(tuple, mesh.undirected_edges())) == [(0, 1), (0, 2), (1, 2)]


def _star_discrepancy(points, resolution=32):
    anchors = np.linspace(1.0 / resolution, 1.0, resolution)
    worst = 0.0
    for a in anchors:
        for b in anchors:
            inside = np.mean((points[:, 0] < a) & (points[:, 1] < b))
            worst = max(worst, abs(inside - a * b))
    return worst


def test_halton_points_are_more_even_than_uniform_samples():
    halton = [_star_discrepancy(geometry.halton_points(64, seed=s)) for s in range(20)]
    rng = np.random.Generator(np.random.Philox(11))
    uniform = [_star_discrepancy(rng.uniform(0.0, 1.0, size=(64, 2))) for _ in range(20)]
    assert np.median(halton) < np.median(uniform)
