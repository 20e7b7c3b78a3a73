import numpy as np
import pytest

from lib import autodiff as ad
from lib import geometry
from lib.representation import (OutOfSpaceError, RepresentationFn, bilinear_weights, soft_nearest_weights,
                                weight_matrix)


def _points(n, seed=0):
    return np.random.Generator(np.random.Philox(seed)).uniform(0.0, 1.0, size=(n, 2))


@pytest.mark.parametrize('kind', ['soft_nearest', 'bilinear_grid'])
def test_weights_form_a_partition_of_unity(kind):
    rep = RepresentationFn(kind, geometry.square_grid_mesh(4))
    w = weight_matrix(_points(50), rep).data
    assert w.shape == (50, 16)
    assert (w >= 0).all()
    np.testing.assert_allclose(w.sum(axis=1), 1.0, atol=1e-12)


def test_sphere_soft_nearest_partition_of_unity():
    mesh = geometry.sphere_mesh(3)
    rng = np.random.Generator(np.random.Philox(1))
    xs = geometry.get_space('sphere').sample_uniform(20, rng)
    w = weight_matrix(xs, RepresentationFn('soft_nearest', mesh)).data
    np.testing.assert_allclose(w.sum(axis=1), 1.0, atol=1e-12)


def test_bilinear_is_one_hot_at_nodes():
    mesh = geometry.square_grid_mesh(3)
    for i, node in enumerate(mesh.positions):
        w = bilinear_weights(node, mesh)
        expected = np.zeros(9)
        expected[i] = 1.0
        np.testing.assert_allclose(w, expected, atol=1e-12)


def test_bilinear_splits_evenly_at_cell_center():
    mesh = geometry.square_grid_mesh(3)
    w = bilinear_weights([0.25, 0.25], mesh)
    np.testing.assert_allclose(w[[0, 1, 3, 4]], 0.25)
    assert w.sum() == pytest.approx(1.0)


def test_bilinear_weights_follow_the_nearer_corner():
    mesh = geometry.square_grid_mesh(2)
    w = bilinear_weights([0.1, 0.0], mesh)
    np.testing.assert_allclose(w, [0.9, 0.1, 0.0, 0.0])


def test_soft_nearest_prefers_the_closest_node():
    mesh = geometry.square_grid_mesh(3)
    w = soft_nearest_weights([0.05, 0.95], mesh, temperature=0.05).data
    assert int(np.argmax(w)) == 6


def test_out_of_space_locations_raise():
    rep = RepresentationFn('soft_nearest', geometry.square_grid_mesh(3))
    with pytest.raises(OutOfSpaceError):
        weight_matrix(np.array([[0.5, 1.5]]), rep)
    with pytest.raises(OutOfSpaceError):
        bilinear_weights([-0.5, 0.5], geometry.square_grid_mesh(3))


def test_bilinear_needs_a_grid():
    mesh = geometry.delaunay(_points(6))
    with pytest.raises(ValueError):
        RepresentationFn('bilinear_grid', mesh)
    with pytest.raises(ValueError):
        RepresentationFn('soft_nearest', mesh, temperature=0.0)


def test_empty_locations_give_empty_matrix():
    rep = RepresentationFn('soft_nearest', geometry.square_grid_mesh(2))
    assert weight_matrix(np.zeros((0, 2)), rep).shape == (0, 4)


def test_soft_nearest_position_gradient_matches_finite_differences():
    mesh = geometry.square_grid_mesh(3)
    rep = RepresentationFn('soft_nearest', mesh, temperature=0.3)
    positions = ad.Tensor(mesh.positions + 0.01 * _points(9, seed=2), requires_grad=True)
    xs = _points(12, seed=3)
    targets = ad.Tensor(_points(12, seed=4)[:, :1] @ np.ones((1, 9)))

    def loss():
        return ad.square(weight_matrix(xs, rep, positions=positions) - targets).sum()

    analytic = ad.gradients(loss(), [positions])[0]
    numeric = ad.finite_diff_grad(loss, [positions])[0]
    assert ad.relative_error(analytic, numeric) < 1e-6


def test_soft_nearest_example_weights():
    mesh = geometry.delaunay(np.array([[0.0, 0.0], [0.5, 0.0], [0.0, 1.0]]))
    w = soft_nearest_weights([0.0, 0.0], mesh, temperature=0.5).data
    np.testing.assert_allclose(w, [0.6652, 0.2447, 0.0900], atol=1e-4)


def test_bilinear_unit_cell_example():
    w = bilinear_weights([0.25, 0.75], geometry.square_grid_mesh(2))
    np.testing.assert_allclose(w, [0.1875, 0.0625, 0.5625, 0.1875], atol=1e-15)


def test_bilinear_reproduces_affine_functions():
    mesh = geometry.square_grid_mesh(4)
    rep = RepresentationFn('bilinear_grid', mesh)

    def f(p):
        return 0.7 - 1.3 * p[:, 0] + 2.1 * p[:, 1]

    xs = _points(50, seed=4)
    np.testing.assert_allclose(weight_matrix(xs, rep).data @ f(mesh.positions), f(xs), atol=1e-12)


def test_soft_nearest_gradient_with_respect_to_the_location():
    mesh = geometry.square_grid_mesh(3)
    x = ad.Tensor([0.3, 0.4], requires_grad=True)
    c = ad.Tensor(np.random.Generator(np.random.Philox(5)).standard_normal(mesh.n_nodes))

    def loss():
        return (soft_nearest_weights(x, mesh, temperature=0.3) * c).sum()

    analytic = ad.gradients(loss(), [x])[0]
    numeric = ad.finite_diff_grad(loss, [x])[0]
    assert ad.relative_error(analytic, numeric) < 1e-5
