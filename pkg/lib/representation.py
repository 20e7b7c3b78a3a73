"""
Representation functions r: X -> R^n, weights over mesh nodes used both to scatter
inputs onto node states and to interpolate node states back at query locations.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

import lib.constants as constants
from lib import autodiff as ad
from lib.geometry import SpatialMesh


class OutOfSpaceError(ValueError):
    pass


class RepresentationKind(str, Enum):
    SOFT_NEAREST = 'soft_nearest'
    BILINEAR_GRID = 'bilinear_grid'


@dataclass(frozen=True)
class RepresentationFn:
    kind: RepresentationKind
    mesh: SpatialMesh
    temperature: float = constants.SOFTMAX_TEMPERATURE

    def __post_init__(self):
        object.__setattr__(self, 'kind', RepresentationKind(self.kind))
        if self.temperature <= 0:
            raise ValueError('temperature must be positive')
        if self.kind == RepresentationKind.BILINEAR_GRID and self.mesh.grid_order is None:
            raise ValueError('bilinear_grid needs a regular grid mesh')


def soft_nearest_weights(x, mesh, temperature=constants.SOFTMAX_TEMPERATURE, positions=None):
    """softmax(-dist(x, x_i) / temperature) over all nodes; returns an (n,) Tensor."""
    if isinstance(x, ad.Tensor):
        x = x.reshape(1, -1)
    else:
        x = np.asarray(x, dtype=np.float64).reshape(1, -1)
    return _soft_nearest_matrix(x, mesh, temperature, positions)[0]


def _soft_nearest_matrix(xs, mesh, temperature, positions):
    if mesh.n_nodes == 0:
        raise ValueError('mesh has no nodes')
    nodes = positions if positions is not None else mesh.positions
    dist = mesh.space.distance_matrix(xs, nodes)
    return ad.softmax(dist * (-1.0 / temperature), axis=1)


def _bilinear_matrix(xs, k):
    xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))
    if np.any(xs < -1e-12) or np.any(xs > 1.0 + 1e-12):
        raise OutOfSpaceError('bilinear weights need points inside [0, 1]^2')
    scaled = np.clip(xs, 0.0, 1.0) * (k - 1)
    cell = np.minimum(np.floor(scaled).astype(np.int64), k - 2)
    u = scaled[:, 0] - cell[:, 0]
    v = scaled[:, 1] - cell[:, 1]
    base = cell[:, 1] * k + cell[:, 0]
    rows = np.arange(len(xs))
    weights = np.zeros((len(xs), k * k))
    # Opposite-corner products: each corner gets the area of the sub-rectangle
    # across from it.
    np.add.at(weights, (rows, base), (1.0 - u) * (1.0 - v))
    np.add.at(weights, (rows, base + 1), u * (1.0 - v))
    np.add.at(weights, (rows, base + k), (1.0 - u) * v)
    np.add.at(weights, (rows, base + k + 1), u * v)
    return weights


def bilinear_weights(x, mesh):
    """Bilinear interpolation weights of a 2-D point on a k x k grid mesh."""
    if mesh.grid_order is None:
        raise ValueError('bilinear weights need a regular grid mesh')
    return _bilinear_matrix(np.asarray(x, dtype=np.float64).reshape(1, 2), mesh.grid_order)[0]


def weight_matrix(xs, rep, positions=None):
    """Stacks r(x) for every x in xs into a (|xs| x n) Tensor.

    `positions` overrides the mesh's node positions for soft_nearest so the weights
    stay differentiable with respect to them.
    """
    xs = np.asarray(xs, dtype=np.float64)
    if xs.ndim == 1:
        xs = xs.reshape(1, -1)
    if xs.shape[0] == 0:
        return ad.Tensor(np.zeros((0, rep.mesh.n_nodes)))
    if not np.all(rep.mesh.space.contains(xs)):
        raise OutOfSpaceError(f"locations outside the {rep.mesh.space_kind} space")
    if rep.kind == RepresentationKind.SOFT_NEAREST:
        return _soft_nearest_matrix(xs, rep.mesh, rep.temperature, positions)
    return ad.Tensor(_bilinear_matrix(xs, rep.mesh.grid_order))
