"""
Metric spaces, meshes over them and quasi-random node placement.

Meshes are stored with directed edges (both directions of every adjacency) since
message passing runs over directed edges.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components, shortest_path
from scipy.stats import qmc

import lib.constants as constants
from lib import autodiff as ad


class DegenerateMeshError(ValueError):
    pass


class SpaceKind(str, Enum):
    SQUARE = 'square'
    SPHERE = 'sphere'


class MetricSpace:
    kind = None
    dim = None

    def distance(self, p, q):
        raise NotImplementedError

    def distance_matrix(self, xs, nodes):
        """Differentiable (|xs| x n) distance matrix; `nodes` may be a Tensor."""
        raise NotImplementedError

    def contains(self, points, tol=1e-9):
        raise NotImplementedError

    def clamp(self, points):
        raise NotImplementedError

    def sample_uniform(self, n, rng):
        raise NotImplementedError


class UnitSquare(MetricSpace):
    kind = SpaceKind.SQUARE
    dim = 2

    def distance(self, p, q):
        return float(np.linalg.norm(np.asarray(p, dtype=np.float64) - np.asarray(q, dtype=np.float64)))

    def distance_matrix(self, xs, nodes):
        xs = ad.as_tensor(xs)
        nodes = ad.as_tensor(nodes)
        diff = xs.reshape(xs.shape[0], 1, self.dim) - nodes.reshape(1, nodes.shape[0], self.dim)
        return ad.sqrt(ad.tsum(diff * diff, axis=2))

    def contains(self, points, tol=1e-9):
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        return np.all((points >= -tol) & (points <= 1.0 + tol), axis=1)

    def clamp(self, points):
        return np.clip(np.asarray(points, dtype=np.float64), 0.0, 1.0)

    def sample_uniform(self, n, rng):
        return rng.uniform(0.0, 1.0, size=(n, 2))


class UnitSphere(MetricSpace):
    kind = SpaceKind.SPHERE
    dim = 3

    def distance(self, p, q):
        return float(np.arccos(np.clip(np.dot(p, q), -1.0, 1.0)))

    def distance_matrix(self, xs, nodes):
        xs = ad.as_tensor(xs)
        nodes = ad.as_tensor(nodes)
        return ad.arccos(xs @ nodes.T)

    def contains(self, points, tol=1e-9):
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        return np.abs(np.linalg.norm(points, axis=1) - 1.0) < tol

    def clamp(self, points):
        points = np.asarray(points, dtype=np.float64)
        norms = np.linalg.norm(points, axis=-1, keepdims=True)
        if np.any(norms == 0):
            raise ValueError('cannot project the zero vector onto the sphere')
        return points / norms

    def sample_uniform(self, n, rng):
        return self.clamp(rng.standard_normal((n, 3)))


_SPACES = {SpaceKind.SQUARE: UnitSquare(), SpaceKind.SPHERE: UnitSphere()}


def get_space(kind):
    try:
        return _SPACES[SpaceKind(kind)]
    except ValueError:
        raise ValueError(f"unknown space '{kind}' (expected one of {[k.value for k in SpaceKind]})")


def clamp_to_space(points, space):
    return get_space(space.kind if isinstance(space, MetricSpace) else space).clamp(points)


def _directed(undirected):
    pairs = set()
    for i, j in undirected:
        i, j = int(i), int(j)
        if i == j:
            continue
        pairs.add((i, j))
        pairs.add((j, i))
    if not pairs:
        return np.zeros((0, 2), dtype=np.int64)
    return np.array(sorted(pairs), dtype=np.int64)


@dataclass
class SpatialMesh:
    space_kind: str
    positions: np.ndarray
    directed_edges: np.ndarray
    topology_kind: str
    grid_order: int = None
    triangles: np.ndarray = None

    @property
    def space(self):
        return get_space(self.space_kind)

    @property
    def n_nodes(self):
        return len(self.positions)

    @property
    def n_edges(self):
        return len(self.directed_edges)

    def undirected_edges(self):
        return sorted({(min(i, j), max(i, j)) for i, j in self.directed_edges.tolist()})

    def adjacency(self):
        n = self.n_nodes
        if self.n_edges == 0:
            return csr_matrix((n, n))
        ones = np.ones(self.n_edges)
        return csr_matrix((ones, (self.directed_edges[:, 0], self.directed_edges[:, 1])), shape=(n, n))

    def is_connected(self):
        count, _ = connected_components(self.adjacency(), directed=True, connection='strong')
        return count == 1

    def diameter(self):
        hops = shortest_path(self.adjacency(), unweighted=True, directed=True)
        if np.isinf(hops).any():
            return math.inf
        return int(hops.max())

    def to_json(self):
        return {
            'space': SpaceKind(self.space_kind).value,
            'topology': self.topology_kind,
            'positions': self.positions.tolist(),
            'undirected_edges': [list(e) for e in self.undirected_edges()],
        }

    @classmethod
    def from_json(cls, payload):
        positions = np.array(payload['positions'], dtype=np.float64)
        grid_order = None
        if payload.get('topology') == 'grid':
            grid_order = int(round(math.sqrt(len(positions))))
        return cls(space_kind=payload['space'], positions=positions,
                   directed_edges=_directed(payload['undirected_edges']),
                   topology_kind=payload.get('topology', 'delaunay'), grid_order=grid_order)


# --- Delaunay (Bowyer-Watson) ---
def _circumcircle(a, b, c):
    d = 2.0 * (a[0] * (b[1] - c[1]) + b[0] * (c[1] - a[1]) + c[0] * (a[1] - b[1]))
    if d == 0.0:
        return np.array([np.inf, np.inf]), np.inf
    a2, b2, c2 = a @ a, b @ b, c @ c
    ux = (a2 * (b[1] - c[1]) + b2 * (c[1] - a[1]) + c2 * (a[1] - b[1])) / d
    uy = (a2 * (c[0] - b[0]) + b2 * (a[0] - c[0]) + c2 * (b[0] - a[0])) / d
    center = np.array([ux, uy])
    return center, float(np.sum((a - center) ** 2))


def _orient(a, b, c):
    return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])


def delaunay_triangles(points):
    """Bowyer-Watson triangulation; returns (t, 3) CCW vertex indices.

    Cocircular ties resolve by insertion order: a point on (not strictly inside) an
    existing circumcircle leaves that triangle untouched.
    """
    points = np.asarray(points, dtype=np.float64)
    n = len(points)
    if n < 3:
        raise DegenerateMeshError(f"Delaunay needs at least 3 points, got {n}")
    if len(np.unique(points, axis=0)) < n:
        raise DegenerateMeshError('duplicate points')
    centered = points - points.mean(axis=0)
    singular = np.linalg.svd(centered, compute_uv=False)
    if singular[-1] <= 1e-12 * max(singular[0], 1e-300):
        raise DegenerateMeshError('all points are collinear')

    lo, hi = points.min(axis=0), points.max(axis=0)
    mid = (lo + hi) / 2.0
    span = max(float((hi - lo).max()), 1e-12) * constants.DELAUNAY_SUPER_SCALE
    super_pts = np.array([[mid[0] - 2 * span, mid[1] - span],
                          [mid[0] + 2 * span, mid[1] - span],
                          [mid[0], mid[1] + 2 * span]])
    verts = np.vstack([points, super_pts])

    tris = [(n, n + 1, n + 2)]
    c0, r0 = _circumcircle(*super_pts)
    centers = [c0]
    radii2 = [r0]

    for p_idx in range(n):
        p = verts[p_idx]
        c_arr = np.array(centers)
        r_arr = np.array(radii2)
        d2 = np.sum((c_arr - p) ** 2, axis=1)
        bad = np.flatnonzero(d2 < r_arr * (1.0 - 1e-12))

        edge_count = {}
        for t in bad:
            a, b, c = tris[t]
            for e in ((a, b), (b, c), (c, a)):
                key = (min(e), max(e))
                edge_count[key] = edge_count.get(key, 0) + 1
        boundary = []
        for t in bad:
            a, b, c = tris[t]
            for e in ((a, b), (b, c), (c, a)):
                if edge_count[(min(e), max(e))] == 1:
                    boundary.append(e)

        keep = np.ones(len(tris), dtype=bool)
        keep[bad] = False
        tris = [t for t, k in zip(tris, keep) if k]
        centers = [c for c, k in zip(centers, keep) if k]
        radii2 = [r for r, k in zip(radii2, keep) if k]

        for a, b in boundary:
            if _orient(verts[a], verts[b], p) <= 0:
                continue
            tris.append((a, b, p_idx))
            center, r2 = _circumcircle(verts[a], verts[b], p)
            centers.append(center)
            radii2.append(r2)

    final = [t for t in tris if max(t) < n]
    if not final:
        raise DegenerateMeshError('triangulation produced no triangles')
    return np.array(final, dtype=np.int64)


def delaunay(points, space_kind=SpaceKind.SQUARE):
    points = np.asarray(points, dtype=np.float64)
    tris = delaunay_triangles(points)
    edges = []
    for a, b, c in tris.tolist():
        edges += [(a, b), (b, c), (c, a)]
    return SpatialMesh(space_kind=SpaceKind(space_kind).value, positions=points.copy(),
                       directed_edges=_directed(edges), topology_kind='delaunay', triangles=tris)


def is_delaunay(points, triangles, tol=1e-9):
    """Brute-force empty-circumcircle check of every triangle against every point."""
    points = np.asarray(points, dtype=np.float64)
    for tri in np.asarray(triangles):
        center, r2 = _circumcircle(*points[tri])
        d2 = np.sum((points - center) ** 2, axis=1)
        others = np.ones(len(points), dtype=bool)
        others[tri] = False
        if np.any(d2[others] < r2 * (1.0 - tol)):
            return False
    return True


def delaunay_with_jitter(points, rng, space_kind=SpaceKind.SQUARE):
    """Delaunay of `points`, nudging them inward by up to 1e-9 on degeneracy.

    Returns (mesh, points_used).
    """
    points = np.asarray(points, dtype=np.float64)
    for _ in range(constants.DELAUNAY_MAX_RETRIES):
        try:
            return delaunay(points, space_kind), points
        except DegenerateMeshError:
            toward_center = np.sign(0.5 - points)
            toward_center[toward_center == 0] = 1.0
            points = points + constants.DELAUNAY_JITTER * rng.uniform(0.0, 1.0, size=points.shape) * toward_center
    return delaunay(points, space_kind), points


# --- Structured meshes ---
def square_grid_mesh(k):
    """k x k uniform grid on the unit square, node index j*k + i at (i/(k-1), j/(k-1))."""
    if k < 2:
        raise ValueError(f"grid order must be >= 2, got {k}")
    ticks = np.arange(k) / (k - 1)
    xs, ys = np.meshgrid(ticks, ticks)
    positions = np.stack([xs.ravel(), ys.ravel()], axis=1)
    # Every grid cell is cocircular; a tiny shear makes all cells pick the same
    # diagonal so the triangulation keeps diameter 2(k-1).
    sheared = positions + np.stack([1e-6 * positions[:, 1], np.zeros(len(positions))], axis=1)
    tris = delaunay_triangles(sheared)
    edges = []
    for a, b, c in tris.tolist():
        edges += [(a, b), (b, c), (c, a)]
    return SpatialMesh(space_kind=SpaceKind.SQUARE.value, positions=positions,
                       directed_edges=_directed(edges), topology_kind='grid', grid_order=k, triangles=tris)


def sphere_mesh(k):
    """Latitude/longitude grid with step pi/(k-1), duplicates removed, threshold edges."""
    if k < 2:
        raise ValueError(f"sphere mesh order must be >= 2, got {k}")
    step = math.pi / (k - 1)
    points = []
    for i in range(k):
        theta = i * step
        for j in range(2 * (k - 1)):
            phi = j * step
            points.append((math.sin(theta) * math.cos(phi), math.sin(theta) * math.sin(phi), math.cos(theta)))
    if k == 2:
        # The theta grid alone is just the two poles; add the 2k-1 node equator ring.
        for j in range(2 * k - 1):
            phi = 2.0 * math.pi * j / (2 * k - 1)
            points.append((math.cos(phi), math.sin(phi), 0.0))

    points = np.array(points)
    points[np.abs(points) < 1e-15] = 0.0
    _, first = np.unique(np.round(points, 12), axis=0, return_index=True)
    positions = UnitSphere().clamp(points[np.sort(first)])

    threshold = step * (1.0 + constants.SPHERE_EDGE_SLACK)
    dist = np.arccos(np.clip(positions @ positions.T, -1.0, 1.0))
    ii, jj = np.nonzero((dist <= threshold) & ~np.eye(len(positions), dtype=bool))
    return SpatialMesh(space_kind=SpaceKind.SPHERE.value, positions=positions,
                       directed_edges=_directed(zip(ii.tolist(), jj.tolist())),
                       topology_kind='sphere_threshold')


def single_node_mesh(space_kind=SpaceKind.SQUARE):
    center = np.array([[0.5, 0.5]]) if SpaceKind(space_kind) == SpaceKind.SQUARE else np.array([[0.0, 0.0, 1.0]])
    return SpatialMesh(space_kind=SpaceKind(space_kind).value, positions=center,
                       directed_edges=np.zeros((0, 2), dtype=np.int64), topology_kind='single_node')


def mesh_for(space_kind, k):
    return square_grid_mesh(k) if SpaceKind(space_kind) == SpaceKind.SQUARE else sphere_mesh(k)


def halton_points(n, dims=2, seed=None):
    """First n Halton points (bases 2, 3, ...), skipping the origin; scrambled if seeded."""
    if n < 1:
        raise ValueError('n must be >= 1')
    sampler = qmc.Halton(d=dims, scramble=seed is not None, seed=seed)
    sampler.fast_forward(1)
    return sampler.random(n)
