"""
Ground truth for the Poisson experiments.

Square: 5-point finite differences for laplace(phi) = psi with a constant Dirichlet
boundary, solved by matrix-free conjugate gradient.
Sphere: manufactured solutions f(x) = sum_i k_i (x . v_i)^3 with a numerical
Laplace-Beltrami stencil built on the tangent plane.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.interpolate import RegularGridInterpolator
from scipy.sparse.linalg import LinearOperator, cg

import lib.constants as constants


class OracleConvergenceError(RuntimeError):
    pass


class NonUnitVectorError(ValueError):
    pass


@dataclass(frozen=True)
class Rect:
    x0: float
    y0: float
    x1: float
    y1: float

    def contains(self, points):
        points = np.atleast_2d(points)
        return ((points[:, 0] >= self.x0) & (points[:, 0] <= self.x1)
                & (points[:, 1] >= self.y0) & (points[:, 1] <= self.y1))

    def sample(self, n, rng):
        return np.stack([rng.uniform(self.x0, self.x1, n), rng.uniform(self.y0, self.y1, n)], axis=1)

    def to_json(self):
        return [self.x0, self.y0, self.x1, self.y1]


@dataclass
class SquarePoissonProblem:
    """Heaters/coolers psi = C_h inside source rectangles, 0 elsewhere, and a
    constant exterior temperature on all four walls. `source_fn` replaces the
    rectangles with an arbitrary psi (manufactured solutions)."""
    exterior_temp: float = 0.0
    rects: tuple = ()
    strengths: tuple = ()
    source_fn: Callable = None

    def source(self, points):
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        if self.source_fn is not None:
            return np.asarray(self.source_fn(points), dtype=np.float64)
        psi = np.zeros(len(points))
        for rect, strength in zip(self.rects, self.strengths):
            psi += strength * rect.contains(points)
        return psi


@dataclass
class GridSolution:
    phi: np.ndarray   # (m, m), phi[j, i] at (i/(m-1), j/(m-1))
    iterations: int = 0

    @property
    def m(self):
        return self.phi.shape[0]

    def grid_points(self):
        ticks = np.linspace(0.0, 1.0, self.m)
        xs, ys = np.meshgrid(ticks, ticks)
        return np.stack([xs.ravel(), ys.ravel()], axis=1)

    def evaluate(self, points):
        """Bilinear interpolation off-grid."""
        ticks = np.linspace(0.0, 1.0, self.m)
        interp = RegularGridInterpolator((ticks, ticks), self.phi.T, method='linear')
        return interp(np.clip(np.atleast_2d(points), 0.0, 1.0))


def solve_square_poisson(problem, m=constants.ORACLE_RESOLUTION):
    """Solves laplace(phi) = psi on an m x m grid with phi = T_ext on the walls."""
    if m < 3:
        raise ValueError(f"oracle grid needs m >= 3, got {m}")
    h = 1.0 / (m - 1)
    inner = m - 2
    ticks = np.linspace(0.0, 1.0, m)
    xs, ys = np.meshgrid(ticks[1:-1], ticks[1:-1])
    psi = problem.source(np.stack([xs.ravel(), ys.ravel()], axis=1)).reshape(inner, inner)

    def apply_negative_laplacian(u_flat):
        u = np.pad(u_flat.reshape(inner, inner), 1)
        out = 4.0 * u[1:-1, 1:-1] - u[:-2, 1:-1] - u[2:, 1:-1] - u[1:-1, :-2] - u[1:-1, 2:]
        return out.ravel() / (h * h)

    # Boundary neighbours move to the right-hand side.
    boundary = np.zeros((inner, inner))
    boundary[0, :] += problem.exterior_temp
    boundary[-1, :] += problem.exterior_temp
    boundary[:, 0] += problem.exterior_temp
    boundary[:, -1] += problem.exterior_temp
    rhs = (-psi + boundary / (h * h)).ravel()

    operator = LinearOperator((inner * inner, inner * inner), matvec=apply_negative_laplacian, dtype=np.float64)
    iterations = [0]

    def count(_):
        iterations[0] += 1

    x0 = np.full(inner * inner, float(problem.exterior_temp))
    solution, info = cg(operator, rhs, x0=x0, rtol=constants.CG_RTOL, atol=0.0,
                        maxiter=constants.CG_MAX_ITER_FACTOR * m * m, callback=count)
    if info != 0:
        raise OracleConvergenceError(f"CG did not converge on the {m}x{m} grid (info={info})")

    phi = np.full((m, m), float(problem.exterior_temp))
    phi[1:-1, 1:-1] = solution.reshape(inner, inner)
    return GridSolution(phi=phi, iterations=iterations[0])


def integrate_source(problem, m=constants.ORACLE_RESOLUTION):
    """Midpoint Riemann sum of psi over the unit square on an m x m cell grid."""
    centers = (np.arange(m) + 0.5) / m
    xs, ys = np.meshgrid(centers, centers)
    return float(problem.source(np.stack([xs.ravel(), ys.ravel()], axis=1)).sum() / (m * m))


# --- Sphere ---
@dataclass
class SphereField:
    coefficients: np.ndarray    # (8,)
    directions: np.ndarray      # (8, 3) unit vectors

    def __post_init__(self):
        self.coefficients = np.asarray(self.coefficients, dtype=np.float64)
        self.directions = np.asarray(self.directions, dtype=np.float64)
        if np.any(np.abs(np.linalg.norm(self.directions, axis=1) - 1.0) > 1e-9):
            raise NonUnitVectorError('sphere field directions must be unit vectors')

    def __call__(self, points):
        points = np.asarray(points)
        return (points @ self.directions.T) ** 3 @ self.coefficients


def _check_unit(x):
    x = np.asarray(x, dtype=np.float64)
    if np.any(np.abs(np.linalg.norm(np.atleast_2d(x), axis=1) - 1.0) > 1e-9):
        raise NonUnitVectorError('points must lie on the unit sphere')
    return x


def sphere_solution_eval(field, x):
    """sum_i k_i (x . v_i)^3 for one point (float) or a stack of points (array)."""
    x = _check_unit(x)
    values = field(np.atleast_2d(x))
    return float(values[0]) if x.ndim == 1 else values


def tangent_basis(x):
    """Orthonormal {a, b} completing {x}, by Gram-Schmidt over e1, e2, e3."""
    x = np.asarray(x, dtype=np.longdouble)
    basis = [x]
    for c in np.eye(3, dtype=np.longdouble):
        if abs(float(c @ x)) > 1.0 - 1e-6:
            continue
        w = c.copy()
        for b in basis:
            w = w - (w @ b) * b
        norm = np.sqrt(w @ w)
        if norm > 1e-6:
            basis.append(w / norm)
        if len(basis) == 3:
            break
    return basis[1], basis[2]


def sphere_numerical_laplacian(f, x, eps=constants.LAPLACIAN_EPS, basis=None):
    """(f(x+ea) + f(x-ea) + f(x+eb) + f(x-eb) - 4 f(x)) / eps^2 with each
    stepped point projected back to the sphere.

    Evaluated in extended precision so the stencil stays accurate down to eps=3e-6.
    `f` maps an (N, 3) stack of points to N values.
    """
    lo, hi = constants.LAPLACIAN_EPS_RANGE
    if not lo <= eps <= hi:
        raise ValueError(f"eps must lie in [{lo}, {hi}], got {eps}")
    x = np.asarray(_check_unit(x), dtype=np.longdouble)
    # The centre must sit on the sphere to extended precision as well.
    x = x / np.sqrt(np.sum(x * x))
    a, b = basis if basis is not None else tangent_basis(x)
    a = np.asarray(a, dtype=np.longdouble)
    b = np.asarray(b, dtype=np.longdouble)
    e = np.longdouble(eps)
    stepped = np.stack([x + e * a, x - e * a, x + e * b, x - e * b, x])
    stepped[:4] /= np.sqrt(np.sum(stepped[:4] * stepped[:4], axis=1, keepdims=True))
    values = np.asarray(f(stepped), dtype=np.longdouble)
    return float((values[0] + values[1] + values[2] + values[3] - 4 * values[4]) / (e * e))


def random_unit_vectors(n, rng):
    v = rng.standard_normal((n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def generate_sphere_scenario(directions, seed, n_inputs=constants.SPHERE_INPUTS,
                             n_queries=constants.SPHERE_QUERIES, eps=constants.LAPLACIAN_EPS):
    """One sphere scenario: (input_x, laplacian values, query_x, f values, field).

    `seed` is an int or a numpy Generator; coefficients k_i ~ N(0, 1) and sample
    locations are uniform on the sphere.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.Generator(np.random.Philox(seed))
    field = SphereField(rng.standard_normal(len(directions)), directions)
    input_x = random_unit_vectors(n_inputs, rng)
    query_x = random_unit_vectors(n_queries, rng)
    laplacians = np.array([sphere_numerical_laplacian(field, x, eps) for x in input_x])
    targets = field(query_x)
    return input_x, laplacians, query_x, targets, field
