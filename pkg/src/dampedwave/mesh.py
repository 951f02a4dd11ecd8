"""Uniform meshes, Gauss-Legendre rules and Lagrange element spaces on [0, 1].

Both spaces use equispaced Lagrange nodes on the reference cell [0, 1]. The
continuous space of degree ``k + 1`` shares its vertex dof between adjacent
cells; the discontinuous space of degree ``k`` has ``k + 1`` private dofs per
cell. With this numbering the dofs touched by cell ``c`` are the contiguous
ranges ``c*(k+1) : c*(k+1) + k + 2`` (V) and ``c*(k+1) : (c+1)*(k+1)`` (Q),
which the assembly and stepping kernels rely on.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

__all__ = [
    "Mesh1D",
    "QuadRule",
    "LagrangeBasis",
    "FESpaceV",
    "FESpaceQ",
    "FEFunction",
    "build_mesh",
    "gauss_rule",
    "evaluate",
    "evaluate_derivative",
    "interpolate",
]

MAX_GAUSS_POINTS = 10


@dataclass(frozen=True)
class Mesh1D:
    n_cells: int
    h: float
    vertices: np.ndarray = field(repr=False)

    def cell_of(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Return (cell index, reference coordinate) for physical points."""
        x = np.asarray(x, dtype=float)
        if np.any(x < 0.0) or np.any(x > 1.0) or not np.all(np.isfinite(x)):
            raise ValueError("evaluation points must lie in [0, 1]")
        cell = np.minimum(np.floor(x * self.n_cells).astype(np.int64), self.n_cells - 1)
        xi = x / self.h - cell
        return cell, np.clip(xi, 0.0, 1.0)

    def map_points(self, xi: np.ndarray) -> np.ndarray:
        """Physical coordinates of reference points, shape (n_cells, len(xi))."""
        return self.vertices[:-1, None] + self.h * np.asarray(xi)[None, :]


def build_mesh(n_cells: int) -> Mesh1D:
    if int(n_cells) != n_cells or n_cells < 1:
        raise ValueError(f"n_cells must be a positive integer, got {n_cells!r}")
    n_cells = int(n_cells)
    vertices = np.arange(n_cells + 1, dtype=float) / n_cells
    vertices.setflags(write=False)
    return Mesh1D(n_cells=n_cells, h=1.0 / n_cells, vertices=vertices)


@dataclass(frozen=True)
class QuadRule:
    nodes: np.ndarray
    weights: np.ndarray

    @property
    def n_points(self) -> int:
        return len(self.nodes)

    @property
    def degree(self) -> int:
        return 2 * len(self.nodes) - 1


def gauss_rule(n_points: int) -> QuadRule:
    """Gauss-Legendre rule on the reference cell [0, 1]."""
    if int(n_points) != n_points or not 1 <= n_points <= MAX_GAUSS_POINTS:
        raise ValueError(f"n_points must be in [1, {MAX_GAUSS_POINTS}], got {n_points!r}")
    x, w = np.polynomial.legendre.leggauss(int(n_points))
    nodes = 0.5 * (x + 1.0)
    weights = 0.5 * w
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return QuadRule(nodes=nodes, weights=weights)


class LagrangeBasis:
    """Equispaced nodal basis of given degree on [0, 1]."""

    def __init__(self, degree: int):
        if degree < 0:
            raise ValueError("degree must be non-negative")
        self.degree = degree
        if degree == 0:
            self.nodes = np.array([0.5])
        else:
            self.nodes = np.linspace(0.0, 1.0, degree + 1)

    @property
    def n_local(self) -> int:
        return self.degree + 1

    def values(self, xi: np.ndarray) -> np.ndarray:
        """Basis values, shape (len(xi), n_local)."""
        xi = np.atleast_1d(np.asarray(xi, dtype=float))
        out = np.ones((xi.size, self.n_local))
        for i, xi_i in enumerate(self.nodes):
            for j, xi_j in enumerate(self.nodes):
                if i != j:
                    out[:, i] *= (xi - xi_j) / (xi_i - xi_j)
        return out

    def derivatives(self, xi: np.ndarray) -> np.ndarray:
        """Basis derivatives on the reference cell, shape (len(xi), n_local)."""
        xi = np.atleast_1d(np.asarray(xi, dtype=float))
        out = np.zeros((xi.size, self.n_local))
        nodes = self.nodes
        for i in range(self.n_local):
            denom = np.prod([nodes[i] - nodes[j] for j in range(self.n_local) if j != i])
            for m in range(self.n_local):
                if m == i:
                    continue
                term = np.ones_like(xi)
                for j in range(self.n_local):
                    if j != i and j != m:
                        term *= xi - nodes[j]
                out[:, i] += term
            out[:, i] /= denom
        return out


class _Space:
    continuous: bool

    def __init__(self, mesh: Mesh1D, degree: int):
        self.mesh = mesh
        self.degree = degree
        self.basis = LagrangeBasis(degree)

    @property
    def n_local(self) -> int:
        return self.basis.n_local

    @cached_property
    def dof_map(self) -> np.ndarray:
        stride = self.n_local - 1 if self.continuous else self.n_local
        cells = np.arange(self.mesh.n_cells)[:, None]
        dm = cells * stride + np.arange(self.n_local)[None, :]
        dm.setflags(write=False)
        return dm

    @cached_property
    def dof_coordinates(self) -> np.ndarray:
        """Physical location of every nodal dof."""
        x = np.empty(self.dim)
        x[self.dof_map] = self.mesh.map_points(self.basis.nodes)
        x.setflags(write=False)
        return x

    def function(self, coefficients=None) -> "FEFunction":
        if coefficients is None:
            coefficients = np.zeros(self.dim)
        return FEFunction(self, np.asarray(coefficients, dtype=float))

    def __repr__(self):
        return f"{type(self).__name__}(n_cells={self.mesh.n_cells}, degree={self.degree})"


class FESpaceV(_Space):
    """Continuous piecewise polynomials of degree ``k + 1``."""

    continuous = True

    def __init__(self, mesh: Mesh1D, k: int):
        if k < 0:
            raise ValueError("k must be >= 0")
        super().__init__(mesh, k + 1)
        self.k = k

    @property
    def dim(self) -> int:
        return self.mesh.n_cells * self.degree + 1


class FESpaceQ(_Space):
    """Discontinuous piecewise polynomials of degree ``k``."""

    continuous = False

    def __init__(self, mesh: Mesh1D, k: int):
        if k < 0:
            raise ValueError("k must be >= 0")
        super().__init__(mesh, k)
        self.k = k

    @property
    def dim(self) -> int:
        return self.mesh.n_cells * (self.degree + 1)


@dataclass
class FEFunction:
    space: _Space
    coefficients: np.ndarray

    def __post_init__(self):
        self.coefficients = np.asarray(self.coefficients, dtype=float)
        if self.coefficients.shape != (self.space.dim,):
            raise ValueError(
                f"expected {self.space.dim} coefficients, got shape {self.coefficients.shape}"
            )

    def __call__(self, x):
        return evaluate(self, x)


def _eval(f: FEFunction, points, table) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    cell, xi = f.space.mesh.cell_of(pts.ravel())
    phi = table(xi)
    local = f.coefficients[f.space.dof_map[cell]]
    return np.einsum("ij,ij->i", phi, local).reshape(pts.shape)


def evaluate(f: FEFunction, points) -> np.ndarray:
    """Point values of a finite element function."""
    return _eval(f, points, f.space.basis.values)


def evaluate_derivative(f: FEFunction, points) -> np.ndarray:
    """Point values of the x-derivative (one-sided from the right at interior vertices)."""
    h = f.space.mesh.h
    return _eval(f, points, lambda xi: f.space.basis.derivatives(xi) / h)


def interpolate(f, space: _Space) -> FEFunction:
    """Nodal interpolant of a vectorised callable."""
    return FEFunction(space, np.asarray(f(space.dof_coordinates), dtype=float))
