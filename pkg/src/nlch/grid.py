"""Periodic uniform 2D lattice, cell-averaged fields, and discrete inner products.

The domain is the square [0, L)^2 split into N x N cells of size h = L/N.
A field holds one value per cell (the cell average), stored as an (N, N)
float64 array in row-major order, so ``values[i, j]`` is the cell at
(x_i, y_j) and the flat buffer is the length-N^2 row-major vector. All
index arithmetic is periodic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import ConfigurationError, GridMismatchError

__all__ = [
    "Grid",
    "Field",
    "EdgeField",
    "Mass",
    "make_grid",
    "field_from_array",
    "constant_field",
    "inner_product",
    "l2_norm",
    "total_mass",
    "init_random_perturbation",
]


@dataclass(frozen=True)
class Grid:
    """Uniform periodic N x N lattice over a square of side ``length``."""

    n: int
    length: float
    h: float


@dataclass(frozen=True)
class Field:
    """Cell-averaged scalar values on a grid. Immutable once constructed."""

    grid: Grid
    values: np.ndarray  # shape (n, n), float64, read-only

    @property
    def flat(self) -> np.ndarray:
        """Row-major length-n^2 view of the values."""
        return self.values.reshape(-1)

    def at(self, i: int, j: int) -> float:
        """Value at (i, j) with periodic index reduction."""
        n = self.grid.n
        return float(self.values[i % n, j % n])


@dataclass(frozen=True)
class EdgeField:
    """Face-centered values: ``x_edges[i, j]`` lives at face (i+1/2, j) and
    ``y_edges[i, j]`` at face (i, j+1/2). Face (N-1/2, j) is identified with
    face (-1/2, j) through periodic indexing, and likewise in y."""

    grid: Grid
    x_edges: np.ndarray
    y_edges: np.ndarray


class Mass(NamedTuple):
    raw: float
    integral: float


def make_grid(n: int, length: float = 1.0) -> Grid:
    """Build a grid with n cells per side over a square of side ``length``."""
    if not isinstance(n, (int, np.integer)) or isinstance(n, bool):
        raise ConfigurationError(f"N must be an integer, got {n!r}")
    if n < 2:
        raise ConfigurationError(f"N must be at least 2, got {n}")
    if not (length > 0):
        raise ConfigurationError(f"L must be positive, got {length}")
    return Grid(n=int(n), length=float(length), h=float(length) / int(n))


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr, dtype=np.float64)
    arr.flags.writeable = False
    return arr


def field_from_array(grid: Grid, values, *, check: bool = True) -> Field:
    """Wrap an array of cell values as a Field.

    Accepts either shape (n, n) or a flat length-n^2 row-major array. The
    data is copied and frozen. With ``check`` (the default) non-finite
    values are rejected; the naive explicit scheme disables the check since
    producing a blow-up is its purpose.
    """
    arr = np.asarray(values, dtype=np.float64)
    n = grid.n
    if arr.shape == (n * n,):
        arr = arr.reshape(n, n)
    if arr.shape != (n, n):
        raise ConfigurationError(
            f"field values must have shape ({n}, {n}) or length {n * n}, got {arr.shape}"
        )
    if check and not np.all(np.isfinite(arr)):
        raise ConfigurationError("field values must be finite")
    return Field(grid=grid, values=_freeze(arr.copy()))


def constant_field(grid: Grid, value: float) -> Field:
    return field_from_array(grid, np.full((grid.n, grid.n), float(value)))


def _require_same_grid(a, b) -> None:
    if a.grid != b.grid:
        raise GridMismatchError(f"grids differ: {a.grid} vs {b.grid}")


def inner_product(a: Field, b: Field, *, compensated: bool = False) -> float:
    """Discrete inner product h^2 * sum_ij a_ij b_ij.

    The summation order is fixed (numpy's deterministic pairwise reduction
    over the row-major buffer), so the product is exactly symmetric in its
    arguments. ``compensated`` switches to exact summation (math.fsum) for
    diagnostics.
    """
    _require_same_grid(a, b)
    prod = a.values * b.values
    if compensated:
        s = math.fsum(prod.reshape(-1))
    else:
        s = float(np.sum(prod))
    return a.grid.h ** 2 * s


def l2_norm(a: Field) -> float:
    """Discrete l2 norm, sqrt(<a, a>_h)."""
    return math.sqrt(inner_product(a, a))


def total_mass(a: Field, *, compensated: bool = False) -> Mass:
    """Total mass as (raw, integral) = (sum_ij a_ij, h^2 * sum_ij a_ij)."""
    if compensated:
        raw = math.fsum(a.values.reshape(-1))
    else:
        raw = float(np.sum(a.values))
    return Mass(raw=raw, integral=a.grid.h ** 2 * raw)


def init_random_perturbation(grid: Grid, amplitude: float, seed: int) -> Field:
    """Zero-mean uniform random initial data in [-amplitude, amplitude].

    Draws i.i.d. uniforms from a seeded PCG64 generator (numpy's stable
    default BitGenerator) and subtracts the sample mean, so the raw total
    mass is zero to machine precision and |rho| <= 2*amplitude. The same
    seed gives bitwise-identical fields on every platform.
    """
    if not (0 < amplitude < 1):
        raise ConfigurationError(f"amplitude must be in (0, 1), got {amplitude}")
    rng = np.random.Generator(np.random.PCG64(seed))
    vals = rng.uniform(-amplitude, amplitude, size=(grid.n, grid.n))
    vals -= vals.mean()
    return field_from_array(grid, vals)
