"""
Uniform cell-centered grids on [0, 1]
=====================================

Densities live on cell centers ``x_i = (i + 1/2) h`` and fluxes/drifts live on
cell edges ``x_{i+1/2} = i h``. All integrals use the midpoint rule, which is
second order and makes zero-flux finite-volume schemes conserve mass exactly.

Analytic densities are described by a small string language::

    uniform
    sine:<a>:<k>                  1 + a sin(2 pi k x)
    gaussian_bump:<mu>:<sigma>    exp(-(x - mu)^2 / (2 sigma^2))
    bimodal:<mu1>:<mu2>:<sigma>   sum of two gaussian bumps
    step:<lo>:<hi>:<split>        lo for x < split, hi otherwise
    exp:<rate>                    exp(rate x)
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

CELL = "cell"
EDGE = "edge"


@dataclass(frozen=True)
class Grid:
    """Uniform partition of (0, 1) into ``n`` cells."""

    n: int

    def __post_init__(self):
        if not isinstance(self.n, (int, np.integer)) or self.n < 4:
            raise ValueError(f"grid needs at least 4 cells, got {self.n!r}")

    @property
    def h(self) -> float:
        return 1.0 / self.n

    @property
    def centers(self) -> np.ndarray:
        return (np.arange(self.n) + 0.5) / self.n

    @property
    def edges(self) -> np.ndarray:
        return np.arange(self.n + 1) / self.n


def uniform_grid(n: int) -> Grid:
    return Grid(n)


@dataclass(frozen=True, eq=False)
class GridFunction:
    """Values on either the cells or the edges of a grid.

    The value array is copied and frozen on construction.
    """

    grid: Grid
    values: np.ndarray
    placement: str = CELL

    def __post_init__(self):
        if self.placement not in (CELL, EDGE):
            raise ValueError(f"unknown placement {self.placement!r}")
        vals = np.array(self.values, dtype=float)
        expected = self.grid.n if self.placement == CELL else self.grid.n + 1
        if vals.shape != (expected,):
            raise ValueError(
                f"{self.placement} function on n={self.grid.n} needs {expected} values, "
                f"got shape {vals.shape}"
            )
        if not np.all(np.isfinite(vals)):
            raise ValueError("grid function values must be finite")
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)

    @property
    def points(self) -> np.ndarray:
        return self.grid.centers if self.placement == CELL else self.grid.edges

    def _check(self, other: GridFunction):
        if other.grid != self.grid or other.placement != self.placement:
            raise ValueError("grid functions live on different grids or placements")

    def with_values(self, values) -> GridFunction:
        return GridFunction(self.grid, values, self.placement)

    def __add__(self, other):
        if isinstance(other, GridFunction):
            self._check(other)
            return self.with_values(self.values + other.values)
        return self.with_values(self.values + other)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, GridFunction):
            self._check(other)
            return self.with_values(self.values - other.values)
        return self.with_values(self.values - other)

    def __mul__(self, other):
        if isinstance(other, GridFunction):
            self._check(other)
            return self.with_values(self.values * other.values)
        return self.with_values(self.values * other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, GridFunction):
            self._check(other)
            return self.with_values(self.values / other.values)
        return self.with_values(self.values / other)

    def __neg__(self):
        return self.with_values(-self.values)

    def min(self) -> float:
        return float(self.values.min())

    def max(self) -> float:
        return float(self.values.max())


def cell_function(grid: Grid, values) -> GridFunction:
    return GridFunction(grid, values, CELL)


def edge_function(grid: Grid, values) -> GridFunction:
    return GridFunction(grid, values, EDGE)


# --------------------------------------------------------------------------
# Analytic density presets
# --------------------------------------------------------------------------

_PRESET_ARITY = {
    "uniform": 0,
    "sine": 2,
    "gaussian_bump": 2,
    "bimodal": 3,
    "step": 3,
    "exp": 1,
}


@dataclass(frozen=True)
class DensitySpec:
    name: str
    params: tuple = field(default_factory=tuple)

    @classmethod
    def parse(cls, text: str) -> DensitySpec:
        parts = text.strip().split(":")
        name, raw = parts[0], parts[1:]
        if name not in _PRESET_ARITY:
            raise ValueError(f"unknown density preset {name!r}")
        if len(raw) != _PRESET_ARITY[name]:
            raise ValueError(
                f"preset {name!r} takes {_PRESET_ARITY[name]} parameters, got {len(raw)}"
            )
        try:
            params = tuple(float(p) for p in raw)
        except ValueError as exc:
            raise ValueError(f"malformed density spec {text!r}") from exc
        return cls(name, params)

    def __str__(self):
        return ":".join([self.name, *(repr(p) for p in self.params)])

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        p = self.params
        if self.name == "uniform":
            return np.ones_like(x)
        if self.name == "sine":
            a, k = p
            return 1.0 + a * np.sin(2 * np.pi * k * x)
        if self.name == "gaussian_bump":
            mu, sigma = p
            return np.exp(-((x - mu) ** 2) / (2 * sigma**2))
        if self.name == "bimodal":
            mu1, mu2, sigma = p
            return np.exp(-((x - mu1) ** 2) / (2 * sigma**2)) + np.exp(
                -((x - mu2) ** 2) / (2 * sigma**2)
            )
        if self.name == "step":
            lo, hi, split = p
            return np.where(x < split, lo, hi).astype(float)
        if self.name == "exp":
            (rate,) = p
            return np.exp(rate * x)
        raise ValueError(f"unknown density preset {self.name!r}")


def project(density_spec, grid: Grid, normalized: bool = False) -> GridFunction:
    """Sample a density preset at the cell centers.

    The result is not normalized unless ``normalized`` is set.
    """
    if isinstance(density_spec, str):
        density_spec = DensitySpec.parse(density_spec)
    y = cell_function(grid, density_spec(grid.centers))
    return normalize(y) if normalized else y


# --------------------------------------------------------------------------
# Quadrature, norms, derivatives
# --------------------------------------------------------------------------


def _weights(y: GridFunction) -> np.ndarray:
    h = y.grid.h
    if y.placement == CELL:
        return np.full(y.grid.n, h)
    # trapezoid rule on edge samples
    w = np.full(y.grid.n + 1, h)
    w[[0, -1]] = h / 2
    return w


def mass(y: GridFunction) -> float:
    if y.placement != CELL:
        raise ValueError("mass is defined for cell functions")
    return float(y.grid.h * np.sum(y.values))


def normalize(y: GridFunction) -> GridFunction:
    m = mass(y)
    if not m > 0:
        raise ValueError(f"cannot normalize a function with mass {m}")
    return y.with_values(y.values / m)


def derivative(y: GridFunction, boundary=(0.0, 0.0)) -> GridFunction:
    """Centered first difference.

    Cell values map to edge values ``(y_{i+1} - y_i)/h``; the two boundary
    edges take ``boundary`` (zero by default, the zero-flux convention).
    Edge values map to cell values ``(e_{i+1} - e_i)/h``.
    """
    h = y.grid.h
    if y.placement == CELL:
        out = np.empty(y.grid.n + 1)
        out[1:-1] = np.diff(y.values) / h
        out[0], out[-1] = boundary
        return edge_function(y.grid, out)
    return cell_function(y.grid, np.diff(y.values) / h)


@dataclass(frozen=True, eq=False)
class WeightedL2:
    weight: GridFunction

    def __post_init__(self):
        if np.any(self.weight.values <= 0):
            raise ValueError("weight must be strictly positive")


L2, LINF, H1, H2 = "L2", "Linf", "H1", "H2"


def inner(p: GridFunction, q: GridFunction, weight: GridFunction | None = None) -> float:
    p._check(q)
    w = _weights(p)
    if weight is not None:
        if weight.values.shape != p.values.shape:
            raise ValueError("weight length does not match the function")
        w = w * weight.values
    return float(np.sum(w * p.values * q.values))


def norm(y: GridFunction, kind=L2) -> float:
    """Discrete L2, Linf, H1, H2 or weighted L2 norm."""
    if isinstance(kind, WeightedL2):
        return float(np.sqrt(inner(y, y, kind.weight)))
    if kind == L2:
        return float(np.sqrt(np.sum(_weights(y) * y.values**2)))
    if kind == LINF:
        return float(np.max(np.abs(y.values)))
    if kind == H1:
        return float(np.hypot(norm(y), norm(derivative(y))))
    if kind == H2:
        if y.placement != CELL:
            raise ValueError("H2 norm is defined for cell functions")
        yx = derivative(y)
        return float(np.sqrt(norm(y) ** 2 + norm(yx) ** 2 + norm(derivative(yx)) ** 2))
    raise ValueError(f"unknown norm kind {kind!r}")


def coarsen(y: GridFunction, n: int) -> GridFunction:
    """Average a cell function onto a nested coarser grid (mass preserving)."""
    if y.placement != CELL:
        raise ValueError("coarsen expects a cell function")
    if y.grid.n % n:
        raise ValueError(f"grid of {y.grid.n} cells is not nested over {n} cells")
    return cell_function(Grid(n), y.values.reshape(n, -1).mean(axis=1))
