"""
Conservative finite-volume solver for the zero-flux Fokker-Planck equation
==========================================================================

Solves ``y_t = y_xx - (v y)_x`` on (0, 1) with ``y_x - v y = 0`` at both ends.
The edge flux uses exponential fitting (Scharfetter-Gummel weights): with
Peclet number ``P = v h`` and Bernoulli function ``B(z) = z / (e^z - 1)``,

    F_{i+1/2} = (B(P) y_{i+1} - B(-P) y_i) / h ,

which vanishes exactly when ``y_{i+1} / y_i = e^P``. A drift given by edge
log-ratios of a density therefore has that density as its exact discrete
equilibrium. The boundary fluxes are identically zero, so column sums of the
operator vanish and mass is conserved to round-off.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_banded

from .grid import CELL, EDGE, Grid, GridFunction, cell_function, edge_function, mass

BACKWARD_EULER = "BE"
CRANK_NICOLSON = "CN"
_THETA = {BACKWARD_EULER: 1.0, CRANK_NICOLSON: 0.5}


def bernoulli(z):
    """``z / (exp(z) - 1)`` with the removable singularity at 0 filled in."""
    z = np.asarray(z, dtype=float)
    small = np.abs(z) < 1e-8
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        out = z / np.expm1(z)
    return np.where(small, 1.0 - 0.5 * z, out)


@dataclass(frozen=True, eq=False)
class TridiagonalOperator:
    """Tridiagonal matrix acting on cell values.

    Row ``i`` reads ``sub[i] y[i-1] + diag[i] y[i] + sup[i] y[i+1]``;
    ``sub[0]`` and ``sup[-1]`` are unused and kept at zero.
    """

    sub: np.ndarray
    diag: np.ndarray
    sup: np.ndarray

    def __post_init__(self):
        n = len(self.diag)
        for name in ("sub", "diag", "sup"):
            arr = np.array(getattr(self, name), dtype=float)
            if arr.shape != (n,):
                raise ValueError(f"{name} must have length {n}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} has non-finite entries")
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @property
    def n(self) -> int:
        return len(self.diag)

    def __matmul__(self, y):
        if isinstance(y, GridFunction):
            return y.with_values(self @ y.values)
        y = np.asarray(y, dtype=float)
        out = self.diag * y
        out[1:] += self.sub[1:] * y[:-1]
        out[:-1] += self.sup[:-1] * y[1:]
        return out

    def __mul__(self, c):
        return TridiagonalOperator(c * self.sub, c * self.diag, c * self.sup)

    __rmul__ = __mul__

    def to_dense(self) -> np.ndarray:
        return (
            np.diag(self.diag)
            + np.diag(self.sub[1:], -1)
            + np.diag(self.sup[:-1], 1)
        )

    def edge_fluxes(self, y) -> np.ndarray:
        """Edge fluxes ``G`` with ``(L y)_i = G_{i+1} - G_i`` and ``G_0 = G_n = 0``.

        Valid for operators with zero column sums (the diagonal is implied).
        """
        y = np.asarray(y, dtype=float)
        g = np.zeros(self.n + 1)
        g[1:-1] = self.sup[:-1] * y[1:] - self.sub[1:] * y[:-1]
        return g

    def apply_conservative(self, y) -> np.ndarray:
        """``L @ y`` evaluated as a flux divergence, so the sum telescopes."""
        return np.diff(self.edge_fluxes(y))

    def column_sums(self) -> np.ndarray:
        out = self.diag.copy()
        out[:-1] += self.sub[1:]
        out[1:] += self.sup[:-1]
        return out

    def banded(self, shift: float = 0.0, scale: float = 1.0) -> np.ndarray:
        """``shift * I + scale * self`` in LAPACK (1, 1) banded storage."""
        ab = np.zeros((3, self.n))
        ab[0, 1:] = scale * self.sup[:-1]
        ab[1] = shift + scale * self.diag
        ab[2, :-1] = scale * self.sub[1:]
        return ab


def flux_operator(edge_weight_lo, edge_weight_hi, h: float) -> TridiagonalOperator:
    """Operator for ``(Ly)_i = (F_{i+1/2} - F_{i-1/2}) / h`` with zero boundary flux
    and interior fluxes ``F_j = (hi_j y_j - lo_j y_{j-1}) / h`` for j = 1..n-1."""
    lo = np.asarray(edge_weight_lo, dtype=float)
    hi = np.asarray(edge_weight_hi, dtype=float)
    n = len(lo) + 1
    sub, diag, sup = np.zeros(n), np.zeros(n), np.zeros(n)
    h2 = h * h
    # flux through the right edge of cell i (interior edge i+1)
    sup[:-1] = hi / h2
    diag[:-1] -= lo / h2
    # minus flux through the left edge of cell i
    sub[1:] = lo / h2
    diag[1:] -= hi / h2
    return TridiagonalOperator(sub, diag, sup)


def assemble_fp_operator(v: GridFunction, grid: Grid | None = None) -> TridiagonalOperator:
    """Exponentially fitted discretization of ``y -> y_xx - (v y)_x``."""
    if v.placement != EDGE:
        raise ValueError("drift must be edge placed")
    grid = grid or v.grid
    peclet = v.values[1:-1] * grid.h
    return flux_operator(bernoulli(-peclet), bernoulli(peclet), grid.h)


def step(y: GridFunction, L: TridiagonalOperator, dt: float, scheme: str = CRANK_NICOLSON):
    """One theta-step ``(I - theta dt L) y' = (I + (1 - theta) dt L) y``.

    ``L`` must have zero column sums. After the banded solve, the new state is
    re-evaluated in flux form ``y + dt div G(theta y' + (1 - theta) y)`` so that
    mass is conserved to round-off instead of drifting with the solver error.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    theta = _THETA[scheme]
    vals = y.values if isinstance(y, GridFunction) else np.asarray(y, dtype=float)
    rhs = vals + (1.0 - theta) * dt * L.apply_conservative(vals) if theta < 1 else vals
    try:
        implicit = solve_banded((1, 1), L.banded(1.0, -theta * dt), rhs, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(f"singular implicit system at dt={dt}") from exc
    if not np.all(np.isfinite(implicit)):
        raise np.linalg.LinAlgError(f"singular implicit system at dt={dt}")
    out = vals + dt * L.apply_conservative(theta * implicit + (1.0 - theta) * vals)
    return y.with_values(out) if isinstance(y, GridFunction) else out


# --------------------------------------------------------------------------
# Drift fields and trajectories
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class DriftField:
    """Edge drift, piecewise constant on ``[breakpoints[k], breakpoints[k+1])``.

    ``schemes`` optionally tags each interval with the time integrator used
    when the drift was recorded, so that replays reproduce the same stepping.
    """

    grid: Grid
    breakpoints: np.ndarray
    samples: np.ndarray
    schemes: tuple = field(default=())

    def __post_init__(self):
        b = np.array(self.breakpoints, dtype=float)
        s = np.array(self.samples, dtype=float)
        if s.ndim == 1:
            s = s[None, :]
        if b.ndim != 1 or len(b) != len(s) + 1:
            raise ValueError("need one more breakpoint than drift samples")
        if np.any(np.diff(b) <= 0):
            raise ValueError("breakpoints must be strictly increasing")
        if s.shape[1] != self.grid.n + 1:
            raise ValueError("drift samples must be edge placed")
        if not np.all(np.isfinite(s)):
            raise ValueError("drift samples must be finite")
        schemes = tuple(self.schemes) or (None,) * len(s)
        if len(schemes) != len(s):
            raise ValueError("one scheme tag per interval")
        b.flags.writeable = False
        s.flags.writeable = False
        object.__setattr__(self, "breakpoints", b)
        object.__setattr__(self, "samples", s)
        object.__setattr__(self, "schemes", schemes)

    @classmethod
    def constant(cls, v: GridFunction, end: float = math.inf, scheme=None) -> DriftField:
        return cls(v.grid, [0.0, end], v.values[None, :], (scheme,))

    @classmethod
    def concatenate(cls, parts) -> DriftField:
        parts = list(parts)
        b = [parts[0].breakpoints[:1]]
        for prev, nxt in zip(parts, parts[1:]):
            if not math.isclose(prev.breakpoints[-1], nxt.breakpoints[0], abs_tol=1e-14):
                raise ValueError("drift pieces are not contiguous")
        for p in parts:
            b.append(p.breakpoints[1:])
        return cls(
            parts[0].grid,
            np.concatenate(b),
            np.concatenate([p.samples for p in parts]),
            sum((p.schemes for p in parts), ()),
        )

    def __len__(self):
        return len(self.samples)

    def sample(self, k: int) -> GridFunction:
        return edge_function(self.grid, self.samples[k])

    def interval_index(self, t: float) -> int:
        if t < self.breakpoints[0] or t >= self.breakpoints[-1]:
            raise ValueError(f"drift undefined at t={t}")
        return int(np.searchsorted(self.breakpoints, t, side="right") - 1)

    def at(self, t: float) -> GridFunction:
        return self.sample(self.interval_index(t))

    def interval_sup(self) -> np.ndarray:
        return np.max(np.abs(self.samples), axis=1)

    def to_csv(self, path, end: float | None = None):
        """Write ``t_start,t_end,x_edge,v`` rows (an infinite end is clipped to ``end``)."""
        ends = self.breakpoints[1:].copy()
        if end is not None:
            ends = np.minimum(ends, end)
        k, m = self.samples.shape
        rows = np.column_stack(
            [
                np.repeat(self.breakpoints[:-1], m),
                np.repeat(ends, m),
                np.tile(self.grid.edges, k),
                self.samples.ravel(),
            ]
        )
        np.savetxt(path, rows, fmt="%.17g", delimiter=",", header="t_start,t_end,x_edge,v", comments="")


@dataclass(frozen=True, eq=False)
class Trajectory:
    grid: Grid
    times: np.ndarray
    values: np.ndarray
    drift_log: DriftField | None = None

    @property
    def states(self) -> list[GridFunction]:
        return [cell_function(self.grid, row) for row in self.values]

    @property
    def final(self) -> GridFunction:
        return cell_function(self.grid, self.values[-1])

    def state_at(self, t: float) -> GridFunction:
        k = int(np.argmin(np.abs(self.times - t)))
        return cell_function(self.grid, self.values[k])

    def masses(self) -> np.ndarray:
        return self.grid.h * self.values.sum(axis=1)

    def l2_distance(self, f: GridFunction) -> np.ndarray:
        return np.sqrt(self.grid.h * np.sum((self.values - f.values) ** 2, axis=1))

    def to_csv(self, path):
        """Write ``t,x,y`` rows, time-major, at 17 significant digits."""
        m, n = self.values.shape
        rows = np.column_stack(
            [np.repeat(self.times, n), np.tile(self.grid.centers, m), self.values.ravel()]
        )
        np.savetxt(path, rows, fmt="%.17g", delimiter=",", header="t,x,y", comments="")


def _substeps(length: float, dt: float, min_steps: int) -> int:
    return max(min_steps, math.ceil(length / dt - 1e-9))


def solve(
    y0: GridFunction,
    drift: DriftField,
    T: float,
    dt: float,
    scheme: str = CRANK_NICOLSON,
    min_steps: int = 1,
    startup_steps: int = 0,
    t_start: float = 0.0,
) -> Trajectory:
    """Integrate the controlled Fokker-Planck equation on ``[t_start, T]``.

    Steps are shortened locally to land on every drift breakpoint. Each
    interval is integrated with its recorded scheme tag, falling back to
    ``scheme``. ``startup_steps`` backward Euler steps are taken at the start
    to damp rough initial data before Crank-Nicolson takes over.
    """
    if y0.placement != CELL:
        raise ValueError("initial density must be cell placed")
    if np.any(y0.values < 0):
        raise ValueError("initial density must be nonnegative")
    if abs(mass(y0) - 1.0) > 1e-10:
        raise ValueError(f"initial density has mass {mass(y0)!r}, expected 1")
    if not T > t_start or not dt > 0:
        raise ValueError("need T > t_start and dt > 0")
    b = drift.breakpoints
    if not math.isclose(b[0], t_start, rel_tol=0.0, abs_tol=1e-14):
        raise ValueError(f"drift must start at t={t_start}")
    if b[-1] < T - 1e-12 or np.any(b[1:-1] > T + 1e-12):
        raise ValueError("drift breakpoints must lie inside [0, T] and cover it")

    times, states = [t_start], [y0.values]
    y = y0.values
    startup = startup_steps
    for k in range(len(drift)):
        t0, t1 = b[k], min(b[k + 1], T)
        if t1 <= t0:
            break
        L = assemble_fp_operator(drift.sample(k))
        sch = drift.schemes[k] or scheme
        nsub = _substeps(t1 - t0, dt, min_steps)
        h = (t1 - t0) / nsub
        for j in range(nsub):
            if startup > 0:
                y = step(y, L, h, BACKWARD_EULER)
                startup -= 1
            else:
                y = step(y, L, h, sch)
            times.append(t1 if j == nsub - 1 else t0 + (j + 1) * h)
            states.append(y)
    k_used = int(np.searchsorted(b, T, side="left"))
    used = DriftField(
        drift.grid,
        np.append(b[:k_used], T),
        drift.samples[:k_used],
        drift.schemes[:k_used],
    )
    return Trajectory(y0.grid, np.array(times), np.array(states), used)


def heat_kernel_floor(t: float, y0: GridFunction) -> float:
    """Lower bound on the zero-drift solution at time ``t``.

    The Neumann heat kernel on (0, 1) dominates the free-space Gaussian, so
    ``y(x, t) >= int G_t(x - z) y0(z) dz``; the minimum over cell centers of
    the midpoint-rule convolution is returned.
    """
    if not t > 0:
        raise ValueError("t must be positive")
    if np.any(y0.values < 0):
        raise ValueError("y0 must be nonnegative")
    x = y0.grid.centers
    kernel = np.exp(-((x[:, None] - x[None, :]) ** 2) / (4 * t)) / math.sqrt(4 * math.pi * t)
    return float(np.min(y0.grid.h * kernel @ y0.values))
