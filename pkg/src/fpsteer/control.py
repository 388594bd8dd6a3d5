"""
Bounded drift fields that steer a density to a target in finite time
====================================================================

Two controllers are provided.

The stabilizer ``v = f_x / f`` (edge log-ratios of ``f``) makes ``f`` the
unique equilibrium and attracts every density at the exponential rate set by
the spectral gap.

The steering controller reaches ``f`` at a prescribed time ``T`` in three
phases:

1. ``[0, eps/2]``: no drift. The Neumann heat flow makes the density strictly
   positive everywhere.
2. ``(eps/2, eps]``: stabilizer drift. The density is smoothed into the
   domain of the weighted operator.
3. ``(eps, T)``: the horizon is cut into intervals of length proportional to
   ``1/m^2``. On interval ``m`` the feedback

       v = y_x / y - g_m (a y)_x / y,     a = 1/f,   g_m proportional to m,

   turns the closed loop into ``y_t = g_m (a y)_xx``. Each interval shrinks the
   distance to ``f`` by ``exp(-alpha lambda / m)``, and the harmonic series
   diverges while ``sum 1/m^2`` stays finite. With ``alpha >= 1/lambda`` the
   product ``m exp(-H_m)`` stays bounded, and so does the drift.

Phase 3 is integrated in the closed-loop form. The drift is recorded at every
step so that it can be audited and replayed open-loop through the general
solver.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, fields

import numpy as np

from . import grid as gr
from .grid import GridFunction, edge_function
from .pde import (
    BACKWARD_EULER,
    CRANK_NICOLSON,
    DriftField,
    Trajectory,
    _substeps,
    solve,
    step,
)
from .spectral import assemble_weighted_operator, choose_alpha, logmean, spectral_gap

EULER_GAMMA = float(np.euler_gamma)
BASEL = math.pi**2 / 6


class FloorActivationWarning(RuntimeWarning):
    """The division floor in the feedback law was hit."""


def _check_target(f: GridFunction):
    if f.placement != gr.CELL:
        raise ValueError("target density must be cell placed")
    if np.any(f.values <= 0):
        raise ValueError("target density must be strictly positive")


def gradient_log_drift(f: GridFunction) -> GridFunction:
    """Stabilizing drift ``(ln f)_x`` on edges; zero on the two boundary edges."""
    _check_target(f)
    v = np.zeros(f.grid.n + 1)
    v[1:-1] = np.diff(np.log(f.values)) / f.grid.h
    return edge_function(f.grid, v)


@dataclass(frozen=True)
class ControlSchedule:
    """Partition of ``[eps, T)`` into intervals with lengths ``~ 1/m^2``.

    ``breakpoints[m] = eps + (T - eps) * (6/pi^2) * sum_{k<=m} 1/k^2`` for
    ``m = 0..m_max``; ``gains[m-1] = alpha * m * (pi^2/6) / (T - eps)`` applies on
    ``[breakpoints[m-1], breakpoints[m])``.
    """

    T: float
    epsilon: float
    alpha: float
    m_max: int
    breakpoints: np.ndarray
    gains: np.ndarray

    @property
    def time_scale(self) -> float:
        """Physical time per unit of raw schedule time."""
        return (self.T - self.epsilon) / BASEL

    def interval(self, m: int) -> tuple[float, float]:
        return float(self.breakpoints[m - 1]), float(self.breakpoints[m])


def steering_schedule(T: float, epsilon: float, alpha: float, m_max: int) -> ControlSchedule:
    if not 0 < epsilon < T:
        raise ValueError(f"need 0 < epsilon < T, got epsilon={epsilon}, T={T}")
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    if m_max < 1:
        raise ValueError("m_max must be at least 1")
    m = np.arange(1, m_max + 1)
    scale = (T - epsilon) / BASEL
    partial = np.concatenate([[0.0], np.cumsum(1.0 / m**2)])
    bps = epsilon + scale * partial
    gains = alpha * m / scale
    return ControlSchedule(T, epsilon, alpha, m_max, bps, gains)


def _feedback(y: np.ndarray, f: np.ndarray, a: np.ndarray, gain: float, h: float, floor_delta: float):
    yhat = logmean(y[:-1], y[1:])
    yhat = np.where(np.isfinite(yhat), yhat, 0.0)
    hit = bool(np.any(yhat < floor_delta))
    yhat = np.maximum(yhat, floor_delta)
    u = a * y
    v = np.zeros(len(y) + 1)
    v[1:-1] = (np.diff(y) - gain * np.diff(u)) / h / yhat
    return v, hit


def feedback_drift(y: GridFunction, f: GridFunction, gain: float, floor_delta: float = 1e-8) -> GridFunction:
    """Edge drift ``(y_x - gain (a y)_x) / y_hat`` with ``a = 1/f``.

    ``y_hat`` is the logarithmic mean of the neighbouring cells, floored at
    ``floor_delta``. With this mean the first term is exactly the edge
    log-ratio of ``y``, so ``feedback_drift(f, f, g)`` equals
    ``gradient_log_drift(f)`` for every gain. A ``FloorActivationWarning`` is
    emitted when the floor is hit.
    """
    _check_target(f)
    if not gain > 0:
        raise ValueError("gain must be positive")
    if np.any(y.values < 0):
        raise ValueError("density must be nonnegative")
    v, hit = _feedback(y.values, f.values, 1.0 / f.values, gain, y.grid.h, floor_delta)
    if hit:
        warnings.warn("feedback division floor activated", FloorActivationWarning, stacklevel=2)
    return edge_function(y.grid, v)


def drift_sup_norm(drift) -> float:
    if isinstance(drift, GridFunction):
        return float(np.max(np.abs(drift.values)))
    return float(np.max(np.abs(drift.samples)))


# --------------------------------------------------------------------------
# Three-phase steering
# --------------------------------------------------------------------------


@dataclass
class SteerConfig:
    """Tunable parameters of :func:`steer` (all keys accepted in config files).

    ``epsilon`` defaults to ``T/10``. ``alpha`` overrides the gain rule
    ``alpha_safety / gap``. ``scheme`` integrates the accelerating phase;
    ``smooth_scheme`` the zero-drift, stabilizer and hold phases.

    The schedule is truncated after ``m_max`` intervals. With ``tail="extend"``
    the last gain stays active up to ``T``, which keeps the whole run invariant
    under time rescaling; ``tail="hold"`` switches to the stabilizer instead.
    Reaching ``tol_terminal`` early always switches to the stabilizer.
    """

    epsilon: float | None = None
    alpha_safety: float = 1.0
    alpha: float | None = None
    m_max: int = 40
    tol_terminal: float = 1e-10
    floor_delta: float = 1e-8
    scheme: str = BACKWARD_EULER
    smooth_scheme: str = CRANK_NICOLSON
    dt: float = 1e-3
    min_steps: int = 4
    startup_steps: int = 4
    tail: str = "extend"

    @classmethod
    def from_dict(cls, d: dict) -> SteerConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown steer config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class SteerResult:
    drift: DriftField
    trajectory: Trajectory
    schedule: ControlSchedule
    gap: float
    config: SteerConfig
    interval_sup: np.ndarray  # max |v| over each schedule interval m = 1..m_stop
    envelope: np.ndarray  # g_m ||(a y)_x||_H1 at the end of interval m
    interval_error: np.ndarray  # ||y - f||_2 at breakpoints a_0..a_{m_stop}
    m_stop: int
    floor_activations: int
    terminal_error: float
    relative_terminal_error: float
    phase_end_times: tuple = field(default=())

    def __iter__(self):
        # allows ``drift, trajectory = steer(...)``
        return iter((self.drift, self.trajectory))


def steer(y0: GridFunction, f: GridFunction, T: float, cfg: SteerConfig | None = None) -> SteerResult:
    """Drive ``y0`` to ``f`` at time ``T`` with the three-phase controller.

    The relative terminal error is ``||y(T) - f||_2 / ||f||_2``.
    """
    cfg = cfg or SteerConfig()
    _check_target(f)
    if f.grid != y0.grid:
        raise ValueError("y0 and f live on different grids")
    if abs(gr.mass(f) - 1) > 1e-10 or abs(gr.mass(y0) - 1) > 1e-10:
        raise ValueError("y0 and f must both have unit mass")
    if np.any(y0.values < 0):
        raise ValueError("y0 must be nonnegative")
    grid = y0.grid
    eps = T / 10 if cfg.epsilon is None else cfg.epsilon
    gap = spectral_gap(f.with_values(1.0 / f.values))
    alpha = cfg.alpha if cfg.alpha is not None else choose_alpha(gap, cfg.alpha_safety)
    sched = steering_schedule(T, eps, alpha, cfg.m_max)
    shortest = (sched.breakpoints[-1] - sched.breakpoints[-2]) / max(
        cfg.min_steps, math.ceil((sched.breakpoints[-1] - sched.breakpoints[-2]) / cfg.dt)
    )
    if shortest < 1e-12 * T:
        raise ValueError("schedule intervals are too short to resolve; lower m_max")

    stab = gradient_log_drift(f)
    zero = edge_function(grid, np.zeros(grid.n + 1))

    # phase 1: heat flow
    d1 = DriftField(grid, [0.0, eps / 2], zero.values, (cfg.smooth_scheme,))
    tr1 = solve(y0, d1, eps / 2, cfg.dt, cfg.smooth_scheme, startup_steps=cfg.startup_steps)
    # phase 2: stabilizer
    d2 = DriftField(grid, [eps / 2, eps], stab.values, (cfg.smooth_scheme,))
    tr2 = solve(tr1.final, d2, eps, cfg.dt, cfg.smooth_scheme, t_start=eps / 2)

    # phase 3: accelerated closed loop
    a = 1.0 / f.values
    A = assemble_weighted_operator(f.with_values(a))
    h = grid.h
    y = tr2.values[-1]
    times, states, bps, samples = [], [], [eps], []
    interval_sup, envelope, interval_error = [], [], [float(_l2(y - f.values, h))]
    floor_hits = 0
    m_stop = 0
    if cfg.tail not in ("extend", "hold"):
        raise ValueError(f"unknown tail mode {cfg.tail!r}")
    for m in range(1, cfg.m_max + 1):
        t0, t1 = sched.interval(m)
        if m == cfg.m_max and cfg.tail == "extend":
            t1 = T
        g = float(sched.gains[m - 1])
        L = A * g
        nsub = _substeps(t1 - t0, cfg.dt, cfg.min_steps)
        dtm = (t1 - t0) / nsub
        vmax = 0.0
        for j in range(nsub):
            y = step(y, L, dtm, cfg.scheme)
            # implicit step: the drift realizing it is the feedback at the new state
            v, hit = _feedback(y, f.values, a, g, h, cfg.floor_delta)
            floor_hits += hit
            vmax = max(vmax, float(np.max(np.abs(v))))
            t = t1 if j == nsub - 1 else t0 + (j + 1) * dtm
            times.append(t)
            states.append(y)
            bps.append(t)
            samples.append(v)
        interval_sup.append(vmax)
        u = edge_function(grid, np.r_[0.0, np.diff(a * y) / h, 0.0])
        envelope.append(g * gr.norm(u, gr.H1))
        err = float(_l2(y - f.values, h))
        interval_error.append(err)
        m_stop = m
        if err < cfg.tol_terminal:
            break
    d3 = DriftField(grid, bps, np.array(samples), (cfg.scheme,) * len(samples))
    t3 = bps[-1]
    parts = [d1, d2, d3]
    values = [tr1.values, tr2.values[1:], np.array(states)]
    tgrid = [tr1.times, tr2.times[1:], np.array(times)]

    # hold the reached state with the stabilizer
    if T - t3 > 1e-14:
        d4 = DriftField(grid, [t3, T], stab.values, (cfg.smooth_scheme,))
        tr4 = solve(gr.cell_function(grid, y), d4, T, cfg.dt, cfg.smooth_scheme, t_start=t3)
        parts.append(d4)
        values.append(tr4.values[1:])
        tgrid.append(tr4.times[1:])

    drift = DriftField.concatenate(parts)
    traj = Trajectory(grid, np.concatenate(tgrid), np.concatenate(values), drift)
    if floor_hits:
        warnings.warn(
            f"feedback division floor activated on {floor_hits} steps",
            FloorActivationWarning,
            stacklevel=2,
        )
    final_err = float(_l2(traj.values[-1] - f.values, h))
    return SteerResult(
        drift=drift,
        trajectory=traj,
        schedule=sched,
        gap=gap,
        config=cfg,
        interval_sup=np.array(interval_sup),
        envelope=np.array(envelope),
        interval_error=np.array(interval_error),
        m_stop=m_stop,
        floor_activations=floor_hits,
        terminal_error=final_err,
        relative_terminal_error=final_err / gr.norm(f),
        phase_end_times=(eps / 2, eps, t3, T),
    )


def _l2(e: np.ndarray, h: float) -> float:
    return math.sqrt(h * float(np.dot(e, e)))


def replay(result: SteerResult, y0: GridFunction, dt: float | None = None) -> Trajectory:
    """Feed the recorded drift open-loop through the general Fokker-Planck solver."""
    cfg = result.config
    return solve(
        y0,
        result.drift,
        result.schedule.T,
        cfg.dt if dt is None else dt,
        cfg.smooth_scheme,
        startup_steps=cfg.startup_steps,
    )


# --------------------------------------------------------------------------
# Boundedness audit
# --------------------------------------------------------------------------


def harmonic(m: int) -> float:
    return float(np.sum(1.0 / np.arange(1, m + 1)))


def harmonic_envelope(m_max: int) -> np.ndarray:
    """Model sequence ``s_m = m exp(-H_m)``, increasing to ``exp(-gamma)``."""
    m = np.arange(1, m_max + 1)
    return m * np.exp(-np.cumsum(1.0 / m))


@dataclass(frozen=True)
class BoundAudit:
    bounded: bool
    bound: float
    growth_exponent: float
    model_sequence: np.ndarray
    model_limit: float
    model_rel_error: float


def growth_exponent(seq, start: int = 5) -> float:
    """Least-squares slope of ``ln seq[m]`` against ``ln m`` over ``m >= start``.

    Bounded sequences that settle give a slope near zero; a sequence growing
    like ``m^p`` gives ``p``.
    """
    seq = np.asarray(seq, dtype=float)
    m = np.arange(1, len(seq) + 1)
    keep = (m >= start) & (seq > 0)
    if keep.sum() < 2:
        keep = seq > 0
    if keep.sum() < 2:
        return 0.0
    return float(np.polyfit(np.log(m[keep]), np.log(seq[keep]), 1)[0])


def euler_mascheroni_bound_audit(
    schedule: ControlSchedule, envelope, max_growth: float = 0.25, start: int = 5
) -> BoundAudit:
    """Check that ``g_m ||(a y)_x||_H1`` stays bounded along the schedule.

    ``bounded`` holds when the log-log growth exponent of the envelope over
    ``m >= start`` is at most ``max_growth``; a gain that is too small lets the
    envelope grow almost linearly in ``m``. The model sequence ``m exp(-H_m)``
    and its distance to the limit ``exp(-gamma)`` are reported alongside.
    """
    envelope = np.asarray(envelope, dtype=float)
    p = growth_exponent(envelope, start)
    s = harmonic_envelope(schedule.m_max)
    limit = math.exp(-EULER_GAMMA)
    return BoundAudit(
        bounded=bool(p <= max_growth),
        bound=float(envelope.max()) if envelope.size else 0.0,
        growth_exponent=p,
        model_sequence=s,
        model_limit=limit,
        model_rel_error=abs(s[-1] - limit) / limit,
    )
