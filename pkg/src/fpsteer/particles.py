"""
Reflected diffusion particles
=============================

Euler-Maruyama for ``dZ = v(Z, t) dt + sqrt(2) dW + d psi`` on [0, 1], where the
reflection ``psi`` is realized by folding the increment back into the interval.
The factor ``sqrt(2)`` matches the unit diffusion coefficient of
``y_t = y_xx - (v y)_x``: the Fokker-Planck equation of ``dZ = v dt + s dW`` has
diffusion ``s^2 / 2``, so each step adds ``sqrt(2 dt)`` times a standard normal.

Random numbers are drawn from fixed blocks of particles, each with its own
stream spawned from ``(seed, block index)``, so an ensemble does not depend on
how the blocks are distributed over workers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .grid import Grid, GridFunction, cell_function
from .pde import DriftField

BLOCK = 4096
_CHUNK_VALUES = 1 << 21
_SCALAR_MAX = 8


def reflect(z):
    """Fold ``z`` into [0, 1] through the even, 2-periodic extension."""
    r = np.mod(np.asarray(z, dtype=float), 2.0)
    out = np.where(r > 1.0, 2.0 - r, r)
    return float(out) if out.ndim == 0 else out


def _fold_inplace(z: np.ndarray):
    # a single mirror at each end suffices for z in [-1, 2]
    np.abs(z, out=z)
    z -= 1.0
    np.abs(z, out=z)
    np.subtract(1.0, z, out=z)
    far = (z < 0) | (z > 1)
    if far.any():
        z[far] = reflect(z[far])


@dataclass(frozen=True, eq=False)
class ParticleEnsemble:
    positions: np.ndarray
    time: float
    seed: int

    def __post_init__(self):
        pos = np.array(self.positions, dtype=float)
        if pos.ndim != 1 or pos.size < 1:
            raise ValueError("ensemble needs at least one particle")
        if np.any(pos < 0) or np.any(pos > 1):
            raise ValueError("positions must lie in [0, 1]")
        pos.flags.writeable = False
        object.__setattr__(self, "positions", pos)

    @property
    def N(self) -> int:
        return self.positions.size


def _streams(seed: int, n: int, purpose: int) -> list[np.random.Generator]:
    nblocks = -(-n // BLOCK)
    return [
        np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(purpose, b))))
        for b in range(nblocks)
    ]


def _blockwise(streams, n: int, draw) -> np.ndarray:
    out = np.empty(n)
    for b, rng in enumerate(streams):
        lo, hi = b * BLOCK, min((b + 1) * BLOCK, n)
        out[lo:hi] = draw(rng, hi - lo)
    return out


def sample_initial(y0: GridFunction, N: int, seed: int) -> np.ndarray:
    """Inverse-CDF sampling of the piecewise-constant density ``y0``."""
    if np.any(y0.values < 0):
        raise ValueError("density must be nonnegative")
    cdf = np.concatenate([[0.0], np.cumsum(y0.values) * y0.grid.h])
    cdf /= cdf[-1]
    u = _blockwise(_streams(seed, N, 0), N, lambda rng, k: rng.random(k))
    # x = edge where the piecewise-linear cdf reaches u; interior points of
    # flat pieces are dropped so no sample lands where the density vanishes
    rising = np.diff(cdf) > 0
    keep = np.r_[rising, False] | np.r_[False, rising]
    return np.clip(np.interp(u, cdf[keep], y0.grid.edges[keep]), 0.0, 1.0)


def simulate(
    N: int,
    drift: DriftField,
    dt: float,
    T: float,
    seed: int,
    y0: GridFunction | None = None,
    snapshots=None,
    positions: np.ndarray | None = None,
) -> list[ParticleEnsemble]:
    """Simulate ``N`` reflected particles and return ensembles at ``snapshots``.

    Parameters
    ----------
    N : int
        Number of particles.
    drift : DriftField
        Edge drift; evaluated at each particle by linear interpolation of the
        sample active at the start of the step.
    dt : float
        Maximum time step; steps are shortened to land on snapshot times.
    T : float
        Final time (always included as the last snapshot).
    seed : int
        Root seed for the per-block random streams.
    y0 : GridFunction, optional
        Initial density to sample from (uniform when omitted).
    snapshots : sequence of float, optional
        Times in ``(0, T]`` at which to record the ensemble.
    positions : array, optional
        Explicit initial positions, overriding ``y0``.
    """
    if N < 1:
        raise ValueError("need at least one particle")
    if not dt > 0 or not T > 0:
        raise ValueError("dt and T must be positive")
    grid = drift.grid
    if positions is not None:
        z = np.array(positions, dtype=float)
        if z.shape != (N,):
            raise ValueError("positions must have length N")
    else:
        y0 = y0 if y0 is not None else cell_function(grid, np.ones(grid.n))
        z = sample_initial(y0, N, seed)
    times = sorted({float(t) for t in (snapshots or [])} | {float(T)})
    if times[0] < 0 or times[-1] > T:
        raise ValueError("snapshot times must lie in [0, T]")

    noise = _streams(seed, N, 1)
    out = []
    t = 0.0
    n = grid.n
    bps = drift.breakpoints
    slopes = np.diff(drift.samples, axis=1)
    s, i = np.empty(N), np.empty(N, dtype=np.intp)
    # noise for several steps is drawn at once; row-major filling keeps each
    # block's stream identical to step-by-step drawing
    chunk = max(1, min(_CHUNK_VALUES // N, 4096))
    k = drift.interval_index(0.0)
    for target in times:
        if target <= t:
            out.append(ParticleEnsemble(z.copy(), t, seed))
            continue
        nsub = max(1, math.ceil((target - t) / dt - 1e-9))
        h = (target - t) / nsub
        sigma = math.sqrt(2.0 * h)
        done = 0
        while done < nsub:
            rows = min(chunk, nsub - done)
            dw = np.empty((rows, N))
            for b, rng in enumerate(noise):
                lo, hi = b * BLOCK, min((b + 1) * BLOCK, N)
                dw[:, lo:hi] = rng.standard_normal((rows, hi - lo))
            dw *= sigma
            if N <= _SCALAR_MAX:
                k, t = _scalar_steps(z, dw, t, h, k, bps, drift.samples, slopes)
            else:
                k, t = _vector_steps(z, dw, t, h, k, bps, drift.samples, slopes, s, i)
            done += rows
        t = target
        out.append(ParticleEnsemble(z.copy(), t, seed))
    return out


def _next_interval(t, k, bps):
    while t >= bps[k + 1]:
        k += 1
        if k + 1 >= len(bps):
            raise ValueError(f"drift undefined at t={t}")
    return k


def _vector_steps(z, dw, t, h, k, bps, samples, slopes, s, i):
    n = samples.shape[1] - 1
    for row in dw:
        k = _next_interval(t, k, bps)
        vs, slope = samples[k], slopes[k]
        # linear interpolation on the uniform edge grid
        np.multiply(z, n, out=s)
        np.minimum(s.astype(np.intp), n - 1, out=i)
        s -= i
        v = np.take(slope, i)
        v *= s
        v += np.take(vs, i)
        v *= h
        z += v
        z += row
        _fold_inplace(z)
        t += h
    return k, t


def _scalar_steps(z, dw, t, h, k, bps, samples, slopes):
    # same arithmetic as _vector_steps on Python floats, for tiny ensembles
    n = samples.shape[1] - 1
    zs = z.tolist()
    k = _next_interval(t, k, bps)
    vs, sl, nxt = samples[k].tolist(), slopes[k].tolist(), float(bps[k + 1])
    for row in dw.tolist():
        if t >= nxt:
            k = _next_interval(t, k, bps)
            vs, sl, nxt = samples[k].tolist(), slopes[k].tolist(), float(bps[k + 1])
        for j, zj in enumerate(zs):
            x = zj * n
            c = min(int(x), n - 1)
            x -= c
            v = sl[c] * x
            v += vs[c]
            v *= h
            zj += v
            zj += row[j]
            zj = 1.0 - abs(abs(zj) - 1.0)
            if zj < 0 or zj > 1:
                zj = reflect(zj)
            zs[j] = zj
        t += h
    z[:] = zs
    return k, t


def empirical_density(ensemble: ParticleEnsemble, bins: int) -> GridFunction:
    """Histogram on a uniform grid of ``bins`` cells, normalized to unit mass."""
    grid = Grid(bins)
    counts, _ = np.histogram(ensemble.positions, bins=bins, range=(0.0, 1.0))
    return cell_function(grid, counts / (ensemble.N * grid.h))


def consistency_error(ensemble: ParticleEnsemble, y: GridFunction) -> float:
    """L1 distance ``h sum |hist_i - y_i|`` on the grid of ``y``."""
    hist = empirical_density(ensemble, y.grid.n)
    return float(y.grid.h * np.sum(np.abs(hist.values - y.values)))
