"""
Particles versus the density equation
=====================================

Reflected particles driven by the stabilizer drift are histogrammed and
compared with the solved density. The L1 gap shrinks like ``1/sqrt(N)``.
"""

import numpy as np

from fpsteer import DriftField, Grid, cell_function, project, solve
from fpsteer.control import gradient_log_drift
from fpsteer.grid import coarsen
from fpsteer.particles import consistency_error, simulate

grid = Grid(200)
f = project("sine:0.5:1", grid, normalized=True)
drift = DriftField.constant(gradient_log_drift(f))
y0 = cell_function(grid, np.ones(grid.n))

density = coarsen(solve(y0, drift, 1.0, 1e-3).final, 50)

for N in (5_000, 20_000, 80_000):
    ens = simulate(N, drift, 2e-3, 1.0, seed=1, y0=y0)[-1]
    print(f"N = {N:6d}   L1 error {consistency_error(ens, density):.4f}")
