"""
Exponential convergence under the stabilizer drift
==================================================

The drift ``v = f_x/f`` makes ``f`` the stationary density. Here a step
density relaxes towards a sine target, and the fitted decay rate of
``||y(t) - f||`` is compared with the spectral gap.
"""

import numpy as np

from fpsteer import DriftField, Grid, project, solve, spectral_gap
from fpsteer.control import gradient_log_drift

grid = Grid(400)
f = project("sine:0.5:1", grid, normalized=True)
y0 = project("step:0.2:1.8:0.5", grid, normalized=True)

drift = DriftField.constant(gradient_log_drift(f))
traj = solve(y0, drift, 2.5, 1e-3, startup_steps=4)
err = traj.l2_distance(f)

# %%
# Fit the slope of log-error over the exponential regime.
window = traj.times >= 0.5
rate = -np.polyfit(traj.times[window], np.log(err[window]), 1)[0]
gap = spectral_gap(f.with_values(1 / f.values), "stabilizer")
print(f"fitted rate   {rate:.4f}")
print(f"spectral gap  {gap:.4f}")

for t in (0.0, 0.5, 1.0, 1.5, 2.0, 2.5):
    k = np.argmin(abs(traj.times - t))
    print(f"t = {t:3.1f}   ||y - f|| = {err[k]:.3e}   mass - 1 = {traj.masses()[k] - 1:+.1e}")
