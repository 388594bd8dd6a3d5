"""Density steering for one-dimensional Fokker-Planck equations on [0, 1].

Submodules
----------
grid       cell-centered grids, grid functions and norms
pde        zero-flux exponential-fitting solver and drift fields
spectral   spectra of the weighted zero-flux operators
control    feedback steering and its schedule
particles  reflected particle ensembles
cli        JSON scenario runner
"""

from .control import SteerConfig, SteerResult, replay, steer
from .grid import Grid, GridFunction, cell_function, edge_function, project, uniform_grid
from .pde import DriftField, Trajectory, solve
from .spectral import spectral_gap, spectrum

__all__ = [
    "DriftField",
    "Grid",
    "GridFunction",
    "SteerConfig",
    "SteerResult",
    "Trajectory",
    "cell_function",
    "edge_function",
    "project",
    "replay",
    "solve",
    "spectral_gap",
    "spectrum",
    "steer",
    "uniform_grid",
]
__version__ = "0.1.0"
