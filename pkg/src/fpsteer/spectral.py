"""
Spectral gap of the zero-flux weighted operators
================================================

Both closed-loop generators used by the controller factor as ``L = K diag(a)``
with ``a = 1/f`` and ``K`` a symmetric, weighted Neumann Laplacian:

* ``A_a y = (a y)_xx`` uses unit edge weights;
* the stabilizer operator ``y_xx - ((f_x/f) y)_x`` in exponentially fitted
  form uses the edge weights ``f_i f_{i+1} / logmean(f_i, f_{i+1})``.

``L`` is self-adjoint for ``<p, q>_a = int p q a dx``, and the similarity
``diag(a)^{1/2} L diag(a)^{-1/2} = diag(a)^{1/2} K diag(a)^{1/2}`` is a symmetric
tridiagonal matrix, which is what gets handed to the eigensolver.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import eigh_tridiagonal

from .grid import CELL, Grid, GridFunction, cell_function
from .pde import TridiagonalOperator, flux_operator

WEIGHTED = "weighted"
STABILIZER = "stabilizer"


def _check_weight(a: GridFunction):
    if a.placement != CELL:
        raise ValueError("weight must be cell placed")
    if np.any(a.values <= 0):
        raise ValueError("weight must be strictly positive")


def logmean(p, q):
    """Logarithmic mean ``(q - p) / (ln q - ln p)``, equal to ``p`` when ``p == q``."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = (q - p) / (np.log(q) - np.log(p))
    close = np.abs(q - p) <= 1e-12 * np.maximum(np.abs(p), np.abs(q))
    return np.where(close, 0.5 * (p + q), out)


def edge_conductance(a: GridFunction, operator: str = WEIGHTED) -> np.ndarray:
    """Interior edge weights of the symmetric factor ``K``."""
    _check_weight(a)
    if operator == WEIGHTED:
        return np.ones(a.grid.n - 1)
    if operator == STABILIZER:
        f = 1.0 / a.values
        return f[:-1] * f[1:] / logmean(f[:-1], f[1:])
    raise ValueError(f"unknown operator {operator!r}")


def assemble_weighted_operator(a: GridFunction, grid: Grid | None = None) -> TridiagonalOperator:
    """Zero-flux discretization of ``y -> (a y)_xx`` with ``(a y)_x = 0`` at both ends."""
    _check_weight(a)
    grid = grid or a.grid
    av = a.values
    return flux_operator(av[:-1], av[1:], grid.h)


def _symmetric_factor(a: GridFunction, operator: str):
    c = edge_conductance(a, operator)
    h2 = a.grid.h**2
    av = a.values
    diag = np.zeros(a.grid.n)
    diag[:-1] -= c * av[:-1]
    diag[1:] -= c * av[1:]
    off = c * np.sqrt(av[:-1] * av[1:])
    return diag / h2, off / h2


@dataclass(frozen=True, eq=False)
class SpectralReport:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    principal_vector: GridFunction

    @property
    def gap(self) -> float:
        return float(abs(self.eigenvalues[1]))


def spectrum(a: GridFunction, k: int | None = None, operator: str = WEIGHTED) -> SpectralReport:
    """Leading ``k`` eigenpairs (descending) of the discrete zero-flux operator.

    Parameters
    ----------
    a : GridFunction
        Strictly positive cell weight, ``1/f`` for target density ``f``.
    k : int, optional
        Number of eigenvalues, counted from the top. Default: all.
    operator : {"weighted", "stabilizer"}
        ``"weighted"`` for ``(a y)_xx``, ``"stabilizer"`` for the exponentially
        fitted ``y_xx - ((f_x/f) y)_x``.

    Returns
    -------
    SpectralReport
        Eigenvalues sorted descending, the matching eigenvectors of the
        nonsymmetric operator (columns), and the principal vector normalized
        to unit mass and positive sign.
    """
    n = a.grid.n
    k = n if k is None else int(k)
    if not 2 <= k <= n:
        raise ValueError(f"k must lie in [2, {n}]")
    diag, off = _symmetric_factor(a, operator)
    try:
        w, q = eigh_tridiagonal(diag, off, select="i", select_range=(n - k, n - 1))
    except np.linalg.LinAlgError as exc:
        raise RuntimeError("tridiagonal eigensolver did not converge") from exc
    order = np.argsort(w)[::-1]
    w, q = w[order], q[:, order]
    vecs = q / np.sqrt(a.values)[:, None]
    principal = vecs[:, 0] * np.sign(vecs[:, 0].sum())
    principal = principal / (a.grid.h * principal.sum())
    return SpectralReport(w, vecs, cell_function(a.grid, principal))


def symmetrized_matrix(a: GridFunction, operator: str = WEIGHTED) -> np.ndarray:
    diag, off = _symmetric_factor(a, operator)
    return np.diag(diag) + np.diag(off, 1) + np.diag(off, -1)


def spectral_gap(a: GridFunction, operator: str = WEIGHTED) -> float:
    gap = spectrum(a, 2, operator).gap
    if not gap > 0:
        raise RuntimeError("principal eigenvalue is not simple")
    return gap


def choose_alpha(gap: float, safety: float = 1.0) -> float:
    """Base feedback gain ``safety / gap``; ``safety >= 1`` keeps the drift bounded."""
    if not gap > 0:
        raise ValueError("spectral gap must be positive")
    if safety < 1:
        raise ValueError("safety factor must be at least 1")
    return safety / gap


# --------------------------------------------------------------------------
# Boundary conditions of the two operator forms
# --------------------------------------------------------------------------


def boundary_fluxes(u: np.ndarray, f: GridFunction) -> tuple[np.ndarray, np.ndarray]:
    """Discrete boundary fluxes of ``u`` for both operator forms.

    Returns ``((a u)_x, u_x - (f_x/f) u)`` evaluated on the first and last
    interior edges, with ``a = 1/f``, centered differences and edge means.
    """
    fv = f.values
    h = f.grid.h
    idx = np.array([[0, 1], [-2, -1]])
    u = np.asarray(u, dtype=float)
    uf, ff = u[idx], fv[idx]
    weighted = (uf[:, 1] / ff[:, 1] - uf[:, 0] / ff[:, 0]) / h
    log_drift = (ff[:, 1] - ff[:, 0]) / h / ff.mean(axis=1)
    drift_form = (uf[:, 1] - uf[:, 0]) / h - log_drift * uf.mean(axis=1)
    return weighted, drift_form


def bc_domain_equivalence_check(f: GridFunction, test_vectors=None, rtol: float = 1e-10, seed: int = 0) -> bool:
    """True iff both boundary-flux conditions accept and reject the same vectors.

    Default test vectors: ``f``, constants, random vectors, and random vectors
    corrected at their end cells to satisfy either form of the condition.
    """
    _check_weight(f)
    fv = f.values
    if test_vectors is None:
        rng = np.random.default_rng(seed)
        test_vectors = [fv, np.ones_like(fv)]
        for _ in range(8):
            u = rng.uniform(0.5, 2.0, size=fv.shape)
            test_vectors.append(u)
            w = u.copy()
            # (a u)_x = 0 at both ends
            w[0] = fv[0] * w[1] / fv[1]
            w[-1] = fv[-1] * w[-2] / fv[-2]
            test_vectors.append(w)
            z = u.copy()
            # u_x - (f_x/f) u = 0 at both ends, solved for the end cell
            h = f.grid.h
            for end, inner in ((0, 1), (-1, -2)):
                s = 1.0 if end == 0 else -1.0
                g = s * (fv[inner] - fv[end]) / h / (0.5 * (fv[inner] + fv[end]))
                # s (z_inner - z_end)/h = g (z_inner + z_end)/2
                z[end] = z[inner] * (s / h - g / 2) / (s / h + g / 2)
            test_vectors.append(z)
    for u in test_vectors:
        u = np.asarray(u, dtype=float)
        weighted, drift_form = boundary_fluxes(u, f)
        h = f.grid.h
        scale_w = np.abs(u).max() / fv.min() / h
        scale_d = np.abs(u).max() / h
        ok_w = np.all(np.abs(weighted) <= rtol * scale_w)
        ok_d = np.all(np.abs(drift_form) <= rtol * scale_d)
        if ok_w != ok_d:
            return False
    return True
