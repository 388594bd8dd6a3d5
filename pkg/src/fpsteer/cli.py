"""Scenario runner: ``fpsteer {run,spectrum,particles,convergence,replay} <config.json>``.

A scenario is a single flat JSON object. Outputs go to
``$FPSTEER_OUT/<name>/`` (default root ``./fpsteer_out``). The exit status is
0 when every audit passes, 1 when an audit fails and 2 when the config cannot
be parsed.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import grid as gr
from .control import (
    SteerConfig,
    drift_sup_norm,
    euler_mascheroni_bound_audit,
    gradient_log_drift,
    replay,
    steer,
)
from .grid import DensitySpec, Grid, coarsen, project
from .particles import consistency_error, empirical_density, simulate
from .pde import CRANK_NICOLSON, DriftField, Trajectory, solve
from .spectral import STABILIZER, WEIGHTED, spectral_gap, spectrum

SCHEMA = 1
MODES = ("stabilize", "steer", "spectrum", "particles", "convergence", "replay")
MASS_TOL = 1e-12


class ScenarioError(ValueError):
    pass


@dataclass
class Scenario:
    name: str
    mode: str
    y0_spec: str = "uniform"
    f_spec: str = "uniform"
    n: int = 200
    T: float = 1.0
    dt: float = 1e-3
    seed: int = 0
    steer_config: SteerConfig = field(default_factory=SteerConfig)
    # stabilize
    fit_window: tuple | None = None
    startup_steps: int = 4
    # spectrum
    k: int = 10
    operator: str = WEIGHTED
    # particles
    particles_n: int = 100_000
    particles_dt: float | None = None
    snapshots: tuple = ()
    bins: int = 50
    # convergence
    ns: tuple = ()
    dts: tuple = ()
    # audits and output
    max_terminal_error: float | None = None
    csv_rows: int = 201

    @classmethod
    def from_dict(cls, d: dict) -> Scenario:
        if not isinstance(d, dict):
            raise ScenarioError("config must be a JSON object")
        d = dict(d)
        steer_keys = {f.name for f in fields(SteerConfig)} - {"dt"}
        own = {f.name for f in fields(cls)} - {"steer_config"}
        steer_kw = {k: d.pop(k) for k in list(d) if k in steer_keys and k not in own}
        unknown = set(d) - own
        if unknown:
            raise ScenarioError(f"unknown config keys: {sorted(unknown)}")
        for key in ("name", "mode"):
            if key not in d:
                raise ScenarioError(f"missing required key {key!r}")
        for key in ("snapshots", "ns", "dts", "fit_window"):
            if d.get(key) is not None:
                d[key] = tuple(d[key])
        try:
            sc = cls(**d)
            sc.steer_config = SteerConfig(dt=sc.dt, **steer_kw)
        except (TypeError, ValueError) as exc:
            raise ScenarioError(str(exc)) from exc
        sc.validate()
        return sc

    def validate(self):
        if self.mode not in MODES:
            raise ScenarioError(f"unknown mode {self.mode!r}")
        if not isinstance(self.name, str) or not self.name or "/" in self.name:
            raise ScenarioError("name must be a non-empty string without '/'")
        for spec in (self.y0_spec, self.f_spec):
            try:
                DensitySpec.parse(spec)
            except (ValueError, AttributeError) as exc:
                raise ScenarioError(str(exc)) from exc
        if not self.T > 0 or not self.dt > 0:
            raise ScenarioError("T and dt must be positive")
        try:
            Grid(self.n)
        except ValueError as exc:
            raise ScenarioError(str(exc)) from exc
        if self.mode == "convergence" and max(len(self.ns), len(self.dts)) < 3:
            raise ScenarioError("convergence study needs at least 3 resolutions")

    @property
    def grid(self) -> Grid:
        return Grid(self.n)

    def densities(self, grid: Grid | None = None):
        grid = grid or self.grid
        return project(self.y0_spec, grid, True), project(self.f_spec, grid, True)


def load_scenario(path) -> Scenario:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ScenarioError(f"cannot read {path}: {exc}") from exc
    return Scenario.from_dict(data)


def output_dir(sc: Scenario) -> Path:
    root = Path(os.environ.get("FPSTEER_OUT", "fpsteer_out"))
    out = root / sc.name
    out.mkdir(parents=True, exist_ok=True)
    return out


# --------------------------------------------------------------------------
# Helpers
# --------------------------------------------------------------------------


def _thin(tr: Trajectory, rows: int) -> Trajectory:
    stride = max(1, math.ceil((len(tr.times) - 1) / max(rows - 1, 1)))
    idx = np.unique(np.r_[np.arange(0, len(tr.times), stride), len(tr.times) - 1])
    return Trajectory(tr.grid, tr.times[idx], tr.values[idx], tr.drift_log)


def fitted_decay_rate(times, errors, window) -> float:
    t0, t1 = window
    keep = (times >= t0) & (times <= t1) & (errors > 0)
    if keep.sum() < 2:
        return float("nan")
    return float(-np.polyfit(times[keep], np.log(errors[keep]), 1)[0])


def _clean(obj):
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_report(out: Path, sc: Scenario, metrics: dict, audits: dict):
    payload = {"schema": SCHEMA, "scenario": sc.name, "mode": sc.mode, "metrics": metrics, "audits": audits}
    text = json.dumps(_clean(payload), indent=2, sort_keys=True) + "\n"
    (out / "metrics.json").write_text(text, encoding="utf-8")
    lines = [f"scenario {sc.name} ({sc.mode})"]
    lines += [f"  {k} = {v}" for k, v in sorted(_clean(metrics).items()) if not isinstance(v, list)]
    lines += [f"  audit {k}: {'pass' if v else 'FAIL'}" for k, v in sorted(audits.items())]
    (out / "summary.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return 0 if all(audits.values()) else 1


def _trajectory_metrics(tr: Trajectory, f) -> dict:
    err = tr.l2_distance(f)
    return {
        "terminal_l2_error": err[-1],
        "relative_terminal_error": err[-1] / gr.norm(f),
        "terminal_error": err[-1] / gr.norm(f),
        "min_density": tr.values.min(),
        "mass_drift": np.abs(tr.masses() - 1).max(),
    }


# --------------------------------------------------------------------------
# Modes
# --------------------------------------------------------------------------


def run_stabilize(sc: Scenario, out: Path) -> int:
    y0, f = sc.densities()
    drift = DriftField.constant(gradient_log_drift(f))
    tr = solve(y0, drift, sc.T, sc.dt, CRANK_NICOLSON, startup_steps=sc.startup_steps)
    a = f.with_values(1 / f.values)
    gap = spectral_gap(a, STABILIZER)
    window = sc.fit_window or (sc.T / 6, 5 * sc.T / 6)
    err = tr.l2_distance(f)
    rate = fitted_decay_rate(tr.times, err, window)
    metrics = _trajectory_metrics(tr, f) | {
        "drift_sup_norm": drift_sup_norm(drift),
        "fitted_rate": rate,
        "spectral_gap": gap,
        "weighted_gap": spectral_gap(a, WEIGHTED),
    }
    audits = {
        "mass": metrics["mass_drift"] <= MASS_TOL,
        "positivity": y0.min() <= 0 or metrics["min_density"] > 0,
    }
    if err[0] > 1e-6:
        audits["rate"] = abs(rate - gap) <= 0.05 * gap
    _thin(tr, sc.csv_rows).to_csv(out / "trajectory.csv")
    drift.to_csv(out / "drift.csv", end=sc.T)
    return write_report(out, sc, metrics, audits)


def _steer(sc: Scenario):
    y0, f = sc.densities()
    return y0, f, steer(y0, f, sc.T, sc.steer_config)


def _steer_metrics(res, f) -> tuple[dict, dict]:
    tr = res.trajectory
    audit = euler_mascheroni_bound_audit(res.schedule, res.envelope)
    metrics = _trajectory_metrics(tr, f) | {
        "drift_sup_norm": drift_sup_norm(res.drift),
        "spectral_gap": res.gap,
        "alpha": res.schedule.alpha,
        "m_stop": res.m_stop,
        "floor_activations": res.floor_activations,
        "envelope_growth_exponent": audit.growth_exponent,
        "interval_sup": res.interval_sup,
        "envelope": res.envelope,
    }
    audits = {
        "mass": metrics["mass_drift"] <= MASS_TOL,
        "positivity": metrics["min_density"] > 0 or tr.values[0].min() <= 0,
        "drift_bounded": audit.bounded,
        "floor_inactive": res.floor_activations == 0,
    }
    return metrics, audits


def run_steer(sc: Scenario, out: Path) -> int:
    _, f, res = _steer(sc)
    metrics, audits = _steer_metrics(res, f)
    if sc.max_terminal_error is not None:
        audits["terminal_error"] = metrics["relative_terminal_error"] <= sc.max_terminal_error
    _thin(res.trajectory, sc.csv_rows).to_csv(out / "trajectory.csv")
    res.drift.to_csv(out / "drift.csv")
    return write_report(out, sc, metrics, audits)


def run_replay(sc: Scenario, out: Path, tol: float = 5e-3) -> int:
    y0, f, res = _steer(sc)
    metrics, audits = _steer_metrics(res, f)
    rp = replay(res, y0)
    if rp.times.shape != res.trajectory.times.shape:
        raise RuntimeError("replay time grid differs from the closed-loop run")
    diff = np.sqrt(rp.grid.h * np.sum((rp.values - res.trajectory.values) ** 2, axis=1))
    metrics["replay_max_l2"] = diff.max()
    audits["replay"] = diff.max() <= tol
    _thin(rp, sc.csv_rows).to_csv(out / "trajectory.csv")
    res.drift.to_csv(out / "drift.csv")
    return write_report(out, sc, metrics, audits)


def spectrum_rows(sc: Scenario):
    _, f = sc.densities()
    rep = spectrum(f.with_values(1 / f.values), min(sc.k, sc.n), sc.operator)
    return rep


def run_spectrum(sc: Scenario, out: Path, stream=None) -> int:
    rep = spectrum_rows(sc)
    lines = ["index,eigenvalue"] + [f"{i},{lam:.17g}" for i, lam in enumerate(rep.eigenvalues)]
    text = "\n".join(lines) + "\n"
    (out / "spectrum.csv").write_text(text, encoding="utf-8")
    if stream is not None:
        stream.write(text + f"gap,{rep.gap:.17g}\n")
    metrics = {"spectral_gap": rep.gap, "principal_eigenvalue": rep.eigenvalues[0], "operator": sc.operator}
    audits = {"principal_zero": abs(rep.eigenvalues[0]) <= 1e-8, "gap_positive": rep.gap > 0}
    return write_report(out, sc, metrics, audits)


def run_particles(sc: Scenario, out: Path) -> int:
    y0, f = sc.densities()
    drift = DriftField.constant(gradient_log_drift(f))
    snaps = sorted(set(sc.snapshots) | {sc.T})
    ens = simulate(sc.particles_n, drift, sc.particles_dt or sc.dt, sc.T, sc.seed, y0=y0, snapshots=snaps)
    tr = solve(y0, drift, sc.T, sc.dt, CRANK_NICOLSON, startup_steps=sc.startup_steps)
    rows, errors = [], []
    coarse = sc.n % sc.bins == 0
    for e in ens:
        hist = empirical_density(e, sc.bins)
        counts = np.rint(hist.values * e.N * hist.grid.h).astype(int)
        for x, c, d in zip(hist.grid.centers, counts, hist.values):
            rows.append(f"{e.time:.17g},{x:.17g},{c},{d:.17g}")
        if coarse:
            errors.append(consistency_error(e, coarsen(tr.state_at(e.time), sc.bins)))
    (out / "particles.csv").write_text("t,x,count,density\n" + "\n".join(rows) + "\n", encoding="utf-8")
    metrics = {"snapshots": [e.time for e in ens], "l1_error": errors, "N": sc.particles_n}
    audits = {"in_domain": all(np.all((e.positions >= 0) & (e.positions <= 1)) for e in ens)}
    return write_report(out, sc, metrics, audits)


def convergence_table(sc: Scenario) -> list[dict]:
    """Self-convergence of the stabilizer scenario under grid and/or step refinement.

    Rows carry ``l2_error`` against the finest run (restricted by cell
    averaging) and an order estimate from successive differences.
    """
    ns = list(sc.ns) or [sc.n]
    dts = list(sc.dts) or [sc.dt]
    levels = max(len(ns), len(dts))
    if levels < 3:
        raise ScenarioError("convergence study needs at least 3 resolutions")
    if len(ns) == 1:
        ns = ns * levels
    if len(dts) == 1:
        dts = dts * levels
    if len(ns) != len(dts):
        raise ScenarioError("ns and dts must have equal length or length one")
    sols = []
    for n, dt in zip(ns, dts):
        y0, f = sc.densities(Grid(n))
        drift = DriftField.constant(gradient_log_drift(f))
        sols.append(solve(y0, drift, sc.T, dt, CRANK_NICOLSON, startup_steps=0).final)
    finest = sols[-1]

    def dist(k, other):
        return gr.norm(sols[k] - coarsen(other, ns[k]))

    diffs = [dist(k, sols[k + 1]) for k in range(levels - 1)]
    rows = []
    for k in range(levels):
        order = None
        if k + 2 < levels:
            ratio = ns[k + 1] / ns[k] if ns[k + 1] != ns[k] else dts[k] / dts[k + 1]
            order = math.log(diffs[k] / diffs[k + 1]) / math.log(ratio)
        rows.append({"n": ns[k], "dt": dts[k], "l2_error": dist(k, finest), "order_estimate": order})
    return rows


def _write_convergence(sc: Scenario, out: Path, rows, min_order: float = 1.9) -> int:
    lines = ["n,dt,l2_error,order_estimate"]
    for r in rows:
        order = "" if r["order_estimate"] is None else f"{r['order_estimate']:.17g}"
        lines.append(f"{r['n']},{r['dt']:.17g},{r['l2_error']:.17g},{order}")
    (out / "convergence.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    orders = [r["order_estimate"] for r in rows if r["order_estimate"] is not None]
    metrics = {"orders": orders, "min_order": min(orders)}
    audits = {"order": min(orders) >= min_order}
    return write_report(out, sc, metrics, audits)


def run_convergence(sc: Scenario, out: Path) -> int:
    return _write_convergence(sc, out, convergence_table(sc))


def convergence_study(config_path) -> list[dict]:
    """Run the convergence table of a scenario file and write ``convergence.csv``."""
    sc = load_scenario(config_path)
    rows = convergence_table(sc)
    _write_convergence(sc, output_dir(sc), rows)
    return rows


RUNNERS = {
    "stabilize": run_stabilize,
    "steer": run_steer,
    "replay": run_replay,
    "spectrum": run_spectrum,
    "particles": run_particles,
    "convergence": run_convergence,
}


def run_scenario(config_path, mode: str | None = None, overrides: dict | None = None, stream=None) -> int:
    """Run one scenario file; returns the process exit status."""
    try:
        with open(config_path, encoding="utf-8") as fh:
            data = json.load(fh)
        if not isinstance(data, dict):
            raise ScenarioError("config must be a JSON object")
        if mode is not None:
            data["mode"] = mode
        data.update({k: v for k, v in (overrides or {}).items() if v is not None})
        sc = Scenario.from_dict(data)
    except (OSError, json.JSONDecodeError, ScenarioError) as exc:
        print(f"fpsteer: {exc}", file=sys.stderr)
        return 2
    out = output_dir(sc)
    if sc.mode == "spectrum":
        return run_spectrum(sc, out, stream)
    return RUNNERS[sc.mode](sc, out)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="fpsteer", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("run", "spectrum", "convergence", "replay"):
        sub.add_parser(name).add_argument("config")
    p = sub.add_parser("particles")
    p.add_argument("config")
    p.add_argument("--n", type=int, dest="particles_n")
    p.add_argument("--dt", type=float, dest="particles_dt")
    p.add_argument("--seed", type=int)
    p.add_argument("--snapshots", type=lambda s: [float(t) for t in s.split(",") if t])
    args = parser.parse_args(argv)
    mode = None if args.command == "run" else args.command
    overrides = {}
    if args.command == "particles":
        overrides = {k: getattr(args, k) for k in ("particles_n", "particles_dt", "seed", "snapshots")}
    return run_scenario(args.config, mode, overrides, stream=sys.stdout)


if __name__ == "__main__":
    sys.exit(main())
