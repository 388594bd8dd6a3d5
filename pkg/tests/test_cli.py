import json
import subprocess
import sys

import numpy as np
import pytest

from fpsteer.cli import Scenario, ScenarioError, convergence_study, convergence_table, main, run_scenario

STABILIZE = {
    "name": "stab",
    "mode": "stabilize",
    "y0_spec": "step:0.2:1.8:0.5",
    "f_spec": "sine:0.5:1",
    "n": 400,
    "T": 3.0,
    "dt": 1e-3,
}
STEER = {
    "name": "steer",
    "mode": "steer",
    "y0_spec": "step:0.2:1.8:0.5",
    "f_spec": "sine:0.5:1",
    "n": 400,
    "T": 2.0,
    "dt": 1e-3,
    "epsilon": 0.2,
    "m_max": 40,
}


@pytest.fixture
def out(tmp_path, monkeypatch):
    root = tmp_path / "out"
    monkeypatch.setenv("FPSTEER_OUT", str(root))
    return root


def write(tmp_path, cfg, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return path


def metrics(out, name):
    return json.loads((out / name / "metrics.json").read_text())


def test_stabilize_scenario(tmp_path, out):
    cfg = write(tmp_path, STABILIZE)
    assert run_scenario(cfg) == 0
    m = metrics(out, "stab")
    assert m["schema"] == 1
    met = m["metrics"]
    for key in ("terminal_l2_error", "drift_sup_norm", "min_density", "mass_drift", "fitted_rate", "spectral_gap"):
        assert key in met
    assert abs(met["fitted_rate"] - met["spectral_gap"]) <= 0.05 * met["spectral_gap"]
    assert met["mass_drift"] <= 1e-12
    head = (out / "stab" / "trajectory.csv").read_text().splitlines()[0]
    assert head == "t,x,y"
    assert (out / "stab" / "drift.csv").read_text().startswith("t_start,t_end,x_edge,v\n")
    assert "audit rate: pass" in (out / "stab" / "summary.txt").read_text()


def test_outputs_are_reproducible(tmp_path, out):
    cfg = write(tmp_path, STABILIZE | {"T": 0.5})
    run_scenario(cfg)
    first = {p.name: p.read_bytes() for p in (out / "stab").iterdir()}
    run_scenario(cfg)
    assert first == {p.name: p.read_bytes() for p in (out / "stab").iterdir()}


def test_steer_scenario_reports_terminal_error(tmp_path, out, standard_run):
    assert run_scenario(write(tmp_path, STEER)) == 0
    met = metrics(out, "steer")["metrics"]
    assert met["terminal_error"] == pytest.approx(standard_run.relative_terminal_error, rel=1e-12)
    assert met["floor_activations"] == 0
    assert len(met["interval_sup"]) == 40


def test_steer_error_audit_sets_exit_status(tmp_path, out):
    cfg = STEER | {"n": 100, "m_max": 5, "max_terminal_error": 1e-12}
    assert run_scenario(write(tmp_path, cfg)) == 1
    assert metrics(out, "steer")["audits"]["terminal_error"] is False


def test_replay_scenario(tmp_path, out):
    assert run_scenario(write(tmp_path, STEER | {"name": "rp"}), mode="replay") == 0
    assert metrics(out, "rp")["metrics"]["replay_max_l2"] <= 5e-3


@pytest.mark.parametrize(
    "text",
    [
        "{not json",
        "[1, 2]",
        json.dumps({"name": "x"}),
        json.dumps(STABILIZE | {"mode": "dance"}),
        json.dumps(STABILIZE | {"f_spec": "banana"}),
        json.dumps(STABILIZE | {"colour": "red"}),
        json.dumps(STABILIZE | {"n": 2}),
        json.dumps(STABILIZE | {"mode": "convergence", "ns": [50, 100]}),
    ],
)
def test_parse_errors_exit_2_without_outputs(tmp_path, out, text, capsys):
    path = tmp_path / "bad.json"
    path.write_text(text)
    assert run_scenario(path) == 2
    assert not out.exists()
    assert "fpsteer:" in capsys.readouterr().err


def test_missing_file_exits_2(tmp_path, out):
    assert run_scenario(tmp_path / "nope.json") == 2


def test_spectrum_subcommand(tmp_path, out, capsys):
    cfg = write(tmp_path, {"name": "sp", "mode": "spectrum", "f_spec": "uniform", "n": 400, "k": 4})
    assert main(["spectrum", str(cfg)]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "index,eigenvalue"
    assert len(lines) == 6
    gap = float(lines[-1].split(",")[1])
    assert gap == pytest.approx(np.pi**2, rel=1e-3)
    assert (out / "sp" / "spectrum.csv").read_text().splitlines()[0] == "index,eigenvalue"


def test_particles_subcommand(tmp_path, out):
    cfg = write(tmp_path, {"name": "pt", "mode": "particles", "f_spec": "sine:0.5:1", "n": 100, "T": 0.5, "bins": 20})
    code = main(["particles", str(cfg), "--n", "4000", "--dt", "0.01", "--seed", "3", "--snapshots", "0.1,0.2"])
    assert code == 0
    rows = (out / "pt" / "particles.csv").read_text().splitlines()
    assert rows[0] == "t,x,count,density"
    data = np.array([r.split(",") for r in rows[1:]], dtype=float)
    assert sorted(set(data[:, 0])) == [0.1, 0.2, 0.5]
    for t in (0.1, 0.2, 0.5):
        assert data[data[:, 0] == t, 2].sum() == 4000
    met = metrics(out, "pt")["metrics"]
    assert met["N"] == 4000 and len(met["l1_error"]) == 3


def test_convergence_study_orders(tmp_path, out):
    base = {
        "name": "cx",
        "mode": "convergence",
        "y0_spec": "gaussian_bump:0.5:0.1",
        "f_spec": "sine:0.5:1",
        "T": 0.1,
        "dt": 1e-4,
        "ns": [50, 100, 200, 400],
    }
    rows = convergence_study(write(tmp_path, base))
    assert [r["n"] for r in rows] == [50, 100, 200, 400]
    assert min(r["order_estimate"] for r in rows[:2]) >= 1.9
    text = (out / "cx" / "convergence.csv").read_text().splitlines()
    assert text[0] == "n,dt,l2_error,order_estimate"
    assert len(text) == 5


def test_convergence_needs_three_resolutions():
    sc = Scenario("c", "stabilize", ns=(50, 100))
    with pytest.raises(ScenarioError):
        convergence_table(sc)


def test_module_entry_point(tmp_path, out):
    cfg = write(tmp_path, {"name": "sp", "mode": "spectrum", "n": 50, "k": 3})
    proc = subprocess.run(
        [sys.executable, "-m", "fpsteer", "run", str(cfg)],
        capture_output=True,
        text=True,
        env={"FPSTEER_OUT": str(out), "PATH": ""},
    )
    assert proc.returncode == 0, proc.stderr
    assert proc.stdout.splitlines()[-1].startswith("gap,")
