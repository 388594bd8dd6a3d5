import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.linalg import expm

from fpsteer.control import gradient_log_drift
from fpsteer.grid import Grid, cell_function, edge_function, mass, project
from fpsteer.pde import (
    BACKWARD_EULER,
    CRANK_NICOLSON,
    DriftField,
    TridiagonalOperator,
    assemble_fp_operator,
    bernoulli,
    heat_kernel_floor,
    solve,
    step,
)


def zero_drift(grid):
    return DriftField.constant(edge_function(grid, np.zeros(grid.n + 1)))


def test_bernoulli_values():
    assert bernoulli(0.0) == 1.0
    assert bernoulli(1.0) == pytest.approx(1 / (math.e - 1))
    z = np.linspace(-30, 30, 61)
    assert np.allclose(bernoulli(-z) - bernoulli(z), z, atol=1e-12)
    assert bernoulli(800.0) == pytest.approx(0.0)


def test_zero_drift_gives_neumann_laplacian():
    L = assemble_fp_operator(edge_function(Grid(4), np.zeros(5)))
    h2 = 0.25**2
    expected = np.array([[-1, 1, 0, 0], [1, -2, 1, 0], [0, 1, -2, 1], [0, 0, 1, -1]]) / h2
    assert np.allclose(L.to_dense(), expected)


def test_operator_rejects_cell_drift():
    with pytest.raises(ValueError):
        assemble_fp_operator(cell_function(Grid(4), np.zeros(4)))


def test_matched_drift_has_exact_kernel():
    g = Grid(200)
    for spec in ("sine:0.5:1", "gaussian_bump:0.3:0.2", "exp:2"):
        f = project(spec, g, normalized=True)
        L = assemble_fp_operator(gradient_log_drift(f))
        assert np.abs(L @ f.values).max() <= 1e-9 * np.abs(L.diag).max()


def test_fluxes_reproduce_operator():
    g = Grid(12)
    v = edge_function(g, np.r_[0, np.sin(np.arange(11)), 0])
    L = assemble_fp_operator(v)
    y = np.linspace(1, 2, 12)
    assert np.allclose(L.apply_conservative(y), L @ y)
    assert np.allclose(L.to_dense() @ y, L @ y)
    assert np.abs(L.column_sums()).max() < 1e-9


def test_step_examples():
    g = Grid(10)
    y = cell_function(g, np.linspace(0.5, 1.5, 10))
    zero = TridiagonalOperator(np.zeros(10), np.zeros(10), np.zeros(10))
    assert np.array_equal(step(y, zero, 0.1).values, y.values)
    L0 = assemble_fp_operator(edge_function(g, np.zeros(11)))
    one = cell_function(g, np.ones(10))
    for scheme in (BACKWARD_EULER, CRANK_NICOLSON):
        assert np.allclose(step(one, L0, 0.01, scheme).values, 1.0, atol=1e-14)
    f = project("sine:0.5:1", Grid(100), normalized=True)
    Lf = assemble_fp_operator(gradient_log_drift(f))
    assert np.abs(step(f, Lf, 0.01).values - f.values).max() <= 1e-12
    with pytest.raises(ValueError):
        step(one, L0, 0.0)


def test_crank_nicolson_matches_matrix_exponential():
    g = Grid(40)
    y0 = project("gaussian_bump:0.4:0.1", g, normalized=True)
    v = gradient_log_drift(project("sine:0.5:1", g, normalized=True))
    exact = expm(0.1 * assemble_fp_operator(v).to_dense()) @ y0.values
    errs = []
    for dt in (0.01, 0.005):
        tr = solve(y0, DriftField.constant(v), 0.1, dt, CRANK_NICOLSON)
        errs.append(np.sqrt(g.h * np.sum((tr.final.values - exact) ** 2)))
    assert errs[1] < errs[0]
    assert math.log2(errs[0] / errs[1]) == pytest.approx(2.0, abs=0.1)


def test_heat_flow_equilibrates_to_uniform():
    g = Grid(100)
    y0 = project("step:0.2:1.8:0.5", g, normalized=True)
    tr = solve(y0, zero_drift(g), 5.0, 1e-2, startup_steps=4)
    assert np.abs(tr.final.values - 1.0).max() <= 1e-6


def test_heat_flow_decays_like_first_neumann_mode():
    # the slowest discrete mode decays at (2/h^2)(1 - cos(pi h))
    g = Grid(100)
    y0 = project("step:0.2:1.8:0.5", g, normalized=True)
    tr = solve(y0, zero_drift(g), 0.5, 1e-3, startup_steps=4)
    err = tr.l2_distance(cell_function(g, np.ones(100)))
    keep = tr.times >= 0.2
    rate = -np.polyfit(tr.times[keep], np.log(err[keep]), 1)[0]
    assert rate == pytest.approx(2 / g.h**2 * (1 - math.cos(math.pi * g.h)), rel=1e-3)


def test_solve_stationary_target():
    g = Grid(100)
    f = project("sine:0.5:1", g, normalized=True)
    tr = solve(f, DriftField.constant(gradient_log_drift(f)), 1.0, 1e-2)
    assert tr.l2_distance(f).max() <= 1e-10


def test_solve_lands_on_breakpoints():
    g = Grid(20)
    z = np.zeros((3, 21))
    d = DriftField(g, [0.0, 0.0105, 0.05, 1.0], z)
    tr = solve(cell_function(g, np.ones(20)), d, 0.1, 0.01)
    assert np.any(np.isclose(tr.times, 0.0105, rtol=0, atol=1e-15))
    assert np.any(np.isclose(tr.times, 0.05, rtol=0, atol=1e-15))
    assert tr.times[-1] == 0.1
    assert np.all(np.diff(tr.times) <= 0.01 + 1e-15)
    assert tr.drift_log.breakpoints[-1] == 0.1 and len(tr.drift_log) == 3


def test_solve_uses_drift_active_at_step_start():
    # a drift switched on at t = 0.5 must leave the first half untouched
    g = Grid(20)
    one = cell_function(g, np.ones(20))
    v = np.r_[0, np.full(19, 5.0), 0]
    d = DriftField(g, [0.0, 0.5, 1.0], np.vstack([np.zeros(21), v]))
    tr = solve(one, d, 1.0, 0.05)
    assert np.allclose(tr.state_at(0.5).values, 1.0)
    assert not np.allclose(tr.final.values, 1.0)


def test_solve_input_checks():
    g = Grid(10)
    d = zero_drift(g)
    with pytest.raises(ValueError):
        solve(cell_function(g, np.r_[-1.0, np.full(9, 11 / 9)]), d, 1.0, 0.1)
    with pytest.raises(ValueError):
        solve(cell_function(g, 2 * np.ones(10)), d, 1.0, 0.1)
    short = DriftField(g, [0.0, 0.5], np.zeros(11))
    with pytest.raises(ValueError):
        solve(cell_function(g, np.ones(10)), short, 1.0, 0.1)
    late = DriftField(g, [0.1, 2.0], np.zeros(11))
    with pytest.raises(ValueError):
        solve(cell_function(g, np.ones(10)), late, 1.0, 0.1)


def test_drift_field_validation_and_lookup():
    g = Grid(4)
    with pytest.raises(ValueError):
        DriftField(g, [0.0, 1.0, 0.5], np.zeros((2, 5)))
    with pytest.raises(ValueError):
        DriftField(g, [0.0, 1.0], np.zeros((1, 4)))
    d = DriftField(g, [0.0, 1.0, 2.0], np.vstack([np.zeros(5), np.ones(5)]))
    assert d.interval_index(0.0) == 0 and d.interval_index(1.0) == 1
    assert d.at(1.5).values[2] == 1.0
    with pytest.raises(ValueError):
        d.at(2.0)
    cat = DriftField.concatenate([d, DriftField(g, [2.0, 3.0], np.ones(5))])
    assert len(cat) == 3 and cat.breakpoints[-1] == 3.0
    with pytest.raises(ValueError):
        DriftField.concatenate([d, DriftField(g, [2.5, 3.0], np.ones(5))])


def test_csv_exports(tmp_path):
    g = Grid(4)
    d = DriftField.constant(edge_function(g, np.arange(5.0)))
    d.to_csv(tmp_path / "drift.csv", end=2.0)
    rows = (tmp_path / "drift.csv").read_text().splitlines()
    assert rows[0] == "t_start,t_end,x_edge,v"
    assert rows[1].split(",") == ["0", "2", "0", "0"]
    tr = solve(cell_function(g, np.ones(4)), d, 0.1, 0.05)
    tr.to_csv(tmp_path / "traj.csv")
    data = np.loadtxt(tmp_path / "traj.csv", delimiter=",", skiprows=1)
    assert data.shape == (3 * 4, 3)
    assert np.array_equal(data[:, 2].reshape(3, 4), tr.values)


def test_heat_kernel_floor_examples():
    g = Grid(200)
    one = cell_function(g, np.ones(200))
    assert heat_kernel_floor(0.25, one) >= math.exp(-1) / math.sqrt(math.pi)
    floors = [heat_kernel_floor(t, one) for t in (1.0, 4.0, 16.0)]
    assert floors[0] > floors[1] > floors[2] > 0
    y0 = project("step:0:2:0.5", g, normalized=True)
    floor = heat_kernel_floor(0.1, y0)
    tr = solve(y0, zero_drift(g), 0.1, 1e-3, startup_steps=4)
    assert 0 < floor <= tr.final.min()
    with pytest.raises(ValueError):
        heat_kernel_floor(0.0, one)


@settings(max_examples=40, deadline=None)
@given(arrays(float, 15, elements=st.floats(-200, 200)))
def test_fp_operator_is_conservative_m_matrix(v_int):
    g = Grid(16)
    L = assemble_fp_operator(edge_function(g, np.r_[0, v_int, 0]))
    assert np.abs(L.column_sums()).max() <= 1e-9 * np.abs(L.diag).max()
    assert np.all(L.sub[1:] >= 0) and np.all(L.sup[:-1] >= 0) and np.all(L.diag <= 0)


@settings(max_examples=40, deadline=None)
@given(
    arrays(float, 15, elements=st.floats(-50, 50)),
    arrays(float, 16, elements=st.floats(0.0, 10.0)),
    st.floats(1e-4, 1.0),
)
def test_backward_euler_conserves_mass_and_sign(v_int, y, dt):
    g = Grid(16)
    y = y + 1e-3
    y0 = cell_function(g, y / (g.h * y.sum()))
    L = assemble_fp_operator(edge_function(g, np.r_[0, v_int, 0]))
    out = step(y0, L, dt, BACKWARD_EULER)
    assert abs(mass(out) - 1.0) <= 1e-13
    assert out.min() > 0


@pytest.mark.parametrize("y0_spec", ["step:0.2:1.8:0.5", "gaussian_bump:0.5:0.3", "uniform"])
def test_positivity_floor_under_stabilizer(y0_spec):
    g = Grid(200)
    f = project("sine:0.5:1", g, normalized=True)
    y0 = project(y0_spec, g, normalized=True)
    c = y0.min()
    for scheme in (BACKWARD_EULER, CRANK_NICOLSON):
        tr = solve(y0, DriftField.constant(gradient_log_drift(f)), 1.0, 1e-3, scheme, startup_steps=4)
        assert tr.values.min() >= 0.5 * c
        assert np.abs(tr.masses() - 1).max() <= 1e-12
