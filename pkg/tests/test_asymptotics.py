import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from chemotax.asymptotics import (
    limit_residual,
    solve_limit_linear,
    spike_metrics,
    state_at_chi,
    step_exclusion_check,
    step_profile,
    sweep_chi,
)
from chemotax.grid import Grid, StateField
from chemotax.steady import ContinuationOptions, continue_branch, discrete_bifurcation_value, residual

from conftest import make_params


@pytest.fixture
def g200():
    return Grid(200, math.pi)


def test_step_profile_node_on_jump(g200):
    u = step_profile(g200, 1.0, math.pi / 2)
    assert u[0] == 1.0 and u[100] == 0.5 and u[-1] == 0.0


def test_spike_metrics_of_step(g200, base_params):
    m = spike_metrics(StateField(step_profile(g200, 1.0, math.pi / 2, 2.0), np.ones(201)), base_params, g200)
    assert m.peak_ratio == 2.0
    assert m.half_width == pytest.approx(math.pi / 2)
    assert m.mass == pytest.approx(math.pi)
    assert m.tail_sup == 1.0  # the node on L/2 carries the midpoint value
    assert not m.flagged


def test_spike_metrics_flat_and_reflected(g200, base_params):
    flat = spike_metrics(StateField.constant(g200, 1.0, 1.0), base_params, g200)
    assert flat.half_width == pytest.approx(math.pi) and flat.peak_ratio == 1.0
    rising = StateField(1.0 + 0.5 * g200.nodes / math.pi, np.ones(201))
    m = spike_metrics(rising, base_params, g200)
    assert m.reflected and m.flagged and m.peak_ratio == 1.5


@settings(max_examples=20)
@given(st.floats(0.11 * math.pi, 0.89 * math.pi))
def test_step_exclusion_flags_synthetic_steps(x0):
    g = Grid(200, math.pi)
    p = make_params()
    rep = step_exclusion_check(StateField(step_profile(g, 1.0, x0), np.ones(201)), p, g)
    assert rep.flagged
    assert rep.breakpoint == pytest.approx(x0, rel=0.02)


def test_step_exclusion_passes_constant_and_spike(g200, base_params):
    assert not step_exclusion_check(StateField.constant(g200, 1.0, 1.0), base_params, g200).flagged
    spike = StateField(2.0 * np.exp(-((g200.nodes / 0.2) ** 2)), np.ones(201))
    assert not step_exclusion_check(spike, base_params, g200).flagged


def test_state_at_chi_is_converged(base_params):
    g = Grid(100, math.pi)
    br = continue_branch(base_params, g, 1, ContinuationOptions(chi_max=8.0))
    st_ = state_at_chi(br, 6.0, base_params, g, ContinuationOptions(chi_max=8.0).newton)
    assert np.max(np.abs(residual(st_, base_params.with_chi(6.0), g))) <= 1e-9
    assert state_at_chi(br, 50.0, base_params, g, ContinuationOptions(chi_max=8.0).newton) is None


def test_sweep_below_threshold_gives_constant(base_params):
    g = Grid(100, math.pi)
    res = sweep_chi(base_params, g, 1, [1.0, 2.0, 3.0])
    assert res.completed and len(res) == 3
    assert all(r.constant and r.metrics.peak_ratio == 1.0 for r in res.rows)


def test_sweep_along_branch(base_params):
    g = Grid(100, math.pi)
    sched = np.geomspace(4.5, 30.0, 6)
    res = sweep_chi(base_params, g, 1, sched)
    assert res.completed
    chis = [c for c, _ in res]
    assert chis == list(sched)
    masses = [m.mass for _, m in res]
    assert all(m <= math.pi * (1 + 1e-8) for m in masses)
    assert masses == sorted(masses, reverse=True)


def test_sweep_from_start_state(base_params):
    g = Grid(100, math.pi)
    br = continue_branch(base_params, g, 1, ContinuationOptions(chi_max=10.0))
    start = state_at_chi(br, 10.0, base_params, g, ContinuationOptions(chi_max=10.0).newton)
    res = sweep_chi(base_params, g, 1, [10.0, 14.0, 20.0], start=start)
    assert res.completed and len(res) == 3


def test_sweep_schedule_must_increase(base_params, grid64):
    with pytest.raises(ValueError):
        sweep_chi(base_params, grid64, 1, [3.0, 2.0])


def test_sweep_reports_partial_results():
    # the D1 = 0.05 first branch closes on itself below chi = 3.2
    p = make_params(d1=0.05)
    g = Grid(200, math.pi)
    chi1 = discrete_bifurcation_value(p, g, 1)
    res = sweep_chi(p, g, 1, [chi1 * 1.01, 2.5, 10.0], opts=ContinuationOptions(chi_max=10.0, ds_max=0.05))
    assert not res.completed
    assert len(res) == 2 and "10" in res.reason


def test_limit_solution_constant_cases(g200, base_params):
    sol = solve_limit_linear(0.0, None, base_params, g200)
    assert np.all(sol.state.u == 0.5) and sol.residual_norm == 0.0
    for a in (0.1, 1.5):
        sol = solve_limit_linear(a, math.pi, base_params, g200)
        assert sol.residual_norm <= 1e-8
        assert sol.mass == pytest.approx(math.pi, rel=1e-10)


def test_limit_residual_detects_nonsolution(g200, base_params):
    s = StateField(1.0 + 0.1 * g200.cosine(1), np.ones(201))
    assert limit_residual(s, 1.0, base_params, g200) > 1e-3
    with pytest.raises(ValueError):
        solve_limit_linear(-1.0, None, base_params, g200)
