import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from chemotax.grid import Grid, StateField
from chemotax.timestep import (
    EvolutionConfig,
    Scheme,
    TimeStepError,
    Verdict,
    advection_dt_bound,
    eigenmode_growth_rate,
    evolve,
    fit_log_slope,
    probe_stability,
    random_perturbation,
    step,
)

from conftest import make_params


@pytest.mark.parametrize("scheme", list(Scheme))
def test_equilibria_are_fixed_points(scheme, grid64):
    p = make_params(chi=3.0)
    eq = StateField.constant(grid64, 1.0, 1.0)
    out = step(eq, p, grid64, 0.01, scheme)
    assert np.max(np.abs(out.u - 1.0)) <= 1e-14
    zero = StateField.constant(grid64, 0.0, 0.0)
    assert np.all(step(zero, p, grid64, 0.01, scheme).u == 0.0)


@settings(max_examples=15)
@given(st.integers(0, 10**6))
def test_schemes_agree_to_first_order(seed):
    g = Grid(40, math.pi)
    p = make_params(chi=2.0)
    pert = random_perturbation(g, seed)
    s = StateField(1.0 + 0.1 * pert.u, 1.0 + 0.1 * pert.v)
    dt = 1e-4
    a = step(s, p, g, dt, Scheme.SEMI_IMPLICIT)
    b = step(s, p, g, dt, Scheme.FULLY_IMPLICIT)
    change = np.max(np.abs(a.u - s.u))
    assert np.max(np.abs(a.u - b.u)) <= 0.05 * change + 1e-13


def test_semi_implicit_mass_balance():
    # trapezoid integral of u changes only by the explicit logistic term
    g = Grid(50, math.pi)
    p = make_params(chi=3.0)
    s = StateField(1.0 + 0.2 * g.cosine(1), 1.0 + 0.1 * g.cosine(2))
    dt = 1e-3
    out = step(s, p, g, dt)
    assert g.integrate(out.u) - g.integrate(s.u) == pytest.approx(dt * g.integrate((1.0 - s.u) * s.u), rel=1e-10)


def test_advection_bound_enforced(grid64):
    p = make_params(chi=50.0)
    s = StateField(np.ones(grid64.n_nodes), 1.0 + grid64.cosine(8))
    bound = advection_dt_bound(s, p, grid64)
    with pytest.raises(TimeStepError) as info:
        step(s, p, grid64, 2 * bound)
    assert info.value.suggested_dt == pytest.approx(bound)


def test_evolve_reduces_step_when_needed(grid64):
    p = make_params(chi=50.0)
    s = StateField(np.ones(grid64.n_nodes), 1.0 + grid64.cosine(8))
    bound = advection_dt_bound(s, p, grid64)
    traj = evolve(s, p, grid64, EvolutionConfig(dt=4 * bound, t_final=8 * bound))
    assert traj.dt_reductions >= 1
    assert traj.times[-1] == pytest.approx(8 * bound)


def test_evolution_config_validation():
    with pytest.raises(ValueError):
        EvolutionConfig(dt=0.0, t_final=1.0)
    with pytest.raises(ValueError):
        EvolutionConfig(dt=1.0, t_final=0.5)
    assert EvolutionConfig(dt=0.1, t_final=1.0, scheme="FullyImplicit").scheme is Scheme.FULLY_IMPLICIT


@given(st.integers(0, 10**6), st.integers(1, 4))
def test_random_perturbation_properties(seed, k):
    g = Grid(64, math.pi)
    p = random_perturbation(g, seed, exclude_k=k)
    assert max(np.max(np.abs(p.u)), np.max(np.abs(p.v))) == pytest.approx(1.0)
    assert abs(g.integrate(p.u)) < 1e-12
    assert abs(g.integrate(p.u * g.cosine(k))) < 1e-12
    assert np.array_equal(p.u, random_perturbation(g, seed, exclude_k=k).u)


def test_fit_log_slope_exact():
    t = np.linspace(0, 10, 101)
    assert fit_log_slope(t, 3.0 * np.exp(-0.7 * t)) == pytest.approx(-0.7, rel=1e-10)
    assert fit_log_slope(t[:3], np.ones(3)) == 0.0


def test_decay_rate_below_threshold():
    g = Grid(64, math.pi)
    p = make_params(chi=2.0)
    fitted, exact = eigenmode_growth_rate(p, g, 1, EvolutionConfig(dt=1e-3, t_final=20.0))
    assert fitted == pytest.approx(exact, rel=0.05)


def test_probe_on_stable_equilibrium():
    g = Grid(50, math.pi)
    p = make_params(chi=2.0)
    probe = probe_stability(StateField.constant(g, 1.0, 1.0), p, g,
                            EvolutionConfig(dt=0.01, t_final=30.0, perturb_eps=1e-4), k=None)
    assert probe.verdict is Verdict.DECAYED
    assert probe.growth_rate < -0.1
