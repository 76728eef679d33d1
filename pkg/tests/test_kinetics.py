import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from chemotax.kinetics import (
    Family,
    KineticsError,
    ModelParams,
    custom_kinetics,
    linear_kinetics,
    nondimensionalize,
    validate_conditions,
)

pos = st.floats(min_value=1e-3, max_value=1e3, allow_nan=False)


@given(pos, st.floats(0, 10), st.floats(0, 10))
def test_linear_family_higher_derivatives_vanish(beta, u, v):
    k = linear_kinetics(beta)
    for f in (k.phi_uu, k.phi_uv, k.phi_vv):
        assert f(np.array(u), np.array(v)) == 0
    assert k.d2h(np.array(u)) == 0
    assert k.d3h(np.array(u)) == 0
    assert k.phi(np.array(u), np.array(v)) == u
    assert k.h(np.array(u)) == pytest.approx(beta * u)


@given(pos, pos, pos)
def test_linear_conditions_pass(beta, umax, vmax):
    assert validate_conditions(linear_kinetics(beta), umax, vmax).all_passed


def test_linear_rejects_nonpositive_beta():
    with pytest.raises(KineticsError):
        linear_kinetics(0.0)


def _custom(**over):
    kw = dict(
        phi=lambda u, v: u / (1 + v),
        phi_u=lambda u, v: 1 / (1 + v),
        phi_v=lambda u, v: -u / (1 + v) ** 2,
        phi_uu=lambda u, v: 0 * u,
        phi_uv=lambda u, v: -1 / (1 + v) ** 2,
        phi_vv=lambda u, v: 2 * u / (1 + v) ** 3,
        h=lambda u: u / (1 + u),
        dh=lambda u: 1 / (1 + u) ** 2,
        d2h=lambda u: -2 / (1 + u) ** 3,
        d3h=lambda u: 6 / (1 + u) ** 4,
        bound_c1=1.0,
        bound_c2=1.0,
    )
    kw.update(over)
    return custom_kinetics(**kw)


def test_custom_kinetics_consistent_and_valid():
    spec = _custom()
    assert spec.family is Family.CUSTOM
    assert validate_conditions(spec, 5.0, 5.0, samples=41).all_passed


def test_custom_kinetics_bad_derivative_rejected():
    with pytest.raises(KineticsError, match="phi_v"):
        _custom(phi_v=lambda u, v: u / (1 + v) ** 2)


def test_custom_condition_failure_is_reported_not_raised():
    spec = _custom(phi=lambda u, v: u * (1 + v), phi_u=lambda u, v: 1 + v, phi_v=lambda u, v: u,
                   phi_uv=lambda u, v: 1 + 0 * u, phi_vv=lambda u, v: 0 * u)
    report = validate_conditions(spec, 2.0, 2.0, samples=21)
    assert not report["5"].passed


@given(pos, pos, pos)
def test_nondimensionalize_identity_scaling(d1, chi, d2):
    p = nondimensionalize(d1, chi, d2, theta=2.0, mu=1.0, alpha=1.0, kinetics_raw=linear_kinetics(1.0))
    assert (p.d1, p.chi, p.d2, p.ubar) == (d1, chi, d2, 2.0)
    q = nondimensionalize(p.d1, p.chi, p.d2, theta=p.ubar, mu=1.0, alpha=1.0, kinetics_raw=p.kinetics)
    assert q == p


def test_nondimensionalize_scales():
    p = nondimensionalize(2.0, 6.0, 4.0, theta=3.0, mu=2.0, alpha=4.0, kinetics_raw=linear_kinetics(2.0))
    assert (p.d1, p.chi, p.d2, p.ubar) == (1.0, 3.0, 1.0, 1.5)
    assert p.kinetics.beta == pytest.approx(0.5)


@pytest.mark.parametrize("field", ["d1", "d2", "ubar", "length"])
def test_model_params_positivity(field):
    kw = dict(d1=1.0, d2=1.0, chi=1.0, ubar=1.0, length=math.pi, kinetics=linear_kinetics(1.0))
    kw[field] = -1.0
    with pytest.raises(KineticsError, match=field):
        ModelParams(**kw)


def test_vbar_and_with_helpers():
    p = ModelParams(1.0, 1.0, 2.0, 3.0, 1.0, linear_kinetics(2.0))
    assert p.vbar == 6.0
    assert p.with_chi(5.0).chi == 5.0
    assert p.with_d1(0.5).d1 == 0.5
