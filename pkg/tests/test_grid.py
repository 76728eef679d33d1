import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from chemotax.grid import Grid, StateField


@given(st.integers(2, 400), st.floats(0.1, 50))
def test_weights_integrate_constants_exactly(n, length):
    g = Grid(n, length)
    assert g.integrate(np.ones(g.n_nodes)) == pytest.approx(length, rel=1e-13)
    assert g.nodes[-1] == pytest.approx(length)


@given(st.integers(4, 200), st.integers(1, 3))
def test_cosines_have_zero_mean(n, k):
    g = Grid(n, math.pi)
    assert abs(g.integrate(g.cosine(k))) < 1e-12


def test_laplacian_eigenvalue_limit():
    g = Grid(1000, math.pi)
    assert g.laplacian_eigenvalue(2) == pytest.approx(4.0, rel=1e-5)
    assert g.laplacian_eigenvalue(2) < 4.0


def test_state_vector_roundtrip():
    u, v = np.arange(5.0), -np.arange(5.0)
    s = StateField(u, v)
    z = s.to_vector()
    assert list(z[:4]) == [0, 0, 1, -1]
    back = StateField.from_vector(z)
    assert np.array_equal(back.u, u) and np.array_equal(back.v, v)
    assert np.array_equal(s.reflected().u, u[::-1])
