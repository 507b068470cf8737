import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ndlab import fd
from ndlab.grid import Grid, GridError

coef = st.floats(-2, 2, allow_nan=False)


def test_rejects_coarse_grid():
    with pytest.raises(GridError):
        Grid.cube(5)


def test_rejects_degenerate_interval():
    with pytest.raises(GridError):
        Grid([(0, 0), (0, 1), (0, 1)], [9, 9, 9])


def test_volume_weights_integrate_constant():
    g = Grid([(0, 2), (-1, 1), (0, 0.5)], [9, 11, 13])
    assert np.isclose(g.volume_weights.sum(), 2 * 2 * 0.5, rtol=1e-14)


def test_boundary_and_interior_partition_nodes():
    g = Grid.cube(10)
    b, i = set(g.boundary_index.tolist()), set(g.interior_index.tolist())
    assert not b & i
    assert len(b | i) == g.size


@given(a=coef, b=coef, c=coef, d=coef)
def test_laplacian_exact_on_quadratics(a, b, c, d):
    g = Grid.cube(9)
    X, Y, Z = g.coords
    u = a * X**2 + b * Y**2 + c * Z**2 + d * X * Y
    lap = fd.laplacian(u, g)
    inner = (slice(1, -1),) * 3
    assert np.allclose(lap[inner], 2 * (a + b + c), atol=1e-9)


@given(a=coef, b=coef, c=coef)
def test_gradient_exact_on_linears(a, b, c):
    g = Grid([(0, 1), (0, 2), (0, 1)], [9, 10, 11])
    X, Y, Z = g.coords
    gr = fd.gradient(a * X + b * Y + c * Z, g)
    for comp, val in zip(gr, (a, b, c)):
        assert np.allclose(comp, val, atol=1e-10)


def test_stiffness_symmetric_positive_semidefinite():
    g = Grid.cube(8)
    K = fd.stiffness(g).toarray()
    assert np.allclose(K, K.T, atol=1e-12)
    assert np.min(np.linalg.eigvalsh(K)) > -1e-9
    # constants are in the kernel
    assert np.max(np.abs(K @ np.ones(g.size))) < 1e-9
