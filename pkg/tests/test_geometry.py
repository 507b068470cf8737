import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ndlab.geometry import (GeometryError, GraphFunction, build_domain, check_pole_outside, decompose_boundary,
                            graph_map)
from ndlab.weights import make_weight

pts3 = st.lists(st.tuples(*[st.floats(-2, 2)] * 3), min_size=1, max_size=20).map(np.array)


@given(p=pts3, kx=st.floats(-1, 1), ky=st.floats(-1, 1), a=st.floats(0, 0.05))
def test_graph_map_round_trip(p, kx, ky, a):
    gf = GraphFunction.ripple([kx, ky], a, [2 * np.pi, 0.0])
    m = graph_map(gf, 3)
    assert np.max(np.abs(m.inverse(m.forward(p)) - p)) < 1e-12
    assert np.allclose(m.jacobian_determinant(p), 1.0)


@given(kx=st.floats(-1, 1), a=st.floats(0, 0.05))
def test_ripple_slope_deviation_bound(kx, a):
    k = np.array([2 * np.pi, 0.0])
    gf = GraphFunction.ripple([kx, 0.0], a, k)
    xs = np.random.default_rng(0).uniform(0, 1, (2, 200))
    dev, _ = gf.slope_deviation(xs, center=[kx, 0.0])
    assert dev <= a * np.linalg.norm(k) + 1e-12


def test_flat_graph_equals_box():
    box = build_domain({"shape": "box", "extents": [[0, 1]] * 3, "resolution": [9] * 3})
    flat = build_domain({"shape": "graph", "extents_x": [[0, 1]] * 2, "height": 1.0, "resolution": [9] * 3,
                         "graph": {"kind": "linear", "slope": [0.0, 0.0]}})
    assert np.allclose(box.boundary_points, flat.boundary_points)
    assert np.allclose(box.boundary_normals, flat.boundary_normals)


def test_pole_inside_hull_rejected():
    corners = np.array([[x, y, z] for x in (0, 1) for y in (0, 1) for z in (0, 1)], dtype=float)
    with pytest.raises(GeometryError):
        check_pole_outside(np.array([0.5, 0.5, 0.5]), corners=corners)
    check_pole_outside(np.array([0.5, 0.5, -3.0]), corners=corners)


def _linear(d):
    v = np.asarray(d, float)
    return make_weight("linear", {"direction": v / np.linalg.norm(v)})


dirs = st.tuples(*[st.floats(-1, 1)] * 3).filter(lambda v: np.linalg.norm(v) > 0.2)


@given(d=dirs, margin=st.floats(0, 0.3))
def test_decomposition_covers_and_contains(box9, d, margin):
    dec = decompose_boundary(box9, _linear(d), margin)
    nb = box9.n_boundary
    assert len(np.union1d(dec.plus_set, dec.minus_set)) == nb
    assert set(dec.plus_set) <= set(dec.gamma) and set(dec.minus_set) <= set(dec.zed)


@given(d=dirs, m1=st.floats(0, 0.2), extra=st.floats(0, 0.2))
def test_margin_monotone(box9, d, m1, extra):
    a = decompose_boundary(box9, _linear(d), m1)
    b = decompose_boundary(box9, _linear(d), m1 + extra)
    assert set(a.gamma) <= set(b.gamma) and set(a.zed) <= set(b.zed)


@given(d=dirs, t1=st.floats(0, 0.2), extra=st.floats(0, 0.2))
def test_tie_tolerance_only_enlarges(box9, d, t1, extra):
    a = decompose_boundary(box9, _linear(d), 0.1, tie_tol=t1)
    b = decompose_boundary(box9, _linear(d), 0.1, tie_tol=t1 + extra)
    assert set(a.gamma) <= set(b.gamma) and set(a.zed) <= set(b.zed)


@given(d=dirs)
def test_reversal_swaps_roles(box9, d):
    w = _linear(d)
    dec = decompose_boundary(box9, w, 0.1)
    rev = decompose_boundary(box9, w.negated(), 0.1)
    assert np.array_equal(dec.reversed().gamma, rev.gamma)
    assert np.array_equal(dec.reversed().zed, rev.zed)
    assert dec.reversed().reversed().digest() == dec.digest()


def test_negative_margin_rejected(box9):
    with pytest.raises(GeometryError):
        decompose_boundary(box9, _linear([0, 0, 1]), -0.1)
