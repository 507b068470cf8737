import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ndlab.weights import (WeightError, cauchy_riemann_residual, convexify, eikonal_partner, make_weight,
                           transport_amplitude)

vec = st.tuples(*[st.floats(-1, 1)] * 3).filter(lambda v: np.linalg.norm(v) > 0.3).map(
    lambda v: np.asarray(v) / np.linalg.norm(v))
box_pts = st.lists(st.tuples(*[st.floats(0, 1)] * 3), min_size=1, max_size=30).map(np.array)
POLE = np.array([0.5, 0.5, -2.0])


def _fd_grad(f, x, step=1e-6):
    out = np.zeros_like(x)
    for k in range(x.shape[1]):
        e = np.zeros(x.shape[1])
        e[k] = step
        out[:, k] = (f(x + e) - f(x - e)) / (2 * step)
    return out


@given(x=box_pts, kind=st.sampled_from(["log_plus", "log_minus"]))
def test_log_weight_gradient_matches_differences(x, kind):
    w = make_weight(kind, {"pole": POLE})
    assert np.allclose(w.grad(x), _fd_grad(w.phi, x), atol=1e-6)


@given(x=box_pts)
def test_log_weight_is_harmonic_limiting(x):
    # in 3D lap log|x| = 1/|x|^2 and |grad log|x||^2 = 1/|x|^2
    w = make_weight("log_plus", {"pole": POLE})
    g = w.grad(x)
    assert np.allclose(w.lap(x), np.sum(g * g, axis=1), rtol=1e-10)


@given(x=box_pts, omega=vec)
def test_log_partner_is_eikonal(x, omega):
    w = make_weight("log_plus", {"pole": POLE})
    ph = eikonal_partner(w, omega)
    ang = ph.axis_angle(x)
    x = x[(np.sin(ang) > 0.2)]
    if len(x) == 0:
        return
    gp, gs = w.grad(x), ph.grad(x)
    assert np.allclose(np.sum(gp * gs, axis=1), 0, atol=1e-10)
    assert np.allclose(np.linalg.norm(gp, axis=1), np.linalg.norm(gs, axis=1), rtol=1e-10)


@given(d=vec)
def test_linear_partner_requires_orthogonal_omega(d):
    w = make_weight("linear", {"direction": d})
    with pytest.raises(WeightError):
        eikonal_partner(w, d)


def test_non_unit_direction_rejected():
    with pytest.raises(WeightError):
        make_weight("linear", {"direction": [0, 0, 2]})


def test_log_amplitude_passes_transport_gate():
    w = make_weight("log_plus", {"pole": POLE})
    ph = eikonal_partner(w, np.array([1.0, 0.0, 0.0]))
    amp = transport_amplitude(w, ph, -1.0)
    pts = np.random.default_rng(0).uniform(0, 1, (50, 3))
    assert np.max(np.abs(cauchy_riemann_residual(amp, pts))) < 1e-5
    assert np.max(np.abs(cauchy_riemann_residual(amp, pts, analytic=True))) < 1e-12


@given(x=box_pts, h=st.floats(0.01, 0.5), eps=st.floats(0.05, 1.0))
def test_convexified_weight_formula(x, h, eps):
    w = make_weight("log_plus", {"pole": POLE})
    c = convexify(w, h, eps)
    p = w.phi(x)
    assert np.allclose(c.phi(x), p + h * p * p / (2 * eps), rtol=1e-12)
    assert np.allclose(c.grad(x), _fd_grad(c.phi, x), atol=1e-6)


def test_convexification_limit_is_identity():
    w = make_weight("linear", {"direction": [0, 0, 1.0]})
    x = np.random.default_rng(0).uniform(0, 1, (20, 3))
    c = convexify(w, 0.1, 1.0, limit=True)
    assert np.array_equal(c.phi(x), w.phi(x)) and np.array_equal(c.lap(x), w.lap(x))
