import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ndlab.cgo import CgoError, transport_defect, validate_decay
from ndlab.grid import Grid
from ndlab.weights import AmplitudeField, eikonal_partner, make_weight


@given(p=st.floats(0.1, 2.0), c=st.floats(0.01, 100), noise=st.floats(0, 0.01))
def test_fit_recovers_power_law(p, c, noise):
    hs = [0.8, 0.6, 0.4, 0.3]
    rng = np.random.default_rng(0)
    fit = validate_decay([(h, c * h**p * np.exp(noise * rng.uniform(-1, 1))) for h in hs], threshold=0.4)
    assert abs(fit.slope - p) < 0.1
    assert fit.passed == (fit.slope >= 0.4)


def test_guard_failures_are_dropped():
    series = [(0.8, 0.8, True), (0.6, 0.6, True), (0.4, 0.4, True), (0.1, 100.0, False)]
    fit = validate_decay(series, 0.8, min_points=3)
    assert fit.n_points == 3 and np.isclose(fit.slope, 1.0)


def test_too_few_points_is_a_solver_error():
    with pytest.raises(CgoError):
        validate_decay([(0.5, 1.0), (0.4, 0.9)], 0.4, min_points=3)


def test_transport_defect_scales_like_h_squared():
    g = Grid.cube(9)
    w = make_weight("linear", {"direction": [0, 0, 1.0]})
    amp = AmplitudeField(eikonal_partner(w, np.array([1.0, 0, 0])), -1.0)
    q = lambda x: 1 + x[:, 0]
    d1, d2 = transport_defect(amp, 0.2, q, g), transport_defect(amp, 0.1, q, g)
    assert np.isclose(np.log(d1 / d2) / np.log(2), 2.0, atol=1e-8)
