import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ndlab.carleman import (CarlemanError, ConjugatedOperator, Probe, ProbeRegion, apply_conjugated,
                            evaluate_estimate, generate_test_function, h_scan, make_bc, random_probe, reverse_variant)
from ndlab.weights import make_weight

WT = make_weight("linear", {"direction": [0, 0, 1.0]})
REG = ProbeRegion(((0, 1), (0, 1)), 0.5, ((0.2, 0.8), (0.2, 0.8)))


@given(seed=st.integers(0, 10_000), n_modes=st.integers(1, 3))
def test_probe_gradient_matches_differences(seed, n_modes):
    rng = np.random.default_rng(seed)
    p = Probe(np.array([0.5, 0.5]), np.array([0.2, 0.25]), 0.1, 0.05, rng.normal(0, 6, (n_modes, 2)),
              rng.uniform(-0.3, 0.3, n_modes))
    x = rng.uniform(0.35, 0.65, (2, 20))
    _, g = p.chi(x)
    e = 1e-6
    for a in range(2):
        d = np.zeros((2, 1))
        d[a] = e
        fd = (p.chi(x + d)[0] - p.chi(x - d)[0]) / (2 * e)
        assert np.allclose(fd, g[a], atol=1e-7)


@given(seed=st.integers(0, 10_000), h=st.floats(0.1, 0.4), kind=st.sampled_from(["standard", "adversarial"]))
def test_probes_stay_in_window(seed, h, kind):
    p = random_probe(REG, np.random.default_rng(seed), h, kind, 0.01)
    for (a, b), (lo, hi) in zip(p.support_x(), REG.window):
        assert lo - 1e-12 <= a and b <= hi + 1e-12
    assert max(p.ell, p.ell2) <= 0.6 * REG.height + 1e-12


def test_empty_window_rejected():
    reg = ProbeRegion(((0, 1), (0, 1)), 0.5, ((0.5, 0.5), (0.2, 0.8)))
    with pytest.raises(CarlemanError):
        random_probe(reg, np.random.default_rng(0), 0.2)


@given(c=st.floats(0.1, 10))
def test_ratio_scale_invariant(c):
    bc = make_bc(REG)
    tf = generate_test_function(bc, WT, 0.3, seed=2, dx=0.04)
    op = ConjugatedOperator("L_phi", WT, 0.3)
    a = evaluate_estimate(op, tf, bc, 0.3)
    tf2 = type(tf)(**{**tf.__dict__, "w": tf.w * c})
    b = evaluate_estimate(op, tf2, bc, 0.3)
    assert np.isclose(a.ratio, b.ratio, rtol=1e-10)


def test_conjugated_operator_linear():
    bc = make_bc(REG)
    w = generate_test_function(bc, WT, 0.3, seed=1, dx=0.04).w
    v = w.with_values(w.values * (1 + w.grid.coords[0]) ** 2)
    op = ConjugatedOperator("L_phi", WT, 0.3)
    lhs = apply_conjugated(op, w * 2.0 + v).values
    rhs = 2 * apply_conjugated(op, w).values + apply_conjugated(op, v).values
    assert np.allclose(lhs, rhs, atol=1e-10)


def test_guard_marks_coarse_reports_unreliable():
    bc = make_bc(REG)
    s = h_scan(lambda h: ConjugatedOperator("L_phi", WT, h), bc, WT, [0.3], probes=1, dx=0.04)
    assert not s.reliable


def test_scan_deterministic():
    bc = make_bc(REG)
    run = lambda: h_scan(lambda h: ConjugatedOperator("L_phi", WT, h), bc, WT, [0.4, 0.3], probes=2, dx=0.025, seed=9)
    assert run().min_ratio_per_h == run().min_ratio_per_h


def test_adversarial_scan_runs():
    bc = make_bc(REG)
    s = h_scan(lambda h: ConjugatedOperator("L_phi", WT, h), bc, WT, [0.4, 0.3], probes=2, dx=0.025,
               kind="adversarial")
    assert s.min_ratio > 0


def test_reverse_requires_plain_variant():
    with pytest.raises(CarlemanError):
        reverse_variant(ConjugatedOperator("L_phi", WT, 0.2), make_bc(REG))
