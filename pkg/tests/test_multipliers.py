import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ndlab.fields import ScalarField
from ndlab.grid import Grid
from ndlab.multipliers import (MultiplierSpec, SymbolError, SymbolParams, fourier_multiplier, generic_symbol,
                               j_apply, root_residual, smoothstep, symbol_eval)

xi2 = st.tuples(st.floats(-3, 3), st.floats(-3, 3)).map(lambda t: np.array(t)[:, None])


@st.composite
def params(draw):
    kn = draw(st.floats(0, 0.5))
    ang = draw(st.floats(0, 2 * np.pi))
    K = kn * np.array([np.cos(ang), np.sin(ang)])
    kap = kn / np.sqrt(1 + kn * kn)
    up = 0.5 + kap / 2
    a, b = draw(st.floats(0.2, 0.45)), draw(st.floats(0.55, 0.9))
    d = draw(st.floats(0, 0.1))
    dev = lambda t: d * np.array([np.cos(t), np.sin(t)])
    return SymbolParams(V1=K + dev(draw(st.floats(0, 6.3))), V2=K + dev(draw(st.floats(0, 6.3))), K=K,
                        mu1=kap + (up - kap) * a, mu2=kap + (up - kap) * b, delta=d, alpha=draw(st.floats(0.5, 1)))


@given(p=params(), xi=xi2, kind=st.sampled_from(["Aplus", "Aminus", "Aeps_plus", "Aeps_minus"]))
def test_roots_solve_quadratic(p, xi, kind):
    a = p.alpha if "eps" in kind else 1.0
    X = symbol_eval(kind, p, xi)
    quad = 1 + p.V2 @ p.V2
    scale = quad * abs(X) ** 2 + 2 * abs((a + 1j * (p.V1 @ xi)) * X) + abs(a * a - np.sum(xi * xi, 0))
    assert np.all(root_residual(p, xi, X, a) <= 1e-12 * scale)


@given(p=params(), xi=xi2)
def test_roots_sum_and_product(p, xi):
    quad = 1 + p.V2 @ p.V2
    a, b = symbol_eval("Aplus", p, xi), symbol_eval("Aminus", p, xi)
    assert np.allclose(quad * (a + b), 2 * (1 + 1j * (p.V1 @ xi)), atol=1e-12)
    assert np.allclose(quad * a * b, 1 - np.sum(xi * xi, 0), atol=1e-12)


@given(p=params(), xi=xi2)
def test_plus_root_has_larger_real_part(p, xi):
    assert np.all(symbol_eval("Aplus", p, xi).real >= symbol_eval("Aminus", p, xi).real - 1e-12)


@given(p=params(), xi=xi2)
def test_blended_symbols_never_hit_branch_cut(p, xi):
    for kind in ("Gplus", "Gminus", "Geps_plus", "Geps_minus"):
        assert np.all(np.isfinite(symbol_eval(kind, p, xi)))


@given(p=params(), xi=xi2)
def test_cutoffs_in_unit_interval(p, xi):
    for kind in ("rho", "zeta"):
        v = symbol_eval(kind, p, xi).real
        assert np.all((v >= 0) & (v <= 1))


def test_invalid_thresholds_rejected():
    with pytest.raises(SymbolError):
        SymbolParams(V1=[0.5, 0], mu1=0.9, mu2=0.95)
    with pytest.raises(SymbolError):
        SymbolParams(V1=[0.0, 0], mu1=0.3, mu2=0.4, m1=0.3, m2=0.2)


@given(t=st.floats(-2, 3))
def test_smoothstep_range(t):
    v = smoothstep(np.array([t]))[0]
    assert 0 <= v <= 1


G = Grid([(-1, 1), (-1, 1), (0, 2)], [17, 17, 385])
X, Y, Z = G.coords
PROBE = ScalarField(np.exp(-((X - 0.1) ** 2 + Y**2 + (Z - 0.9) ** 2) / (2 * 0.2**2)) * (1 + 0.3j), G)


@pytest.mark.parametrize("h", [0.5, 0.125])
def test_j_right_inverse(h):
    out = j_apply(("Jinv", "J"), generic_symbol(h), PROBE)
    assert np.linalg.norm(out.values - PROBE.values) / np.linalg.norm(PROBE.values) < 1e-6


@pytest.mark.parametrize("h", [0.5, 0.125])
def test_jstar_left_inverse(h):
    out = j_apply(("Jstar", "Jstarinv"), generic_symbol(h), PROBE)
    assert np.linalg.norm(out.values - PROBE.values) / np.linalg.norm(PROBE.values) < 1e-6


def test_unknown_j_kind_rejected():
    with pytest.raises(SymbolError):
        j_apply("Jfoo", generic_symbol(0.1), PROBE)


@given(c=st.complex_numbers(max_magnitude=10, allow_nan=False, allow_infinity=False))
def test_multiplier_linear(c):
    g = Grid([(-1, 1), (-1, 1), (0, 1)], [17, 17, 8])
    f = ScalarField(np.exp(-(g.coords[0] ** 2 + g.coords[1] ** 2) / 0.1), g)
    spec = MultiplierSpec(0.1, func=lambda eta: 1 + np.sqrt(np.sum(eta**2, axis=0)))
    a = fourier_multiplier(spec, f * c).values
    b = c * fourier_multiplier(spec, f).values
    assert np.allclose(a, b, atol=1e-12 * max(1, abs(c)))
