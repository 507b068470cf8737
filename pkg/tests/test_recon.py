import numpy as np
from hypothesis import given
from hypothesis import strategies as st

from ndlab.grid import Grid
from ndlab.recon import exact_samples, frequency_lattice, half_cosine_window, reconstruct_delta_q


@given(n=st.integers(0, 2), n2=st.integers(0, 6))
def test_lattice_symmetric_under_negation(n, n2):
    ks = {tuple(np.round(k, 12)) for k in frequency_lattice(1.0, n, n2)}
    assert all(tuple(np.round(-np.array(k), 12)) in ks for k in ks)
    assert (0.0, 0.0, 0.0) in ks


@given(k=st.floats(0, 100), kmax=st.floats(1, 50), taper=st.floats(0.05, 1))
def test_window_range_and_support(k, kmax, taper):
    w = float(half_cosine_window(k, kmax, taper))
    assert 0 <= w <= 1
    if k >= kmax:
        assert w < 1e-12
    if k <= (1 - taper) * kmax:
        assert w == 1


def test_exact_samples_resynthesize_trig_polynomial():
    g = Grid([(0, 1)] * 3, [16] * 3)
    X, Y, Z = g.coords
    truth = 1 + 0.3 * np.cos(2 * np.pi * X) + 0.2 * np.sin(2 * np.pi * Z)
    # periodic quadrature on the half-open cell
    g2 = Grid([(0, 1 - 1 / 16)] * 3, [16] * 3)
    t2 = 1 + 0.3 * np.cos(2 * np.pi * g2.coords[0]) + 0.2 * np.sin(2 * np.pi * g2.coords[2])
    W = np.full(g2.size, 1 / 16**3)
    ks = frequency_lattice(1.0, 1, 1)
    samples = [type(s)(s.k, complex(np.sum(W * t2.ravel() * np.exp(1j * g2.points @ s.k))), 0.0, [], [], "exact", -1)
               for s in exact_samples(t2, g2, ks)]
    res = reconstruct_delta_q(samples, g, kmax=100.0, taper=0.01, truth=truth)
    assert res.metrics["rel_l2"] < 1e-10
