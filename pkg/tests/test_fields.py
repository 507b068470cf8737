import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ndlab.fields import FieldError, ScalarField, scl_norm
from ndlab.grid import Grid

G = Grid.cube(9)
X, Y, Z = G.coords
SMOOTH = np.exp(-((X - 0.4) ** 2 + (Y - 0.5) ** 2 + Z**2)) * (1 + 0.5j * X)


def test_rejects_nonfinite_values():
    v = np.zeros(G.shape)
    v[0, 0, 0] = np.nan
    with pytest.raises(FieldError):
        ScalarField(v, G)


def test_rejects_shape_mismatch():
    with pytest.raises(FieldError):
        ScalarField(np.zeros(7), G)


def test_save_load_bitwise(tmp_path):
    f = ScalarField(SMOOTH, G, "test", {"h": 0.1})
    f.save(tmp_path / "f")
    g = ScalarField.load(tmp_path / "f")
    assert np.array_equal(g.values, f.values)
    assert g.role == "test" and g.meta["h"] == 0.1 and g.grid == G


@given(c=st.complex_numbers(min_magnitude=1e-3, max_magnitude=1e3, allow_nan=False, allow_infinity=False),
       h=st.floats(0.01, 1.0), space=st.sampled_from(["L2", "H1", "H2", "boundary_L2", "boundary_H1"]))
def test_norms_absolutely_homogeneous(c, h, space):
    f = ScalarField(SMOOTH, G)
    assert np.isclose(scl_norm(f * c, h, space), abs(c) * scl_norm(f, h, space), rtol=1e-10)


@given(h=st.floats(0.01, 1.0))
def test_norm_hierarchy(h):
    f = ScalarField(SMOOTH, G)
    l2, h1, h2 = (scl_norm(f, h, s) for s in ("L2", "H1", "H2"))
    assert l2 <= h1 * (1 + 1e-12) and h1 <= h2 * (1 + 1e-12)


@given(h1=st.floats(0.01, 0.5), factor=st.floats(1.0, 2.0))
def test_h1_norm_monotone_in_h(h1, factor):
    f = ScalarField(SMOOTH, G)
    assert scl_norm(f, h1, "H1") <= scl_norm(f, h1 * factor, "H1") * (1 + 1e-12)


def test_region_kind_is_checked():
    f = ScalarField(SMOOTH, G)
    with pytest.raises(FieldError):
        scl_norm(f, 0.1, "boundary_L2", region=np.ones(G.shape, dtype=bool))
    with pytest.raises(FieldError):
        scl_norm(f, 0.1, "L2", region=np.arange(3))
    with pytest.raises(FieldError):
        scl_norm(f, 0.0, "L2")
