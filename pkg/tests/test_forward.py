import numpy as np
import pytest

from ndlab.forward import (ContractViolation, ForwardError, NdMap, PartialNdMap, Potential, assemble_nd_map,
                           restrict_nd)
from ndlab.geometry import build_domain, decompose_boundary
from ndlab.weights import make_weight


@pytest.fixture(scope="module")
def maps():
    d = build_domain({"shape": "box", "extents": [[0, 1]] * 3, "resolution": [8] * 3})
    P = d.grid.points
    q2 = 1 + 0.5 * np.exp(-np.sum((P - 0.5) ** 2, axis=1) / 0.125).reshape(d.grid.shape)
    return d, assemble_nd_map(d, np.ones(d.grid.shape)), assemble_nd_map(d, q2)


def test_reciprocity(maps):
    _, a, b = maps
    assert a.symmetry_defect() < 1e-8 and b.symmetry_defect() < 1e-8


def test_save_load_round_trip(maps, tmp_path):
    _, a, _ = maps
    a.save(tmp_path / "nd")
    b = NdMap.load(tmp_path / "nd")
    assert np.array_equal(a.matrix, b.matrix) and np.array_equal(a.weights, b.weights)


def test_worker_count_does_not_change_bits(maps):
    d, a, _ = maps
    assert np.array_equal(assemble_nd_map(d, np.ones(d.grid.shape), workers=2, block=64).matrix, a.matrix)


def test_partial_view_logs_only_its_block(maps):
    d, a, _ = maps
    dec = decompose_boundary(d, make_weight("linear", {"direction": [0, 0, 1.0]}), 0.2)
    fresh = NdMap(a.matrix, a.weights, a.grid, a.meta)
    p = restrict_nd(fresh, dec)
    assert fresh.reads_outside(dec.gamma, dec.zed) == 0
    assert p.entry(dec.gamma_c[0] if len(dec.gamma_c) else -1, dec.zed[0]) is None


def test_partial_apply_refuses_data_off_z(maps):
    d, a, _ = maps
    nb = d.n_boundary
    p = PartialNdMap(a, np.arange(nb), np.arange(0, nb, 2))
    g = np.zeros(nb)
    g[1] = 1.0
    with pytest.raises(ContractViolation):
        p.apply(g)
    g = np.zeros(nb)
    g[0] = 1.0
    assert np.allclose(p.apply(g), a.matrix[:, 0])


def test_partial_maps_on_different_blocks_do_not_subtract(maps):
    d, a, b = maps
    nb = d.n_boundary
    with pytest.raises(ForwardError):
        PartialNdMap(a, np.arange(nb), np.arange(4)) - PartialNdMap(b, np.arange(nb), np.arange(5))


def test_potential_digest_tracks_values(maps):
    d, _, _ = maps
    q = np.ones(d.grid.shape)
    a = Potential.from_values(q, d.grid).digest()
    q[0, 0, 0] = 1.5
    assert Potential.from_values(q, d.grid).digest() != a
