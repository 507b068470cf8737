"""Fast exact-answer checks for every module (run by ``ndlab selftest``).

Each check returns ``(passed, detail)``.  The registry order follows the
package layout.  The whole set runs in well under two minutes on one core.
"""

from __future__ import annotations

import tempfile
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

CHECKS = []


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float


def check(name):
    def deco(fn):
        CHECKS.append((name, fn))
        return fn

    return deco


def _rel(a, b):
    return float(np.linalg.norm(np.ravel(a) - np.ravel(b)) / max(np.linalg.norm(np.ravel(b)), 1e-300))


# --------------------------------------------------------------------------
# geometry


@check("geometry.box_identity")
def _box_identity():
    from .geometry import build_domain

    d = build_domain({"shape": "box", "extents": [[0, 1]] * 3, "resolution": [16] * 3})
    err = d.map.round_trip_error(d.grid.points)
    return d.shape == "box" and d.map.kind == "identity" and err == 0.0, f"round trip {err:.1e}"


@check("geometry.linear_graph_flattens")
def _graph_flat():
    from .geometry import build_domain

    d = build_domain({"shape": "graph", "extents_x": [[0, 1]] * 2, "height": 1.0, "resolution": [9] * 3,
                      "graph": {"kind": "linear", "slope": [0.1, 0.0]}})
    phys = d.map.inverse(d.grid.points)
    comp = d.map.forward(phys)
    lo = np.array([a for a, _ in d.grid.extents])
    hi = np.array([b for _, b in d.grid.extents])
    inside = np.all(comp >= lo - 1e-12) and np.all(comp <= hi + 1e-12)
    err = float(np.max(np.abs(comp - d.grid.points)))
    return d.shape == "graph" and inside and err < 1e-13, f"image is the box, round trip {err:.1e}"


@check("geometry.ball_upper_hemisphere")
def _ball_split():
    from .geometry import build_domain, decompose_boundary
    from .weights import make_weight

    d = build_domain({"shape": "ball", "center": [0, 0, 0], "radius": 1.0, "resolution": [8, 17, 32]})
    dec = decompose_boundary(d, make_weight("linear", {"direction": [0, 0, 1]}), 0.0)
    z = d.boundary_points[:, 2]
    ok = np.all(z[dec.plus_set] >= -1e-12) and set(np.flatnonzero(z > 1e-12)) <= set(dec.plus_set.tolist())
    return bool(ok), f"{len(dec.plus_set)} of {d.n_boundary} nodes in the plus set"


@check("geometry.box_sign_sets")
def _box_split():
    from .geometry import build_domain, decompose_boundary
    from .weights import make_weight

    d = build_domain({"shape": "box", "extents": [[0, 1]] * 3, "resolution": [8] * 3})
    dec = decompose_boundary(d, make_weight("linear", {"direction": [0, 0, 1]}), 0.0)
    p = d.boundary_points
    n = d.boundary_normals
    top_or_side = np.flatnonzero(n[:, 2] >= -1e-12)
    bottom_or_side = np.flatnonzero(n[:, 2] <= 1e-12)
    ok = np.array_equal(dec.plus_set, top_or_side) and np.array_equal(dec.minus_set, bottom_or_side)
    ok = ok and np.all(p[dec.plus_set, 2] > 0) and np.all(p[dec.minus_set, 2] < 1)
    return bool(ok), "plus = top and sides, minus = bottom and sides"


@check("geometry.zero_graph_identity")
def _zero_graph():
    from .geometry import GraphFunction, graph_map

    m = graph_map(GraphFunction.linear([0.0, 0.0]), 3)
    pts = np.random.default_rng(0).random((50, 3))
    err = float(np.max(np.abs(m.forward(pts) - pts)))
    return err == 0.0, f"max displacement {err:.1e}"


@check("geometry.linear_graph_formula")
def _graph_formula():
    from .geometry import GraphFunction, graph_map

    m = graph_map(GraphFunction.linear([0.1, 0.0]), 3)
    y = 0.7
    out = m.forward(np.array([[0.5, 0.3, y]]))[0]
    return bool(np.allclose(out, [0.5, 0.3, y - 0.05], atol=1e-15)), f"{out.tolist()}"


# --------------------------------------------------------------------------
# weights


@check("weights.linear_values")
def _linear_values():
    from .weights import make_weight

    w = make_weight("linear", {"direction": [0, 0, 1]})
    x = np.random.default_rng(1).random((20, 3))
    ok = np.array_equal(w.phi(x), x[:, 2]) and np.allclose(w.grad(x), [0, 0, 1]) and np.all(w.lap(x) == 0)
    return bool(ok), "phi = x3, grad = e3, lap = 0"


@check("weights.log_calculus")
def _log_calculus():
    from .weights import make_weight

    w = make_weight("log_plus", {"pole": [0, 0, 0]})
    x = np.array([[2.0, 0.0, 0.0], [0.0, 1.2, 1.6]])
    ok = (np.allclose(w.phi(x), np.log(2), atol=1e-15) and np.allclose(w.grad(x), x / 4, atol=1e-15)
          and np.allclose(w.lap(x), 0.25, atol=1e-15))
    return bool(ok), "phi = log 2, grad = x/4, lap = 1/4"


@check("weights.linear_partner")
def _linear_partner():
    from .weights import eikonal_partner, make_weight

    w = make_weight("linear", {"direction": [0, 0, 1]})
    ph = eikonal_partner(w, [1, 0, 0])
    x = np.random.default_rng(2).random((20, 3))
    gp = ph.grad(x)
    ok = (np.array_equal(ph.psi(x), x[:, 0]) and np.all(np.sum(gp * w.grad(x), axis=1) == 0)
          and np.all(np.linalg.norm(gp, axis=1) == 1))
    return bool(ok), "psi = x1 exactly"


@check("weights.parallel_omega_rejected")
def _omega_rejected():
    from .weights import WeightError, eikonal_partner, make_weight

    try:
        eikonal_partner(make_weight("linear", {"direction": [0, 0, 1]}), [0, 0, 1])
    except WeightError as exc:
        return True, str(exc)
    return False, "accepted a parallel omega"


@check("weights.axis_through_domain_rejected")
def _axis_rejected():
    from .geometry import build_domain
    from .weights import WeightError, eikonal_partner, make_weight

    d = build_domain({"shape": "box", "extents": [[0, 1]] * 3, "resolution": [8] * 3})
    w = make_weight("log_plus", {"pole": [0.5, 0.5, -1.0]}, d)
    try:
        eikonal_partner(w, [0, 0, 1], d.grid.points)
    except WeightError as exc:
        return True, str(exc)[:60]
    return False, "accepted an axis through the domain"


@check("weights.convexify_limit")
def _convex_limit():
    from .weights import convexify, make_weight

    w = make_weight("log_plus", {"pole": [0, 0, -2.0]})
    x = np.random.default_rng(3).random((20, 3))
    c = convexify(w, 0.0, 1.0, limit=True)
    return bool(np.array_equal(c.phi(x), w.phi(x))), "phi_c = phi bitwise"


@check("weights.convexify_formula")
def _convex_formula():
    from .weights import convexify, make_weight

    c = convexify(make_weight("linear", {"direction": [0, 0, 1]}), 0.1, 0.5)
    v = float(c.phi(np.array([[0.3, 0.2, 1.0]]))[0])
    return abs(v - 1.1) < 1e-15, f"phi_c = {v!r}"


# --------------------------------------------------------------------------
# fields and multipliers


@check("fields.unit_constant_norm")
def _unit_norm():
    from .fields import ScalarField, scl_norm
    from .grid import Grid

    g = Grid.cube(9)
    v = scl_norm(ScalarField(np.ones(g.shape), g), 0.3, "L2")
    return abs(v - 1) < 1e-14, f"L2 norm {v!r}"


def _tangential_probe(n=41, normal=8):
    from .fields import ScalarField
    from .grid import Grid

    g = Grid([(-1, 1), (-1, 1), (0, 1)], [n, n, normal])
    X, Y, Z = g.coords
    return g, ScalarField(np.exp(-(X**2 + Y**2) / (2 * 0.2**2)) * (1 + Z), g)


@check("multipliers.unit_symbol_identity")
def _unit_symbol():
    from .multipliers import MultiplierSpec, fourier_multiplier

    g, f = _tangential_probe()
    out = fourier_multiplier(MultiplierSpec(0.1, func=lambda eta: np.ones(eta.shape[1:])), f)
    err = _rel(out.values, f.values)
    return err < 1e-12, f"relative error {err:.1e}"


def _wave_packet(eta_abs, h, direction=(0.0, 1.0)):
    """Gaussian packet at semiclassical frequency ``eta_abs`` along ``direction``."""
    from .fields import ScalarField
    from .grid import Grid

    n = 241
    g = Grid([(-0.5, 0.5), (-0.5, 0.5), (0, 1)], [n, n, 8])
    X, Y, Z = g.coords
    k = eta_abs / h
    d = np.asarray(direction) / np.linalg.norm(direction)
    env = np.exp(-(X**2 + Y**2) / (2 * 0.08**2))
    return ScalarField(env * np.exp(1j * k * (d[0] * X + d[1] * Y)), g)


def _params():
    from .multipliers import SymbolParams

    return SymbolParams(V1=[0.5, 0.0], mu1=0.5, mu2=0.6, m1=0.2, m2=0.3)


@check("multipliers.rho_kills_high_wave")
def _rho_high():
    from .multipliers import MultiplierSpec, fourier_multiplier

    h = 0.004
    f = _wave_packet(0.9, h)
    out = fourier_multiplier(MultiplierSpec(h, "rho", _params()), f)
    r = float(np.linalg.norm(out.values) / np.linalg.norm(f.values))
    return r < 1e-6, f"|T_rho f| / |f| = {r:.1e}"


@check("multipliers.double_root_at_zero")
def _double_root():
    from .multipliers import SymbolParams, symbol_eval

    p = SymbolParams(V1=[0.0, 0.0], mu1=0.3, mu2=0.4)
    xi = np.zeros((2, 1))
    a, b = symbol_eval("Aplus", p, xi)[0], symbol_eval("Aminus", p, xi)[0]
    return abs(a - 1) < 1e-15 and abs(b - 1) < 1e-15, f"A+ = {a}, A- = {b}"


@check("multipliers.split_partition")
def _split_sum():
    from .multipliers import split_frequency

    _, f = _tangential_probe()
    ws, wl = split_frequency(f, _params(), 0.05)
    err = float(np.max(np.abs(ws.values + wl.values - f.values)))
    return err < 1e-12, f"max error {err:.1e}"


@check("multipliers.split_low_wave")
def _split_low():
    from .multipliers import split_frequency

    h = 0.004
    f = _wave_packet(0.2, h)
    ws, wl = split_frequency(f, _params(), h)
    r = float(np.linalg.norm(wl.values) / np.linalg.norm(f.values))
    return r < 1e-6, f"|w_l| / |f| = {r:.1e}"


@check("multipliers.split_high_wave")
def _split_high():
    from .multipliers import split_frequency

    h = 0.004
    f = _wave_packet(0.9, h)
    ws, wl = split_frequency(f, _params(), h)
    r = float(np.linalg.norm(ws.values) / np.linalg.norm(f.values))
    return r < 1e-6, f"|w_s| / |f| = {r:.1e}"


@check("multipliers.layered_matches_multiplier")
def _layered():
    from .multipliers import MultiplierSpec, fourier_multiplier, layered_symbol_apply

    _, f = _tangential_probe(n=21, normal=8)
    h = 0.1
    sym = lambda eta: 1 + np.sqrt(np.sum(eta**2, axis=0))
    a = fourier_multiplier(MultiplierSpec(h, func=sym), f)
    b = layered_symbol_apply(lambda x, eta, y: np.broadcast_to(sym(eta)[None, :], (x.shape[1], eta.shape[1])), f, h)
    err = _rel(b.values, a.values)
    return err < 1e-10, f"relative difference {err:.1e}"


@check("multipliers.multiplication_bound")
def _mult_bound():
    from .multipliers import layered_symbol_apply

    _, f = _tangential_probe(n=21, normal=8)
    a = lambda x: 1.5 + 0.5 * np.sin(3 * x[0]) * np.cos(2 * x[1])
    out = layered_symbol_apply(lambda x, eta, y: np.broadcast_to(a(x)[:, None], (x.shape[1], eta.shape[1])), f, 0.1)
    ratio = float(np.linalg.norm(out.values) / np.linalg.norm(f.values))
    return ratio <= 2.0 + 1e-6, f"ratio {ratio:.4f} <= max|a| = 2"


# --------------------------------------------------------------------------
# forward


def _manufactured(n):
    from .forward import neumann_data, solve_schrodinger_neumann
    from .geometry import build_domain

    d = build_domain({"shape": "box", "extents": [[0, 1]] * 3, "resolution": [n] * 3})
    g = d.grid
    pb = g.points[g.boundary_index]
    grad = np.zeros_like(pb)
    grad[:, 0] = np.exp(pb[:, 0])
    u = solve_schrodinger_neumann(d, np.ones(g.shape), neumann_data(g, grad))
    exact = np.exp(g.coords[0])
    W = g.volume_weights
    return float(np.sqrt(np.sum(W * np.abs(u.values - exact) ** 2) / np.sum(W * exact**2)))


@check("forward.manufactured_order")
def _fwd_order():
    ns = [16, 24, 32]
    errs = [_manufactured(n) for n in ns]
    dxs = [1 / (n - 1) for n in ns]
    order = float(np.polyfit(np.log(dxs), np.log(errs), 1)[0])
    return abs(order - 2) <= 0.3 and errs[-1] <= 2e-3, f"order {order:.3f}, error at 32^3 {errs[-1]:.2e}"


@check("forward.zero_data_zero_solution")
def _fwd_zero():
    from .forward import solve_schrodinger_neumann
    from .geometry import build_domain

    d = build_domain({"shape": "box", "extents": [[0, 1]] * 3, "resolution": [9] * 3})
    u = solve_schrodinger_neumann(d, np.ones(d.grid.shape), np.zeros(d.n_boundary))
    v = float(np.linalg.norm(u.values))
    return v <= 1e-10, f"|u| = {v:.1e}"


def _small_maps(n=8, same=False):
    from .forward import assemble_nd_map
    from .geometry import build_domain

    d = build_domain({"shape": "box", "extents": [[0, 1]] * 3, "resolution": [n] * 3})
    P = d.grid.points
    q1 = np.ones(d.grid.shape)
    q2 = q1 if same else 1 + 0.5 * np.exp(-np.sum((P - 0.5) ** 2, axis=1) / 0.125).reshape(d.grid.shape)
    return d, assemble_nd_map(d, q1), assemble_nd_map(d, q2)


@check("forward.identical_potentials_identical_maps")
def _fwd_bitwise():
    d, a, b = _small_maps(same=True)
    return bool(np.array_equal(a.matrix, b.matrix)), "bitwise equal"


@check("forward.full_gamma_partial_equals_block")
def _partial_full():
    from .forward import PartialNdMap

    d, a, _ = _small_maps(same=True)
    nb = d.n_boundary
    z = np.arange(0, nb, 3)
    p = PartialNdMap(a, np.arange(nb), z)
    return bool(np.array_equal(p.block(), a.matrix[:, z])), "block equals N[:, Z]"


@check("forward.partial_refuses_outside_rows")
def _partial_refuse():
    from .forward import PartialNdMap

    d, a, _ = _small_maps(same=True)
    rows = np.arange(0, d.n_boundary, 2)
    p = PartialNdMap(a, rows, np.arange(d.n_boundary))
    return p.entry(1, 0) is None and p.entry(0, 0) is not None, "entry(1, 0) returns None"


@check("forward.equal_potentials_zero_block")
def _zero_block():
    from .forward import PartialNdMap

    d, a, b = _small_maps(same=True)
    r = np.arange(0, d.n_boundary, 2)
    diff = PartialNdMap(a, r, r) - PartialNdMap(b, r, r)
    v = float(np.linalg.norm(diff.block()))
    return v <= 1e-10, f"|block| = {v:.1e}"


@check("forward.unit_conductivity_zero_potential")
def _cond_unit():
    from .fields import ScalarField
    from .forward import conductivity_reduction
    from .grid import Grid

    g = Grid.cube(9)
    red = conductivity_reduction(ScalarField(np.ones(g.shape), g))
    v = float(np.max(np.abs(red.potential.values)))
    return v == 0.0, f"max |q| = {v:.1e}"


@check("forward.conductivity_normal_derivative_rejected")
def _cond_reject():
    from .fields import ScalarField
    from .forward import ForwardError, conductivity_reduction
    from .grid import Grid

    g = Grid.cube(9)
    try:
        conductivity_reduction(ScalarField(1 + 0.3 * g.coords[0], g))
    except ForwardError as exc:
        return True, str(exc)[:60]
    return False, "accepted a conductivity with nonzero normal derivative"


# --------------------------------------------------------------------------
# carleman


def _carleman_bits(dx=0.02, h=0.2, sigma=0.0):
    from .carleman import ProbeRegion, generate_test_function, make_bc
    from .weights import make_weight

    wt = make_weight("linear", {"direction": [0, 0, 1]})
    reg = ProbeRegion(((0, 1), (0, 1)), 0.5, ((0.2, 0.8), (0.2, 0.8)))
    bc = make_bc(reg, sigma=sigma)
    tf = generate_test_function(bc, wt, h, seed=5, dx=dx)
    return wt, bc, tf


def _q_bump(p):
    return 1 + np.exp(-np.sum((p - [0.5, 0.5, 0.2]) ** 2, axis=1) / 0.045)


@check("carleman.potential_identity")
def _identity():
    from .carleman import ConjugatedOperator, apply_conjugated

    wt, bc, tf = _carleman_bits()
    h = 0.2
    a = apply_conjugated(ConjugatedOperator("L_phi_q", wt, h, q=_q_bump), tf.w).values
    b = apply_conjugated(ConjugatedOperator("L_phi", wt, h), tf.w).values
    qv = _q_bump(tf.w.grid.points).reshape(tf.w.grid.shape)
    err = float(np.max(np.abs(a + b - h * h * qv * tf.w.values)) / np.max(np.abs(tf.w.values)))
    return err <= 1e-12, f"max defect {err:.1e}"


@check("carleman.flat_graph_reduces_to_flat")
def _graph_flat_limit():
    from .carleman import ConjugatedOperator, apply_conjugated
    from .geometry import GraphFunction

    wt, bc, tf = _carleman_bits()
    h = 0.2
    a = apply_conjugated(ConjugatedOperator("L_tilde_graph", None, h, eps=None,
                                            graph=GraphFunction.linear([0.0, 0.0])), tf.w).values
    b = apply_conjugated(ConjugatedOperator("L_phi", wt, h), tf.w).values
    err = _rel(a, b)
    return err < 1e-10, f"relative difference {err:.1e}"


@check("carleman.bc_residual_second_order")
def _bc_order():
    from .carleman import bc_residual

    res = []
    for dx in (0.01, 0.005):
        wt, bc, tf = _carleman_bits(dx=dx)
        res.append(bc_residual(tf, bc, wt, 0.2))
    rate = float(np.log2(res[0] / res[1]))
    return 1.7 <= rate <= 2.3, f"residuals {res[0]:.2e}, {res[1]:.2e}, rate {rate:.2f}"


@check("carleman.seed_determinism")
def _seed():
    a = _carleman_bits()[2].w.values
    b = _carleman_bits()[2].w.values
    return bool(np.array_equal(a, b)), "identical fields"


@check("carleman.zero_function_vacuous")
def _vacuous():
    from .carleman import ConjugatedOperator, evaluate_estimate

    wt, bc, tf = _carleman_bits()
    z = replace(tf, w=tf.w.with_values(np.zeros_like(tf.w.values)))
    rep = evaluate_estimate(ConjugatedOperator("L_phi_q", wt, 0.2, q=_q_bump), z, bc, 0.2)
    ok = rep.rhs == 0 and rep.boundary == 0 and rep.volume == 0 and np.isnan(rep.ratio) and rep.terms.get("vacuous")
    return bool(ok), "ratio reported as vacuous"


@check("carleman.ratio_homogeneous")
def _homog():
    from .carleman import ConjugatedOperator, evaluate_estimate

    wt, bc, tf = _carleman_bits()
    op = ConjugatedOperator("L_phi_q", wt, 0.2, q=_q_bump)
    r1 = evaluate_estimate(op, tf, bc, 0.2).ratio
    r2 = evaluate_estimate(op, replace(tf, w=tf.w * 2.0), bc, 0.2).ratio
    err = abs(r2 / r1 - 1)
    return err <= 1e-12, f"relative change {err:.1e}"


@check("carleman.double_reversal_identity")
def _double_rev():
    from .carleman import ConjugatedOperator, reverse_variant

    wt, bc, tf = _carleman_bits(sigma=0.5)
    op = ConjugatedOperator("L_phi_q", wt, 0.2, q=_q_bump)
    op2, bc2 = reverse_variant(*reverse_variant(op, bc))
    x = np.random.default_rng(0).random((2, 10))
    ok = (op2 == op and bc2.side == bc.side and bc2.sigma_sup == bc.sigma_sup
          and np.array_equal(bc2.sigma(x), bc.sigma(x)) and bc2.region == bc.region)
    return bool(ok), "operator and boundary condition restored"


@check("carleman.linear_reversal_direction")
def _rev_dir():
    from .carleman import ConjugatedOperator, reverse_variant

    wt, bc, tf = _carleman_bits()
    op, _ = reverse_variant(ConjugatedOperator("L_phi_q", wt, 0.2, q=_q_bump), bc)
    eff = op.effective_weight()
    x = np.random.default_rng(0).random((10, 3))
    ok = np.allclose(eff.grad(x), [0, 0, -1]) and np.allclose(eff.phi(x), -x[:, 2])
    return bool(ok), "effective weight is -x3"


# --------------------------------------------------------------------------
# cgo


def _cgo_bits(n=9):
    from .geometry import build_domain
    from .weights import eikonal_partner, make_weight

    d = build_domain({"shape": "box", "extents": [[0, 1]] * 3, "resolution": [n] * 3})
    wt = make_weight("linear", {"direction": [0, 0, 1]})
    return d, wt, eikonal_partner(wt, [1, 0, 0])


@check("cgo.free_zero_potential_exact")
def _cgo_free0():
    from .cgo import build_cgo_free
    from .weights import AmplitudeField

    d, wt, ph = _cgo_bits()
    b = build_cgo_free(d, wt, ph, AmplitudeField(ph, 1.0), 0.5, 0.0, guard_factor=3.0)
    return b.norms["r_L2"] <= 1e-8, f"|r| = {b.norms['r_L2']:.1e}"


@check("cgo.constrained_full_z_reduces_to_free")
def _cgo_con0():
    from .cgo import build_cgo_constrained
    from .geometry import decompose_boundary
    from .weights import AmplitudeField

    d, wt, ph = _cgo_bits()
    dec = replace(decompose_boundary(d, wt, 0.2), zed=np.arange(d.n_boundary))
    b = build_cgo_constrained(d, wt, ph, AmplitudeField(ph, -1.0), 0.5, 0.0, dec, guard_factor=3.0)
    return b.norms["r_L2"] <= 1e-8, f"|r| = {b.norms['r_L2']:.1e}"


@check("cgo.synthetic_half_slope")
def _slope_half():
    from .cgo import validate_decay

    hs = [0.4, 0.3, 0.2, 0.1]
    fit = validate_decay([(h, h**0.5) for h in hs], 0.4)
    return abs(fit.slope - 0.5) <= 1e-12 and fit.passed, f"slope {fit.slope!r}"


@check("cgo.synthetic_constant_fails")
def _slope_const():
    from .cgo import validate_decay

    fit = validate_decay([(h, 2.0) for h in (0.4, 0.3, 0.2, 0.1)], 0.4)
    return abs(fit.slope) <= 1e-12 and not fit.passed, f"slope {fit.slope!r}, passed={fit.passed}"


# --------------------------------------------------------------------------
# recon


def _recon_bits():
    from .recon import build_setup

    d, a, _ = _small_maps(n=10, same=True)
    g = d.grid
    q = np.ones(g.size)
    return d, build_setup(d, q, q, a, a, directions=(2,), guard_factor=3.0)


@check("recon.equal_potentials_zero_pairing")
def _pairing0():
    from .recon import sample_at_h

    d, setup = _recon_bits()
    v = abs(sample_at_h(setup, 2, np.zeros(3), 0.4)["value"])
    return v <= 1e-10, f"|pairing| = {v:.1e}"


@check("recon.equal_potentials_below_noise")
def _sample0():
    from .recon import recover_fourier_sample

    d, setup = _recon_bits()
    s = recover_fourier_sample(setup, np.array([np.pi, 0.0, 0.0]), [0.4, 0.5])
    floor = 1e-12 * d.grid.size
    ok = abs(s.value) <= 10 * max(s.noise, floor)
    return bool(ok), f"|value| = {abs(s.value):.1e}, noise {s.noise:.1e}"


@check("recon.zero_samples_zero_field")
def _zero_samples():
    from .grid import Grid
    from .recon import FrequencySample, frequency_lattice, reconstruct_delta_q

    g = Grid.cube(9)
    ss = [FrequencySample(k, 0j, 0.0, [], [], "none", 0) for k in frequency_lattice()]
    res = reconstruct_delta_q(ss, g)
    return not np.any(res.delta_q.values), "delta_q identically zero"


# --------------------------------------------------------------------------
# cli plumbing


def _tiny_configs():
    from .config import load_config

    carl = load_config(data={"seed": 3, "carleman": {"models": ["flat"], "reverse": False, "h_list": [0.4, 0.3],
                                                       "probes": 2, "dx": 0.025, "adversarial_probes": 0}})
    box = {"shape": "box", "extents": [[0, 1]] * 3, "resolution": [8] * 3}
    nd = load_config(data={"domain": box})
    rec = load_config(data={"domain": {**box, "resolution": [9] * 3},
                            "recon": {"h_list": [0.4, 0.45], "lattice": {"period": 1.0, "nmax": 0, "n2max": 0},
                                      "baseline": False}})
    return carl, nd, rec


@check("cli.same_config_identical_csv")
def _cli_csv():
    from .cli import run_verb

    carl, _, _ = _tiny_configs()
    with tempfile.TemporaryDirectory() as tmp:
        a, b = Path(tmp) / "a", Path(tmp) / "b"
        run_verb("carleman-scan", carl, a)
        run_verb("carleman-scan", carl, b)
        same = (a / "carleman.csv").read_bytes() == (b / "carleman.csv").read_bytes()
    return same, "carleman.csv bitwise identical"


@check("cli.nd_assemble_identical_files")
def _cli_nd():
    from .cli import run_verb

    _, nd, _ = _tiny_configs()
    with tempfile.TemporaryDirectory() as tmp:
        a, b = Path(tmp) / "a", Path(tmp) / "b"
        ca, cb = run_verb("nd-assemble", nd, a), run_verb("nd-assemble", nd, b)
        same = all((a / "fields" / f).read_bytes() == (b / "fields" / f).read_bytes()
                   for f in ("nd_q1.bin", "nd_q2.bin", "nd_q1.json", "nd_q2.json"))
    return same and ca == cb == 0, "matrix files bitwise identical"


@check("cli.recon_auto_assembles")
def _cli_recon():
    import json

    from .cli import run_verb

    _, _, rec = _tiny_configs()
    with tempfile.TemporaryDirectory() as tmp:
        out = Path(tmp) / "r"
        code = run_verb("recon", rec, out)
        man = json.loads((out / "manifest.json").read_text())
        notes = man["verbs"]["recon"]["notes"]
        ok = code in (0, 4) and (out / "fields" / "nd_q1.bin").exists() and any("assembled automatically" in n
                                                                                 for n in notes)
    return ok, f"exit {code}; manifest notes the assembly"


@check("cli.validation_fails_fast")
def _cli_validation():
    from .cli import run_verb
    from .config import load_config

    cfg = load_config(data={"recon": {"h_list": [0.01]}})
    with tempfile.TemporaryDirectory() as tmp:
        t0 = time.perf_counter()
        code = run_verb("recon", cfg, Path(tmp) / "v", echo=False)
        dt = time.perf_counter() - t0
        made = (Path(tmp) / "v" / "errors.json").exists() and not (Path(tmp) / "v" / "fields").exists()
    return code == 2 and made, f"exit {code} in {dt:.2f}s without solving"


def run_all(names=None, log=None):
    """Run the registered checks (or the named subset); exceptions count as failures."""
    out = []
    for name, fn in CHECKS:
        if names is not None and name not in names:
            continue
        t0 = time.perf_counter()
        try:
            ok, detail = fn()
        except Exception as exc:  # a crash is a failed check, reported with its message
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        res = CheckResult(name, bool(ok), str(detail), time.perf_counter() - t0)
        out.append(res)
        if log is not None:
            log(f"{'PASS' if res.passed else 'FAIL'} {name} ({res.seconds:.2f}s): {res.detail}")
    return out
