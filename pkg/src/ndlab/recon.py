"""Fourier samples of ``q2 - q1`` from the partial ND block and their synthesis.

For a weight direction ``d`` and frequency ``k`` with ``k . d = 0``:

* ``u1`` solves ``(-Lap + q1) u1 = 0`` with ``u1 = e^{(-phi + i psi1)/h} a1`` on
  ``Z`` and ``d_nu u1 = 0`` on ``Z^c``.  It is a decaying CGO whose Neumann
  data ``g1`` vanish off ``Z``.
* ``u2`` solves ``(-Lap + q2) u2 = 0`` with Dirichlet data
  ``e^{(phi + i psi2)/h} a2``.  It is a growing CGO with Neumann data ``g2``.

Green's identity gives ``int (q2 - q1) u1 u2 = sum_bdry S [(N1 - N2) g1] g2``.
The sum over ``Gamma^c`` is dropped because it vanishes as ``h -> 0``.  What
remains reads only ``(N1 - N2)[Gamma][:, Z]``, held as a :class:`PartialNdMap`.
Phases are tuned so that ``u1 u2 ~ a1 a2 e^{i k . x}``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import fd
from .fields import ScalarField
from .forward import ContractViolation, NdMap, PartialNdMap, restrict_nd
from .geometry import BoundaryDecomposition, Domain, decompose_boundary
from .weights import AmplitudeField, PhaseField, Weight, make_weight

EXTRAPOLATIONS = ("none", "sqrt_h")


class ReconError(ValueError):
    """Raised for inadmissible frequencies, guard violations or support violations."""


@dataclass
class FrequencySample:
    """Estimate of ``int (q2 - q1) e^{i k . x} dV``.

    ``values`` holds the per-``h`` estimates.  ``value`` is the extrapolated
    estimate and ``noise`` its spread.  ``alternative`` stores the other
    extrapolation model for comparison.
    """

    k: np.ndarray
    value: complex
    noise: float
    h_list: list
    values: list
    extrapolation: str
    direction: int
    weight_kind: str = "linear"
    alternative: dict = field(default_factory=dict)
    full_values: list | None = None

    def row(self):
        out = {"k": " ".join(f"{x:.6g}" for x in self.k), "direction": self.direction, "weight": self.weight_kind,
               "h_list": " ".join(f"{h:.4g}" for h in self.h_list), "value_re": self.value.real,
               "value_im": self.value.imag, "noise": self.noise, "extrapolation": self.extrapolation}
        for name, v in self.alternative.items():
            out[f"{name}_re"], out[f"{name}_im"] = v.real, v.imag
        return out


@dataclass
class ReconstructionResult:
    delta_q: ScalarField
    samples: list
    window: dict
    metrics: dict
    coverage: dict


# --------------------------------------------------------------------------
# setup


def _csolve(lu, rhs):
    return lu.solve(np.ascontiguousarray(rhs.real)) + 1j * lu.solve(np.ascontiguousarray(rhs.imag))


@dataclass
class DirectionSetup:
    """Factorizations and the partial ND difference for one weight direction."""

    axis: int
    weight: Weight
    dec: BoundaryDecomposition
    partial: PartialNdMap
    z_nodes: np.ndarray
    lu_mixed: object
    free: np.ndarray


class ReconSetup:
    """Everything the sampling path may touch.

    Only :class:`PartialNdMap` views of ``N1 - N2`` are stored.  No attribute
    gives access to ND entries outside ``rows(Gamma) x cols(Z)``.  The
    potentials are used to build ``u1`` (background ``q1``) and ``u2``.
    ``u2_potential='q2'`` follows the integral identity; ``'q1'`` is the
    linearized variant.
    """

    def __init__(self, domain: Domain, q1, q2, nd1: NdMap, nd2: NdMap, margin: float = 0.2,
                 directions=(0, 1, 2), guard_factor: float = 3.0, u2_potential: str = "q2",
                 weights: dict | None = None, tie_tol: float = 0.05):
        if domain.shape != "box":
            raise ReconError("reconstruction runs on box domains")
        self.domain = domain
        g = domain.grid
        self.grid = g
        self.guard_factor = guard_factor
        self.margin = margin
        self.tie_tol = tie_tol
        self.W = g.volume_weights.ravel()
        self.S = g.surface_weights.ravel()[g.boundary_index]
        K = fd.stiffness(g)
        q1 = np.real(np.asarray(q1, dtype=complex)).ravel()
        q2 = np.real(np.asarray(q2, dtype=complex)).ravel()
        self.A1 = (K + sp.diags(self.W * q1)).tocsr()
        A2 = (K + sp.diags(self.W * (q2 if u2_potential == "q2" else q1))).tocsr()
        self.A2 = A2
        b = g.boundary_mask.ravel()
        self.interior = ~b
        self.lu_dir = spla.splu(A2[~b][:, ~b].tocsc())
        self.directions = {}
        weights = weights or {}
        for ax in directions:
            wt = weights.get(ax) or make_weight("linear", {"direction": np.eye(g.dim)[ax]})
            self.add_direction(ax, wt, nd1, nd2)

    def add_direction(self, key, weight: Weight, nd1: NdMap, nd2: NdMap):
        g = self.grid
        dec = decompose_boundary(self.domain, weight, self.margin, self.tie_tol)
        part = restrict_nd(nd1, dec) - restrict_nd(nd2, dec)
        zmask = np.zeros(g.size, dtype=bool)
        zmask[g.boundary_index[dec.zed]] = True
        free = ~zmask
        lu = spla.splu(self.A1[free][:, free].tocsc())
        axis = int(np.argmax(np.abs(weight.direction))) if weight.kind == "linear" else int(
            np.argmax(np.abs(g.points.mean(axis=0) - weight.pole)))
        self.directions[key] = DirectionSetup(axis, weight, dec, part, dec.zed, lu, free)

    # -- CGO-type solutions ------------------------------------------------
    def constrained_solution(self, key, data):
        """``u1`` with Dirichlet ``data`` on ``Z`` and zero Neumann data on ``Z^c``; returns ``(u1, g1)``."""
        ds = self.directions[key]
        g = self.grid
        u = np.zeros(g.size, dtype=complex)
        zflat = g.boundary_index[ds.z_nodes]
        u[zflat] = data[zflat]
        u[ds.free] = _csolve(ds.lu_mixed, -(self.A1[ds.free][:, zflat] @ u[zflat]))
        gn = (self.A1 @ u)[g.boundary_index] / self.S
        return u, gn

    def free_solution(self, data):
        """``u2`` with Dirichlet ``data`` on the whole boundary; returns ``(u2, g2)``."""
        g = self.grid
        b = ~self.interior
        u = np.zeros(g.size, dtype=complex)
        u[b] = data[b]
        u[self.interior] = _csolve(self.lu_dir, -(self.A2[self.interior][:, b] @ u[b]))
        gn = (self.A2 @ u)[g.boundary_index] / self.S
        return u, gn


def build_setup(domain: Domain, q1, q2, nd1: NdMap, nd2: NdMap, **kw) -> ReconSetup:
    return ReconSetup(domain, q1, q2, nd1, nd2, **kw)


# --------------------------------------------------------------------------
# pairing and samples


def boundary_pairing(partial: PartialNdMap, g1, g2, weights, support_tol: float = 1e-8) -> complex:
    """``sum_Gamma S [(N1 - N2) g1] g2`` from the partial block only.

    ``g1`` is a full boundary vector that must vanish off ``Z`` (relative
    tolerance ``support_tol``).  ``g2`` is a full boundary vector.
    """
    try:
        v = partial.apply(g1, tol=support_tol)
    except ContractViolation as exc:
        raise ReconError(f"g1 violates the Z support contract: {exc}") from exc
    rows = partial.rows
    return complex(np.sum(weights[rows] * v * g2[rows]))


def _perp_direction(k, d):
    """Unit ``m`` orthogonal to ``d`` and ``k``."""
    if np.linalg.norm(k) < 1e-12:
        trial = np.eye(len(d))[np.argmin(np.abs(d))]
        m = trial - (trial @ d) * d
    elif len(d) == 3:
        m = np.cross(d, k)
    else:
        raise ReconError("nonzero frequencies need d >= 3")
    return m / np.linalg.norm(m)


def _cgo_data(weight: Weight, omega, sign, pts, h, shift):
    phase = PhaseField(weight, np.asarray(omega, dtype=float))
    amp = AmplitudeField(phase, sign)
    expo = (amp.exponent(pts) - sign * shift) / h
    return np.exp(expo) * amp.value(pts), amp


def _phases(weight: Weight, k, m, h, center):
    """Phase directions and effective ``h`` so that ``(psi1 + psi2)/h ~ k . x``."""
    kk = float(k @ k)
    if weight.kind == "linear":
        heff = h
        s2 = 1 - heff * heff * kk / 4
        if s2 <= 0:
            raise ReconError(f"|k| = {np.sqrt(kk):.3g} too large for h = {h}")
        s = np.sqrt(s2)
        return s * m + heff / 2 * k, -s * m + heff / 2 * k, heff
    # log weight: grad psi ~ -omega / |x - p| near the centre
    R = float(np.linalg.norm(center - weight.pole))
    heff = h * R
    s2 = 1 - heff * heff * kk / 4
    if s2 <= 0:
        raise ReconError(f"|k| = {np.sqrt(kk):.3g} too large for h_eff = {heff}")
    s = np.sqrt(s2)
    return s * m - heff / 2 * k, -s * m - heff / 2 * k, heff


def sample_at_h(setup: ReconSetup, key, k, h: float, full_data=False):
    """One estimate (partial, and optionally the full-boundary pairing for diagnostics)."""
    ds = setup.directions[key]
    g = setup.grid
    pts = g.points
    wt = ds.weight
    center = pts.mean(axis=0)
    d = wt.direction if wt.kind == "linear" else (center - wt.pole) / np.linalg.norm(center - wt.pole)
    k = np.asarray(k, dtype=float)
    if abs(k @ d) > 1e-9 * max(1.0, np.linalg.norm(k)):
        raise ReconError("k must be orthogonal to the weight direction")
    m = _perp_direction(k, d)
    om1, om2, heff = _phases(wt, k, m, h, center)
    shift = float(wt.phi(center[None])[0])
    e1, a1 = _cgo_data(wt, om1, -1.0, pts, h, shift)
    e2, a2 = _cgo_data(wt, om2, 1.0, pts, h, shift)
    u1, g1 = setup.constrained_solution(key, e1)
    u2, g2 = setup.free_solution(e2)
    val = boundary_pairing(ds.partial, g1, g2, setup.S)
    # normalization: mean of a1 a2 e^{i(psi1 + psi2)/h} e^{-i k.x}
    if wt.kind == "linear":
        norm = 1.0
    else:
        prod = e1 * e2 * np.exp(-1j * pts @ k)
        norm = np.sum(setup.W * prod) / np.sum(setup.W)
    out = {"value": val / norm, "h_eff": heff, "norm": norm}
    if full_data:
        out["u1"], out["u2"] = u1, u2
    return out


def _extrapolate(hs, vals, model):
    hs = np.asarray(hs, dtype=float)
    vals = np.asarray(vals, dtype=complex)
    order = np.argsort(hs)
    hs, vals = hs[order], vals[order]
    none_val = vals[0]
    none_noise = float(np.max(np.abs(vals - vals[0]))) if len(vals) > 1 else 0.0
    if len(vals) >= 2:
        a, b = np.sqrt(hs[0]), np.sqrt(hs[1])
        rich = (b * vals[0] - a * vals[1]) / (b - a)
        rich_noise = float(abs(rich - ((np.sqrt(hs[2]) * vals[1] - b * vals[2]) / (np.sqrt(hs[2]) - b)))) if len(vals) >= 3 else none_noise
    else:
        rich, rich_noise = none_val, none_noise
    if model == "none":
        return none_val, none_noise, {"sqrt_h": rich}
    return rich, rich_noise, {"none": none_val}


def recover_fourier_sample(setup: ReconSetup, k, h_list, key=None, extrapolation: str = "none") -> FrequencySample:
    """Estimate ``int (q2 - q1) e^{i k . x}`` from the partial block over ``h_list``."""
    if extrapolation not in EXTRAPOLATIONS:
        raise ReconError(f"unknown extrapolation {extrapolation!r}")
    k = np.asarray(k, dtype=float)
    g = setup.grid
    kmax = np.pi / (5 * g.dx)
    if np.linalg.norm(k) > kmax * (1 + 1e-9):
        raise ReconError(f"|k| = {np.linalg.norm(k):.3g} exceeds k_max = {kmax:.3g}")
    if key is None:
        zero = [a for a in setup.directions if isinstance(a, (int, np.integer)) and abs(k[a]) < 1e-12]
        if not zero:
            raise ReconError("no configured weight direction is orthogonal to k")
        key = zero[-1]
    ds = setup.directions[key]
    vals = []
    for h in h_list:
        heff_probe = h if ds.weight.kind == "linear" else h * float(np.linalg.norm(g.points.mean(axis=0) - ds.weight.pole))
        if heff_probe < setup.guard_factor * g.dx * (1 - 1e-9):
            raise ReconError(f"h = {h} violates the oscillation guard h >= {setup.guard_factor} dx")
        vals.append(sample_at_h(setup, key, k, h)["value"])
    val, noise, alt = _extrapolate(h_list, vals, extrapolation)
    return FrequencySample(k, complex(val), noise, list(map(float, h_list)), vals, extrapolation,
                           int(ds.axis), ds.weight.kind, {kk: complex(v) for kk, v in alt.items()})


def frequency_lattice(period: float = 1.0, nmax: int = 1, n2max: int = 2):
    """Lattice ``k = 2 pi n / period`` with ``|n_i| <= nmax`` and ``|n|^2 <= n2max`` (3D)."""
    out = []
    for n in itertools.product(range(-nmax, nmax + 1), repeat=3):
        if np.dot(n, n) <= n2max:
            out.append(2 * np.pi * np.array(n, dtype=float) / period)
    return out


# --------------------------------------------------------------------------
# synthesis


def half_cosine_window(kabs, kmax, taper=0.25):
    """1 up to ``(1 - taper) kmax``, half-cosine roll-off to 0 at ``kmax``."""
    kabs = np.asarray(kabs, dtype=float)
    k0 = (1 - taper) * kmax
    t = np.clip((kabs - k0) / max(kmax - k0, 1e-300), 0, 1)
    return 0.5 * (1 + np.cos(np.pi * t))


def reconstruct_delta_q(samples, grid, kmax=None, taper=0.25, truth=None, period_volume=None) -> ReconstructionResult:
    """Windowed Fourier synthesis ``sum_k w(|k|) F(k) e^{-i k.x} / |box|``."""
    kmax = kmax if kmax is not None else np.pi / (5 * grid.dx)
    vol = period_volume or float(np.prod([b - a for a, b in grid.extents]))
    pts = grid.points
    out = np.zeros(grid.size, dtype=complex)
    for s in samples:
        out += half_cosine_window(np.linalg.norm(s.k), kmax, taper) * s.value * np.exp(-1j * pts @ s.k)
    out /= vol
    dq = ScalarField(out, grid, "potential", {"kind": "delta_q"})
    dirs = sorted({s.direction for s in samples if np.linalg.norm(s.k) > 0} | {s.direction for s in samples})
    coverage = {"directions": dirs, "volumetric": len(dirs) >= 3,
                "flag": None if len(dirs) >= 3 else "slice-only"}
    metrics = reconstruction_metrics(dq, truth) if truth is not None else {}
    return ReconstructionResult(dq, list(samples), {"kind": "half_cosine", "kmax": kmax, "taper": taper}, metrics, coverage)


def reconstruction_metrics(dq: ScalarField, truth) -> dict:
    W = dq.grid.volume_weights.ravel()
    est = dq.values.ravel()
    tr = np.asarray(truth, dtype=complex).ravel()
    tn = np.sqrt(np.sum(W * np.abs(tr) ** 2))
    en = np.sqrt(np.sum(W * np.abs(est) ** 2))
    return {"rel_l2": float(np.sqrt(np.sum(W * np.abs(est - tr) ** 2)) / max(tn, 1e-300)),
            "max_err": float(np.max(np.abs(est - tr))),
            "imag_ratio": float(np.sqrt(np.sum(W * est.imag**2)) / max(en, 1e-300))}


def exact_samples(delta_q, grid, ks, directions=None):
    """Direct quadrature ``int delta_q e^{i k.x}`` (the truth for comparisons)."""
    W = grid.volume_weights.ravel()
    dq = np.asarray(delta_q).ravel()
    out = []
    for k in ks:
        v = complex(np.sum(W * dq * np.exp(1j * grid.points @ k)))
        out.append(FrequencySample(np.asarray(k), v, 0.0, [], [], "exact", -1))
    return out


# --------------------------------------------------------------------------
# full-data baseline and audits


def full_data_samples(domain: Domain, q1, q2, nd1: NdMap, nd2: NdMap, ks, h_list, extrapolation="none",
                      guard_factor=3.0):
    """Baseline with ``Gamma = Z = whole boundary`` (reads the full ND difference)."""
    g = domain.grid
    nb = len(g.boundary_index)
    full = BoundaryDecomposition(np.arange(nb), np.arange(nb), np.arange(nb), np.arange(nb), 0.0,
                                 g.boundary_normals, nb, [])
    setup = ReconSetup.__new__(ReconSetup)
    ReconSetup.__init__(setup, domain, q1, q2, nd1, nd2, directions=(), guard_factor=guard_factor)
    for ax in range(g.dim):
        wt = make_weight("linear", {"direction": np.eye(g.dim)[ax]})
        part = PartialNdMap(nd1, full.gamma, full.zed) - PartialNdMap(nd2, full.gamma, full.zed)
        free = np.zeros(g.size, dtype=bool)
        free[~g.boundary_mask.ravel()] = True
        lu = spla.splu(setup.A1[free][:, free].tocsc())
        setup.directions[ax] = DirectionSetup(ax, wt, full, part, full.zed, lu, free)
    return [recover_fourier_sample(setup, k, h_list, None, extrapolation) for k in ks]


def audit_reads(nd: NdMap, blocks, since: int = 0) -> int:
    """Entries read from ``nd`` that lie outside every allowed ``(rows, cols)`` block.

    Only log entries from index ``since`` on are audited, so reads made
    before a reconstruction started (assembly diagnostics) are not counted.
    """
    allowed = [(set(np.asarray(r).tolist()), set(np.asarray(c).tolist())) for r, c in blocks]
    bad = 0
    for r, c in nd.read_log[since:]:
        best = None
        for rs, cs in allowed:
            rin = sum(1 for x in r.tolist() if x in rs)
            cin = sum(1 for x in c.tolist() if x in cs)
            out = len(r) * len(c) - rin * cin
            best = out if best is None else min(best, out)
        bad += best if best is not None else len(r) * len(c)
    return int(bad)


def log_weight_for(axis: int, center, distance: float, dim: int = 3) -> Weight:
    """Log weight with pole ``center - distance * e_axis`` (outside the unit box for ``distance > 1``)."""
    pole = np.asarray(center, dtype=float) - distance * np.eye(dim)[axis]
    return make_weight("log_plus", {"pole": pole})
