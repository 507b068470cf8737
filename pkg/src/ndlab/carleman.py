"""Conjugated operators and numerical checks of boundary Carleman estimates.

Operators are applied in expanded coefficient form.  For a weight ``phi``::

    L_phi w     = h^2 Lap w - 2 grad(phi) . h grad w + (|grad phi|^2 - h Lap phi) w
    L_{phi,q} w = -L_phi w + h^2 q w        ( = e^{phi/h} h^2 (-Lap + q) e^{-phi/h} w )

The convexified operator uses ``phi_c`` in place of ``phi``.  The flattened
graph form and the radial log form are applied with their own coefficient
formulas on computational boxes.

Test functions ``w = e^{phi/h} v`` are built so that ``v`` vanishes near
``Gamma`` and ``d_nu v = sigma v`` on the part of ``Gamma^c`` they touch.
This is the boundary condition ``h d_nu w = (d_nu phi + h sigma) w``.
Probes live on a box over their own support.  Everything outside that box
is zero, so no integral or boundary term is lost.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from . import fd
from .fields import ScalarField, physical_gradient, scl_norm
from .geometry import GraphFunction
from .grid import Grid
from .multipliers import spectral_derivative
from .weights import Weight, convexify

VARIANTS = ("L_phi", "L_phi_q", "L_phi_eps", "L_tilde_graph", "L_tilde_log", "L_minus_phi_q")
EPS_DEFAULT = 1.0 / 8.0
GUARD_FACTOR = 10.0


class CarlemanError(ValueError):
    """Raised for inconsistent operator variants or unsatisfiable probes."""


# --------------------------------------------------------------------------
# derivatives in physical coordinates


def _physical_points(grid: Grid, graph: GraphFunction | None):
    pts = grid.points.copy()
    if graph is not None:
        pts[:, -1] += graph.f(pts[:, :-1].T)
    return pts


def _derivatives(u, grid: Grid, graph=None, method="fd"):
    """Physical gradient ``(dim,)+shape`` and Laplacian of ``u``."""
    if method == "spectral":
        if graph is not None:
            raise CarlemanError("spectral derivatives are available on flat boxes only")
        g = np.stack([spectral_derivative(u, grid.spacing[a], axis=a) for a in range(grid.dim)])
        lap = sum(spectral_derivative(u, grid.spacing[a], axis=a, order=2) for a in range(grid.dim))
        return g, lap
    if graph is None:
        return fd.gradient(u, grid), fd.laplacian(u, grid)
    n = grid.dim - 1
    xs = grid.coords[:-1].reshape(n, -1)
    fx = graph.grad(xs).reshape((n,) + grid.shape)
    lapf = graph.lap(xs).reshape(grid.shape)
    ut = fd.d1(u, grid, n)
    grad = physical_gradient(u, grid, graph)
    lap = fd.d2(u, grid, n) * (1 + np.sum(fx * fx, axis=0)) - lapf * ut
    for a in range(n):
        lap = lap + fd.d2(u, grid, a) - 2 * fx[a] * fd.d1(ut, grid, a)
    return grad, lap


# --------------------------------------------------------------------------
# operators


@dataclass(frozen=True)
class ConjugatedOperator:
    """A conjugated Schrodinger operator in expanded form.

    Attributes
    ----------
    variant : str
        One of ``L_phi, L_phi_q, L_phi_eps, L_tilde_graph, L_tilde_log,
        L_minus_phi_q``.
    weight : Weight
        The (unconvexified) weight ``phi``.
    h : float
    q : callable or ndarray, optional
        Potential as a function of physical points or as node values.
    eps : float, optional
        Convexification scale; ``None`` or ``inf`` is the ``eps -> inf`` limit.
    graph : GraphFunction, optional
        Graph ``f``; the field then lives on the flattened box.
    radial_scale : callable, optional
        ``f(theta)`` for the log form (``L_tilde_log``); default ``f = 1``.
    derivatives : {'fd', 'spectral'}
    """

    variant: str
    weight: Weight | None
    h: float
    q: Callable | np.ndarray | None = None
    eps: float | None = None
    graph: GraphFunction | None = None
    radial_scale: Callable | None = None
    derivatives: str = "fd"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise CarlemanError(f"unknown operator variant {self.variant!r}")
        if self.variant in ("L_phi_q", "L_minus_phi_q") and self.q is None:
            raise CarlemanError(f"{self.variant} needs a potential q")
        if self.variant in ("L_phi", "L_phi_eps", "L_phi_q", "L_minus_phi_q") and self.weight is None:
            raise CarlemanError(f"{self.variant} needs a weight")
        if not self.h > 0:
            raise CarlemanError("h must be positive")

    @property
    def eps_limit(self):
        return self.eps is None or not np.isfinite(self.eps)

    def effective_weight(self):
        w = self.weight.negated() if self.variant == "L_minus_phi_q" else self.weight
        if self.variant == "L_phi_eps":
            return convexify(w, self.h, self.eps, limit=self.eps_limit)
        return w

    def q_values(self, grid: Grid, pts):
        if self.q is None:
            return 0.0
        if callable(self.q):
            return np.asarray(self.q(pts)).reshape(grid.shape)
        return np.broadcast_to(self.q, grid.shape)

    def describe(self):
        return {"variant": self.variant, "h": self.h, "eps": None if self.eps_limit else self.eps,
                "weight": None if self.weight is None else self.weight.describe(),
                "graph": None if self.graph is None else self.graph.descriptor}


def apply_conjugated(op: ConjugatedOperator, w: ScalarField) -> ScalarField:
    """Apply ``op`` to ``w`` in expanded form with second-order (or spectral) stencils."""
    grid = w.grid
    u = w.values
    h = op.h
    if op.variant == "L_tilde_graph":
        return w.with_values(_apply_tilde_graph(op, u, grid), role="generic")
    if op.variant == "L_tilde_log":
        return w.with_values(_apply_tilde_log(op, u, grid), role="generic")
    pts = _physical_points(grid, op.graph)
    wt = op.effective_weight()
    gphi = wt.grad(pts).T.reshape((grid.dim,) + grid.shape)
    lphi = wt.lap(pts).reshape(grid.shape)
    grad, lap = _derivatives(u, grid, op.graph, op.derivatives)
    lphi_w = h * h * lap - 2 * h * np.sum(gphi * grad, axis=0) + (np.sum(gphi * gphi, axis=0) - h * lphi) * u
    if op.variant in ("L_phi", "L_phi_eps"):
        out = lphi_w
    else:
        out = -lphi_w + h * h * op.q_values(grid, pts) * u
    return w.with_values(out, role="generic")


def _apply_tilde_graph(op, u, grid):
    h = op.h
    gf = op.graph or GraphFunction.linear(np.zeros(grid.dim - 1))
    n = grid.dim - 1
    xs = grid.coords[:-1].reshape(n, -1)
    fx = gf.grad(xs).reshape((n,) + grid.shape)
    y = grid.coords[-1]
    alpha = 1.0 if op.eps_limit else 1.0 + (h / op.eps) * (y + gf.f(xs).reshape(grid.shape))
    ut = fd.d1(u, grid, n)
    out = (1 + np.sum(fx * fx, axis=0)) * h * h * fd.d2(u, grid, n) - 2 * alpha * h * ut
    for a in range(n):
        out = out - 2 * fx[a] * h * h * fd.d1(ut, grid, a) + h * h * fd.d2(u, grid, a)
    return out + alpha * alpha * u


def _apply_tilde_log(op, u, grid):
    """Radial log form on a box in ``(theta_1, ..., theta_n, r)`` with ``r >= 1``."""
    h = op.h
    n = grid.dim - 1
    th = grid.coords[:-1]
    r = grid.coords[-1]
    if np.min(r) < 1 - 1e-12:
        raise CarlemanError("the radial form lives on r >= 1")
    if n > 2:
        raise CarlemanError("the radial form supports one or two angles")
    scale = op.radial_scale or (lambda *a: np.ones_like(a[0]))
    logf = np.log(scale(*th))
    # sphere metric in the coordinates: g = diag(1, sin^2 theta_1)
    ginv = [np.ones(grid.shape)] if n == 1 else [np.ones(grid.shape), 1.0 / np.sin(th[0]) ** 2]
    dlogf = [fd.d1(logf, grid, a) for a in range(n)]
    gamma2 = sum(ginv[a] * dlogf[a] ** 2 for a in range(n))
    alpha = 1.0 if op.eps_limit else 1.0 + (h / op.eps) * (np.log(r) + logf)
    ur = fd.d1(u, grid, n)
    beta_grad = sum(ginv[a] * dlogf[a] * h * fd.d1(ur, grid, a) for a in range(n))
    sphere = sum(ginv[a] * fd.d2(u, grid, a) for a in range(n))
    if n == 2:
        sphere = sphere + np.cos(th[0]) / np.sin(th[0]) * fd.d1(u, grid, 0)
    return ((1 + gamma2) * h * h * fd.d2(u, grid, n) - (2 / r) * (alpha * h * ur + h * beta_grad)
            + (alpha * alpha * u + h * h * sphere) / r**2)


# --------------------------------------------------------------------------
# boundary conditions and probes


@dataclass(frozen=True)
class ProbeRegion:
    """Computational slab in which probes are built.

    ``extents_x`` are the tangential intervals of the slab, ``height`` its
    thickness above the (flattened) bottom face, and ``window`` the
    tangential rectangle of the constrained face part (``Gamma^c`` or
    ``Z^c``) that probes may touch.
    """

    extents_x: tuple
    height: float
    window: tuple
    graph: GraphFunction | None = None


@dataclass(frozen=True)
class BoundaryCondition:
    """Carleman boundary condition on one face of a slab.

    ``side='gamma_version'``: ``w = d_nu w = 0`` on ``Gamma`` and
    ``h d_nu w = (d_nu phi + h sigma) w`` on ``Gamma^c`` (bottom face).
    ``side='zed_version'``: ``w = d_nu w = 0`` on ``Z`` and
    ``h d_nu(e^{phi/h} w) = h sigma e^{phi/h} w`` on ``Z^c`` (top face).
    """

    sigma: Callable
    sigma_sup: float
    region: ProbeRegion
    side: str = "gamma_version"
    dec: object = None
    stashed: tuple | None = field(default=None, repr=False, compare=False)

    @property
    def face(self):
        return "bottom" if self.side == "gamma_version" else "top"


def make_bc(region: ProbeRegion, sigma=0.0, side="gamma_version", dec=None) -> BoundaryCondition:
    """Boundary condition with ``sigma`` a constant or a callable of tangential points ``(n, npts)``."""
    if callable(sigma):
        xs = np.stack(np.meshgrid(*[np.linspace(lo, hi, 33) for lo, hi in region.window], indexing="ij")).reshape(len(region.window), -1)
        sup = float(np.max(np.abs(sigma(xs))))
        fn = sigma
    else:
        s0 = float(sigma)
        sup = abs(s0)
        fn = lambda x, s0=s0: np.full(np.shape(x)[1], s0)
    return BoundaryCondition(fn, sup, region, side, dec)


def _bump(u):
    """``(1 - u^2)^4`` on ``|u| < 1``: even, C^3, supported in ``(-1, 1)``."""
    return np.where(np.abs(u) < 1, (1 - np.minimum(u * u, 1.0)) ** 4, 0.0)


def _dbump(u):
    return np.where(np.abs(u) < 1, -8 * u * (1 - np.minimum(u * u, 1.0)) ** 3, 0.0)


@dataclass(frozen=True)
class Probe:
    """Randomized probe profile ``v = chi(x) eta(s) + s zeta(s) c(x)``.

    ``s`` is the distance to the constrained face in the flattened
    variable.  ``chi`` is a product of bumps with random centres, widths and
    a low-frequency modulation; ``eta`` and ``zeta`` are even bumps of
    heights ``ell`` and ``ell2``; ``c`` enforces ``d_nu v = sigma v``.
    """

    centers: np.ndarray
    widths: np.ndarray
    ell: float
    ell2: float
    modes: np.ndarray
    amps: np.ndarray
    kind: str = "standard"

    def support_x(self):
        return [(c - w, c + w) for c, w in zip(self.centers, self.widths)]

    def chi(self, x):
        """``chi`` and its gradient at tangential points ``x`` of shape ``(n, ...)``."""
        n = len(self.centers)
        parts = [_bump((x[a] - self.centers[a]) / self.widths[a]) for a in range(n)]
        dparts = [_dbump((x[a] - self.centers[a]) / self.widths[a]) / self.widths[a] for a in range(n)]
        # modes has shape (n_modes, n): one wave vector per row
        arg = np.tensordot(self.modes, np.asarray(x), axes=(1, 0))
        mod = 1 + np.real(np.tensordot(self.amps, np.exp(1j * arg), axes=(0, 0)))
        dmod = [np.real(np.tensordot(self.amps * 1j * self.modes[:, a], np.exp(1j * arg), axes=(0, 0)))
                for a in range(n)]
        base = np.prod(parts, axis=0)
        grad = []
        for a in range(n):
            ga = dparts[a] * np.prod([parts[b] for b in range(n) if b != a], axis=0) if n > 1 else dparts[a]
            grad.append(ga * mod + base * dmod[a])
        return base * mod, np.stack(grad)


def random_probe(region: ProbeRegion, rng, h, kind="standard", dx=None) -> Probe:
    """Draw a probe whose support stays inside the window and below ``0.6 * height``."""
    n = len(region.window)
    lo = np.array([a for a, _ in region.window])
    hi = np.array([b for _, b in region.window])
    span = hi - lo
    if np.any(span <= 0):
        raise CarlemanError("the constrained face part is empty: no compliant probe exists")
    if kind == "adversarial":
        # concentrate on the constrained face: thin normal profile, tight chi
        widths = 0.25 * span
        ell = max(2.5 * h, 12 * (dx or 0.0))
    else:
        widths = span * rng.uniform(0.25, 0.45, n)
        ell = region.height * rng.uniform(0.3, 0.6)
    ell = min(ell, 0.6 * region.height)
    centers = lo + widths + (span - 2 * widths) * rng.uniform(0, 1, n)
    n_modes = 2
    modes = rng.normal(0, 6.0, (n_modes, n)) if kind == "standard" else np.zeros((1, n))
    amps = rng.uniform(-0.3, 0.3, n_modes) if kind == "standard" else np.zeros(1)
    ell2 = ell * (0.5 if kind == "standard" else 0.8)
    return Probe(centers, widths, ell, ell2, modes, amps, kind)


def probe_grid(region: ProbeRegion, probe: Probe, dx: float, face="bottom"):
    """Smallest box grid of spacing about ``dx`` containing the probe support."""
    ext = []
    res = []
    for (a, b), (lo, hi) in zip(probe.support_x(), region.extents_x):
        a = max(lo, a - 3 * dx)
        b = min(hi, b + 3 * dx)
        ext.append((a, b))
        res.append(max(8, int(np.ceil((b - a) / dx)) + 1))
    top = min(region.height, max(probe.ell, probe.ell2) + 3 * dx)
    if face == "bottom":
        ext.append((0.0, top))
    else:
        ext.append((region.height - top, region.height))
    res.append(max(8, int(np.ceil(top / dx)) + 1))
    return Grid(ext, res)


def probe_profile(probe: Probe, bc: BoundaryCondition, grid: Grid):
    """Profile ``v`` on the flattened grid with ``d_nu v = sigma v`` on the face."""
    region = bc.region
    n = grid.dim - 1
    x = grid.coords[:-1]
    t = grid.coords[-1]
    tau = -1.0 if bc.face == "bottom" else 1.0
    s = t if bc.face == "bottom" else region.height - t
    chi, dchi = probe.chi(x)
    xs = x.reshape(n, -1)
    sig = bc.sigma(xs).reshape(grid.shape)
    if region.graph is not None:
        fx = region.graph.grad(xs).reshape((n,) + grid.shape)
    else:
        fx = np.zeros((n,) + grid.shape)
    N2 = 1 + np.sum(fx * fx, axis=0)
    N = np.sqrt(N2)
    # eta(0) = 1 and eta'(0) = 0; c fixes the normal derivative
    c = -(tau * np.sum(fx * dchi, axis=0) + N * sig * chi) / N2
    eta = _bump(s / probe.ell)
    zeta = _bump(s / probe.ell2)
    return chi * eta + s * zeta * c


@dataclass(frozen=True)
class TestFunction:
    w: ScalarField
    v: np.ndarray
    probe: Probe
    shift: float
    face: str


def generate_test_function(bc: BoundaryCondition, weight: Weight, h: float, seed=0, dx=0.01,
                           kind="standard", probe: Probe | None = None) -> TestFunction:
    """Compliant test function ``w = e^{(phi - phi_max)/h} v`` on the probe's own grid.

    For the ``zed_version`` the exponent sign flips: ``w = e^{-phi/h} v`` so
    that ``e^{phi/h} w = v`` obeys the Neumann-type condition on ``Z^c``.
    The constant shift ``phi_max`` only rescales ``w``.
    """
    rng = np.random.default_rng(seed)
    probe = probe or random_probe(bc.region, rng, h, kind, dx)
    grid = probe_grid(bc.region, probe, dx, bc.face)
    v = probe_profile(probe, bc, grid)
    pts = _physical_points(grid, bc.region.graph)
    sgn = 1.0 if bc.side == "gamma_version" else -1.0
    expo = sgn * weight.phi(pts).reshape(grid.shape) / h
    shift = float(np.max(expo))
    w = ScalarField(np.exp(expo - shift) * v, grid, "test", {"h": h, "seed": seed, "kind": probe.kind})
    return TestFunction(w, v, probe, shift, bc.face)


def face_index(grid: Grid, face: str):
    """Boundary-node indices (into ``grid.boundary_index``) of the bottom or top face."""
    side = 0 if face == "bottom" else 1
    mask = grid.face_mask((grid.dim - 1, side)).ravel()[grid.boundary_index]
    return np.flatnonzero(mask)


def bc_residual(tf: TestFunction, bc: BoundaryCondition, weight: Weight, h: float):
    """Max of ``|h d_nu w - (d_nu phi + h sigma) w|`` (or the ``Z^c`` analogue) over the face, relative to ``max |w|``."""
    grid = tf.w.grid
    graph = bc.region.graph
    g = physical_gradient(tf.w.values, grid, graph)
    n = grid.dim - 1
    side = 0 if tf.face == "bottom" else -1
    sl = (slice(None),) * n + (side,)
    tau = -1.0 if tf.face == "bottom" else 1.0
    xs = grid.coords[:-1][(slice(None),) + sl].reshape(n, -1)
    fx = graph.grad(xs) if graph is not None else np.zeros_like(xs)
    nu = np.vstack([-tau * fx, tau * np.ones(xs.shape[1])])
    nu = nu / np.linalg.norm(nu, axis=0)
    gb = np.stack([gi[sl].ravel() for gi in g])
    dn = np.sum(nu * gb, axis=0)
    pts = _physical_points(grid, graph).T.reshape((grid.dim,) + grid.shape)
    pb = np.stack([p[sl].ravel() for p in pts]).T
    dphi = np.sum(weight.grad(pb).T * nu, axis=0)
    wb = tf.w.values[sl].ravel()
    sig = bc.sigma(xs)
    if bc.side == "gamma_version":
        res = h * dn - (dphi + h * sig) * wb
    else:
        # h d_nu(e^{phi/h} w) = h sigma e^{phi/h} w  <=>  h d_nu w = (-d_nu phi + h sigma) w
        res = h * dn - (-dphi + h * sig) * wb
    return float(np.max(np.abs(res)) / max(np.max(np.abs(tf.w.values)), 1e-300))


# --------------------------------------------------------------------------
# estimates


@dataclass
class CarlemanReport:
    """One evaluation of the estimate.

    ``boundary`` is ``h ||w||^2_{H^1(face)}`` and ``volume`` is
    ``h^2 ||w||^2_{H^1}``.  ``rhs`` is ``||L w||^2`` and ``ratio`` is
    ``rhs / (boundary + volume)``.  ``guard`` is false when ``h < 10 dx``;
    the report is then unreliable.
    """

    h: float
    probe: int
    boundary: float
    volume: float
    rhs: float
    ratio: float
    guard: bool
    dx: float
    terms: dict = field(default_factory=dict)
    descriptor: dict = field(default_factory=dict)

    @property
    def reliable(self):
        return self.guard

    def row(self):
        out = {"h": self.h, "probe": self.probe, "boundary": self.boundary, "volume": self.volume,
               "rhs": self.rhs, "ratio": self.ratio, "guard": int(self.guard), "dx": self.dx}
        out.update(self.terms)
        return out


def evaluate_estimate(op: ConjugatedOperator, tf: TestFunction, bc: BoundaryCondition, h: float,
                      probe_id: int = 0, guard_factor=GUARD_FACTOR, prop_variant=True) -> CarlemanReport:
    """Evaluate both sides of the boundary Carleman estimate for one test function."""
    w = tf.w
    grid = w.grid
    graph = bc.region.graph
    face = face_index(grid, tf.face)
    guard = h >= guard_factor * grid.dx * (1 - 1e-9)
    if not np.any(w.values):
        return CarlemanReport(h, probe_id, 0.0, 0.0, 0.0, float("nan"), guard, grid.dx, {"vacuous": 1})
    lw = apply_conjugated(op, w)
    rhs = scl_norm(lw, h, "L2") ** 2
    b_l2 = scl_norm(w, h, "boundary_L2", face, graph) ** 2
    b_h1 = scl_norm(w, h, "boundary_H1", face, graph) ** 2
    vol = scl_norm(w, h, "H1", None, graph) ** 2
    boundary = h * b_h1
    volume = h * h * vol
    terms = {"bdry_l2": h * b_l2, "bdry_grad": h * (b_h1 - b_l2), "vol_l2": h * h * scl_norm(w, h, "L2") ** 2}
    terms["vol_grad"] = volume - terms["vol_l2"]
    if prop_variant:
        # convexified operator: h^{1/2}|w|_{L2(face)} + (h/sqrt(eps))|w|_{H1}
        #   <~ |L_{phi,eps} w| + h^{1/2} |h grad_t w|_{L2(face)}
        eps = op.eps if (op.eps is not None and np.isfinite(op.eps)) else EPS_DEFAULT
        base = op.weight.negated() if op.variant == "L_minus_phi_q" else op.weight
        if base is not None and op.variant not in ("L_tilde_graph", "L_tilde_log"):
            opc = ConjugatedOperator("L_phi_eps", base, h, eps=eps, graph=op.graph)
            lc = scl_norm(apply_conjugated(opc, w), h, "L2")
            lhs_c = np.sqrt(h * b_l2) + h / np.sqrt(eps) * np.sqrt(vol)
            rhs_c = lc + np.sqrt(h * max(b_h1 - b_l2, 0.0))
            terms["prop_lhs"] = float(lhs_c)
            terms["prop_rhs"] = float(rhs_c)
            terms["prop_ratio"] = float(rhs_c / lhs_c)
    return CarlemanReport(h, probe_id, float(boundary), float(volume), float(rhs), float(rhs / (boundary + volume)),
                          bool(guard), grid.dx, terms, {"probe": tf.probe.kind, "face": tf.face})


@dataclass
class ScanSummary:
    reports: list
    min_ratio: float
    min_ratio_per_h: dict
    slopes: dict
    h_empirical: float | None
    reliable: bool
    prop_min_ratio: float | None = None

    def as_dict(self):
        return {"min_ratio": self.min_ratio, "min_ratio_per_h": {str(k): v for k, v in self.min_ratio_per_h.items()},
                "slopes": self.slopes, "h_empirical": self.h_empirical, "reliable": self.reliable,
                "prop_min_ratio": self.prop_min_ratio, "n_reports": len(self.reports)}


def _fit_slope(hs, vals):
    hs = np.asarray(hs, dtype=float)
    vals = np.asarray(vals, dtype=float)
    ok = vals > 0
    if ok.sum() < 2:
        return float("nan")
    return float(np.polyfit(np.log(hs[ok]), np.log(vals[ok]), 1)[0])


def h_scan(op_factory: Callable, bc: BoundaryCondition, weight: Weight, h_list, probes: int = 20, dx: float = 0.01,
           seed: int = 0, ratio_floor: float = 0.0, kind="standard", guard_factor=GUARD_FACTOR) -> ScanSummary:
    """Scan ``h`` with a fixed probe family.

    ``op_factory(h)`` returns the operator at ``h``.  Probe ``j`` uses the seed
    ``seed + j`` at every ``h``.  The normal profile of adversarial probes
    scales with ``h``.
    """
    if probes < 1:
        raise CarlemanError("need at least one probe")
    reports = []
    rng = np.random.default_rng(seed)
    fixed = [random_probe(bc.region, np.random.default_rng(seed + j), min(h_list), kind, dx) for j in range(probes)]
    del rng
    for h in h_list:
        op = op_factory(h)
        for j in range(probes):
            pr = fixed[j] if kind == "standard" else random_probe(bc.region, np.random.default_rng(seed + j), h, kind, dx)
            tf = generate_test_function(bc, weight, h, seed + j, dx, kind, probe=pr)
            reports.append(evaluate_estimate(op, tf, bc, h, j, guard_factor))
    per_h = {}
    for h in h_list:
        per_h[float(h)] = float(min(r.ratio for r in reports if r.h == h))
    slopes = {}
    for term in ("boundary", "volume", "rhs"):
        med = [np.median([getattr(r, term) for r in reports if r.h == h]) for h in h_list]
        slopes[term] = _fit_slope(h_list, med)
    hs_sorted = sorted(per_h)
    h_emp = None
    for h in hs_sorted:
        if per_h[h] >= ratio_floor and all(per_h[k] >= ratio_floor for k in hs_sorted if k <= h):
            h_emp = h
    prop = [r.terms["prop_ratio"] for r in reports if "prop_ratio" in r.terms]
    return ScanSummary(reports, float(min(per_h.values())), per_h, slopes, h_emp, all(r.guard for r in reports),
                       float(min(prop)) if prop else None)


def reverse_variant(op: ConjugatedOperator, bc: BoundaryCondition):
    """Operator ``L_{-phi,q}`` with the ``Z``-side condition (roles of the boundary parts swapped).

    Applying it twice returns the original configuration.
    """
    if op.variant == "L_phi_q":
        new = replace(op, variant="L_minus_phi_q")
    elif op.variant == "L_minus_phi_q":
        new = replace(op, variant="L_phi_q")
    else:
        raise CarlemanError("reversal is defined for L_phi_q and L_minus_phi_q")
    side = "zed_version" if bc.side == "gamma_version" else "gamma_version"
    dec = bc.dec.reversed() if bc.dec is not None else None
    if side == "zed_version":
        # the Z^c condition carries no sigma; keep it for the way back
        zero = lambda x: np.zeros(np.shape(x)[1])
        return new, replace(bc, side=side, dec=dec, sigma=zero, sigma_sup=0.0, stashed=(bc.sigma, bc.sigma_sup))
    sigma, sup = bc.stashed if bc.stashed is not None else (bc.sigma, bc.sigma_sup)
    return new, replace(bc, side=side, dec=dec, sigma=sigma, sigma_sup=sup, stashed=None)


def window_from_decomposition(domain, dec, face="bottom", use="gamma_c"):
    """Tangential bounding box of ``Gamma^c`` (or ``Z^c``) nodes on the flattened face, shrunk by one spacing."""
    grid = domain.grid
    nodes = getattr(dec, use)
    comp = grid.points[grid.boundary_index[nodes]]
    n = grid.dim - 1
    if comp.size == 0:
        raise CarlemanError("the constrained face part is empty")
    out = []
    for a in range(n):
        out.append((comp[:, a].min() + grid.spacing[a], comp[:, a].max() - grid.spacing[a]))
    return tuple(out)
