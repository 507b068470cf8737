"""Complex geometrical optics solutions with remainders in conjugated variables.

A bundle represents ``u = e^{Theta/h} (a + r)`` with ``Theta = sign*phi + i psi``.
All remainder equations are posed for the conjugated discrete operator

    P = e^{-Theta/h} (K + W q) e^{Theta/h} / W,

whose entries only involve neighbour differences ``Theta_j - Theta_i`` and
so stay well scaled.  Free (growing) bundles default to a periodic
whole-space solve on a padded torus.  Constrained (decaying) bundles with
``d_nu u = 0`` on ``Z^c`` default to a reflected boundary layer plus a
minimum-norm correction.  The plain Dirichlet and mixed closures are kept
for comparison.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import fd
from .fields import ScalarField
from .forward import Potential
from .geometry import BoundaryDecomposition, Domain
from .weights import AmplitudeField, PhaseField, Weight

SOLVER_TOL = 1e-10
GUARD_FACTOR = 10.0
FREE_METHODS = ("faddeev", "dirichlet", "minnorm")
CONSTRAINED_METHODS = ("layer", "mixed")


class CgoError(RuntimeError):
    """Raised when a bundle cannot be built (solver failure, bad closure)."""


@dataclass
class CgoBundle:
    """A CGO solution ``e^{(sign*phi + i psi)/h}(a + r)`` sampled on a box grid.

    ``sign = -1`` (``minus_phi``) marks constrained bundles with
    ``d_nu u = 0`` on ``Z^c``.  ``sign = +1`` (``plus_phi``) marks free
    bundles.  ``norms`` holds ``r_L2``, ``pde_residual`` and, for
    constrained bundles, ``boundary_residual``.
    """

    weight: Weight
    phase: PhaseField
    amplitude: AmplitudeField
    h: float
    remainder: ScalarField
    sign: float
    norms: dict = field(default_factory=dict)
    descriptor: dict = field(default_factory=dict)

    @property
    def kind(self):
        return "minus_phi" if self.sign < 0 else "plus_phi"

    def exponent(self):
        return self.amplitude.exponent(self.remainder.grid.points)

    def values(self):
        """Reassembled ``u`` on the grid (exponentials stay bounded for bounded ``phi``)."""
        pts = self.remainder.grid.points
        a = self.amplitude.value(pts)
        return (np.exp(self.amplitude.exponent(pts) / self.h) * (a + self.remainder.values.ravel())).reshape(
            self.remainder.grid.shape)

    def row(self):
        out = {"kind": self.kind, "h": self.h, "method": self.descriptor.get("method")}
        out.update(self.norms)
        return out


# --------------------------------------------------------------------------
# discrete operators


def _q_values(q, grid):
    if isinstance(q, Potential):
        q = q.q
    if isinstance(q, ScalarField):
        q = q.values
    if callable(q):
        q = q(grid.points)
    v = np.asarray(q)
    v = (v.reshape(grid.shape) if v.size == grid.size else np.broadcast_to(v, grid.shape)).ravel()
    if np.iscomplexobj(v) and np.any(v.imag):
        raise CgoError("potential must be real")
    return np.real(v).astype(float)


def _first_diff_1d(n, dx):
    """Centred first difference with second-order one-sided rows at both ends."""
    m = sp.lil_matrix((n, n))
    for i in range(1, n - 1):
        m[i, i - 1], m[i, i + 1] = -0.5, 0.5
    m[0, :3] = [-1.5, 2.0, -0.5]
    m[n - 1, n - 3:] = [0.5, -2.0, 1.5]
    return m.tocsr() / dx


def _second_diff_1d(n, dx):
    return sp.diags([np.ones(n - 1), np.full(n, -2.0), np.ones(n - 1)], [-1, 0, 1], format="csr") / dx**2


def difference_operators(grid):
    """Per-axis first differences and the seven-point Laplacian (valid on interior rows)."""
    D = [fd._kron_axis_single(grid, a, _first_diff_1d(grid.resolution[a], grid.spacing[a])) for a in range(grid.dim)]
    L = sum(fd._kron_axis_single(grid, a, _second_diff_1d(grid.resolution[a], grid.spacing[a])) for a in range(grid.dim))
    return D, L


def expanded_matrix(grid, amp: AmplitudeField, h: float, qv):
    """Expanded conjugated operator ``e^{-Theta/h} h^2(-Lap + q) e^{Theta/h}`` acting on ``a + r``.

    ``-h^2 Lap - 2h grad(Theta).grad - (grad Theta . grad Theta) - h Lap(Theta) + h^2 q``
    with analytic ``Theta`` derivatives and finite differences on ``a + r``.
    Only the interior rows are meaningful.
    """
    pts = grid.points
    D, L = difference_operators(grid)
    gt = amp.exponent_grad(pts)
    diag = -np.sum(gt * gt, axis=1) - h * amp.exponent_lap(pts) + h * h * qv
    E = -h * h * L + sp.diags(diag)
    for a in range(grid.dim):
        E = E - 2 * h * sp.diags(gt[:, a]) @ D[a]
    return E.tocsr()


def robin_matrix(grid, amp: AmplitudeField, h: float, nodes):
    """Rows ``h d_nu v + d_nu(Theta) v`` at boundary nodes (indices into the boundary list).

    Applied to ``a + r`` this is ``h e^{-Theta/h} d_nu u``.
    """
    D, _ = difference_operators(grid)
    flat = grid.boundary_index[nodes]
    nu = grid.boundary_normals[nodes]
    gt = amp.exponent_grad(grid.points[flat])
    R = sp.diags(np.sum(gt * nu, axis=1)) @ sp.identity(grid.size, format="csr")[flat]
    for a in range(grid.dim):
        R = R + h * sp.diags(nu[:, a]) @ D[a][flat]
    return R.tocsr()


def _system(domain: Domain, q):
    if domain.shape != "box":
        raise CgoError("CGO bundles are built on box domains")
    g = domain.grid
    return g, g.volume_weights.ravel(), _q_values(q, g)


def _complex_splu(mat):
    try:
        return spla.splu(mat.tocsc())
    except RuntimeError as exc:  # singular factor
        raise CgoError(f"factorization failed: {exc} (singular pivot)") from exc


def _l2(v, W):
    return float(np.sqrt(np.sum(W * np.abs(v) ** 2)))


def _check_guard(grid, h, guard_factor):
    return bool(h >= guard_factor * grid.dx * (1 - 1e-9))


def _max_rel(v, scale):
    return float(np.max(np.abs(v)) / scale) if v.size else 0.0


# --------------------------------------------------------------------------
# free bundles


def _faddeev(domain: Domain, weight: Weight, phase: PhaseField, h, q_fn, qv, tol):
    """Whole-space remainder on a padded torus with the expanded-form difference symbol."""
    g = domain.grid
    d = weight.direction
    axis = int(np.argmax(np.abs(d)))
    if weight.kind != "linear" or not np.isclose(abs(d[axis]), 1.0):
        raise CgoError("the periodic solve needs an axis-aligned linear weight; use method='minnorm'")
    zeta = d + 1j * phase.omega
    shape_t, axes_t, sl = [], [], []
    for a in range(g.dim):
        n = g.resolution[a]
        m = 2 * (n - 1)
        pad = (n - 1) // 2
        x = g.extents[a][0] + g.spacing[a] * (np.arange(m) - pad)
        shape_t.append(m)
        axes_t.append(x)
        sl.append(slice(pad, pad + n))
    X = np.stack(np.meshgrid(*axes_t, indexing="ij"))
    sl = tuple(sl)
    # potential on the torus: smooth taper outside the box
    if q_fn is not None:
        qt = np.asarray(q_fn(X.reshape(g.dim, -1).T)).reshape(X.shape[1:])
    else:
        widths = [(s.start, shape_t[a] - s.stop) for a, s in enumerate(sl)]
        qt = np.pad(qv.reshape(g.shape), widths, mode="edge")
    tap = np.ones(X.shape[1:])
    for a in range(g.dim):
        lo, hi = g.extents[a]
        ramp = 0.6 * g.spacing[a] * ((g.resolution[a] - 1) // 2)
        s = np.clip(np.maximum(lo - X[a], X[a] - hi) / ramp, 0, 1)
        tap = tap * (1 - s**3 * (10 - 15 * s + 6 * s * s))
    qt = qt * tap
    qt[sl] = qv.reshape(g.shape)
    L = shape_t[axis] * g.spacing[axis]
    alpha = np.pi / L
    ks = []
    for a in range(g.dim):
        k = 2 * np.pi * np.fft.fftfreq(shape_t[a], g.spacing[a])
        if a == axis:
            k = k + alpha * np.sign(d[axis])
        ks.append(k)
    KS = np.meshgrid(*ks, indexing="ij")
    # symbol of -h^2 Lap_h - 2h zeta . D_h (centred differences)
    p = np.zeros(X.shape[1:], dtype=complex)
    for a in range(g.dim):
        dxa = g.spacing[a]
        p = p + h * h * (2 - 2 * np.cos(KS[a] * dxa)) / dxa**2 - 2j * h * zeta[a] * np.sin(KS[a] * dxa) / dxa
    if np.min(np.abs(p)) < 1e-14:
        raise CgoError("periodic symbol vanishes; shift the torus")
    G = 1.0 / p
    gauge = np.exp(-1j * alpha * np.sign(d[axis]) * X[axis])

    def app(v):
        return np.fft.ifftn(G * np.fft.fftn(v))

    shp = X.shape[1:]
    rhs = -h * h * app(qt * gauge)
    op = spla.LinearOperator((qt.size,) * 2, matvec=lambda v: v + h * h * app(qt * v.reshape(shp)).ravel(), dtype=complex)
    rho, info = spla.gmres(op, rhs.ravel(), rtol=tol, restart=60, maxiter=40)
    if info != 0:
        raise CgoError(f"GMRES did not converge (info={info}); min |symbol|/h = {np.min(np.abs(p)) / h:.3e}")
    r = (rho.reshape(shp) / gauge)[sl]
    return r.ravel(), {"torus": shape_t, "gmres_info": int(info)}


def _kkt_min_norm(P_rows, f, W, K, h):
    """Minimum semiclassical ``H^1`` norm solution of ``P_rows r = f``."""
    G = sp.diags(W) + h * h * K
    KKT = sp.bmat([[G, P_rows.conj().T], [P_rows, None]]).tocsc()
    lu = _complex_splu(KKT)
    sol = lu.solve(np.concatenate([np.zeros(len(W), dtype=complex), f]).astype(complex))
    return sol[: len(W)]


def build_cgo_free(domain: Domain, weight: Weight, phase: PhaseField, amp: AmplitudeField, h: float, q,
                   method: str | None = None, tol: float = SOLVER_TOL, guard_factor: float = GUARD_FACTOR,
                   q_fn=None) -> CgoBundle:
    """Growing CGO ``e^{(phi + i psi)/h}(a + r)`` solving ``(-Lap + q) u = 0`` in the box.

    Parameters
    ----------
    method : {'faddeev', 'dirichlet', 'minnorm'}, optional
        ``faddeev`` (default for axis-aligned linear weights) solves on a
        padded torus.  ``dirichlet`` imposes ``r = 0`` on the boundary.
        ``minnorm`` takes the interior equations with minimum ``H^1`` norm.
    q_fn : callable, optional
        Potential as a function of points, used to extend ``q`` off the box.
    """
    if amp.sign != 1:
        raise CgoError("free bundles need an amplitude with sign +1")
    if method is None:
        d = weight.direction
        method = "faddeev" if weight.kind == "linear" and np.isclose(np.max(np.abs(d)), 1.0) else "minnorm"
    if method not in FREE_METHODS:
        raise CgoError(f"unknown free method {method!r}")
    g, W, qv = _system(domain, q)
    pts = g.points
    E = expanded_matrix(g, amp, h, qv)
    a = amp.value(pts)
    b = g.boundary_mask.ravel()
    info = {"method": method}
    if method == "faddeev":
        if not amp.constant:
            raise CgoError("the periodic solve needs a constant amplitude")
        r, extra = _faddeev(domain, weight, phase, h, q_fn, qv, tol)
        r = r * a[0]
        info.update(extra)
    elif method == "dirichlet":
        free = ~b
        lu = _complex_splu(E[free][:, free])
        r = np.zeros(g.size, dtype=complex)
        r[free] = lu.solve(-(E[free] @ a))
    else:
        r = _kkt_min_norm(E[~b], -(E[~b] @ a), W, fd.stiffness(g), h)
    scale = h * h * max(np.max(np.abs(a + r)), 1e-300)
    norms = {"r_L2": _l2(r, W), "pde_residual": _max_rel((E @ (a + r))[~b], scale),
             "guard": _check_guard(g, h, guard_factor)}
    return CgoBundle(weight, phase, amp, h, ScalarField(r, g, "remainder", {"h": h}), 1.0, norms, info)


# --------------------------------------------------------------------------
# constrained bundles


def _zc_face(grid, zc_nodes):
    pts = grid.points[grid.boundary_index[zc_nodes]]
    for a in range(grid.dim):
        for side, val in ((0, grid.extents[a][0]), (1, grid.extents[a][1])):
            if np.allclose(pts[:, a], val):
                return a, side
    return None


def _layer(grid, amp, h, face, zc_nodes, ramp):
    """Reflected boundary layer ``chi e^{(Theta o R - Theta)/h} a o R`` for a flat face."""
    axis, side = face
    pts = grid.points
    plane = grid.extents[axis][side]
    refl = pts.copy()
    refl[:, axis] = 2 * plane - refl[:, axis]
    zp = grid.points[grid.boundary_index[zc_nodes]]
    chi = np.ones(grid.size)
    for t in range(grid.dim):
        if t == axis:
            continue
        lo, hi = zp[:, t].min(), zp[:, t].max()
        s_lo = np.clip((pts[:, t] - (lo - ramp)) / ramp, 0, 1)
        s_hi = np.clip(((hi + ramp) - pts[:, t]) / ramp, 0, 1)
        chi = chi * s_lo**3 * (10 - 15 * s_lo + 6 * s_lo**2) * s_hi**3 * (10 - 15 * s_hi + 6 * s_hi**2)
    expo = (amp.exponent(refl) - amp.exponent(pts)) / h
    return chi * np.exp(expo) * amp.value(refl)


def build_cgo_constrained(domain: Domain, weight: Weight, phase: PhaseField, amp: AmplitudeField, h: float, q,
                          dec: BoundaryDecomposition, method: str = "layer", tol: float = SOLVER_TOL,
                          guard_factor: float = GUARD_FACTOR, ramp: float = 0.1) -> CgoBundle:
    """Decaying CGO ``e^{(-phi + i psi)/h}(a + r)`` with ``d_nu u = 0`` on ``Z^c``.

    ``method='layer'`` (default) adds a reflected boundary layer on the flat
    face carrying ``Z^c``.  It then takes the minimum semiclassical ``H^1``
    correction solving the interior equations and the ``Z^c`` Neumann rows
    exactly.  ``method='mixed'`` solves the same rows with ``r = 0`` on ``Z``.
    The closure on ``Z`` is recorded in the descriptor.
    """
    if amp.sign != -1:
        raise CgoError("constrained bundles need an amplitude with sign -1")
    if method not in CONSTRAINED_METHODS:
        raise CgoError(f"unknown constrained method {method!r}")
    g, W, qv = _system(domain, q)
    pts = g.points
    a = amp.value(pts)
    b = g.boundary_mask.ravel()
    zc = dec.zed_c
    zc_mask = np.zeros(g.size, dtype=bool)
    zc_mask[g.boundary_index[zc]] = True
    E = expanded_matrix(g, amp, h, qv)
    R = robin_matrix(g, amp, h, zc)
    info = {"method": method, "closure_on_Z": "dirichlet r = 0" if method == "mixed" else "unconstrained (min H1 norm)",
            "n_zc": int(len(zc))}
    if len(zc) == 0:
        info["note"] = "Z covers the boundary; constraint set empty"
    # interior equations stacked over the Z^c Robin rows (ordered like the free unknowns for 'mixed')
    order = np.concatenate([np.flatnonzero(~b), g.boundary_index[zc]])
    Pr = sp.vstack([E[~b], R]).tocsr()
    if method == "mixed":
        dn = _robin_degeneracy(g, amp, zc, h)
        if dn is not None:
            info["warning"] = dn
        lu = _complex_splu(Pr[:, order])
        r = np.zeros(g.size, dtype=complex)
        r[order] = lu.solve(-(Pr @ a))
    else:
        if len(zc):
            face = _zc_face(g, zc)
            if face is None:
                raise CgoError("the layer closure needs Z^c on one flat face; use method='mixed'")
            lay = _layer(g, amp, h, face, zc, ramp)
            info["face"] = list(face)
        else:
            lay = np.zeros(g.size, dtype=complex)
        rc = _kkt_min_norm(Pr, -(Pr @ (a + lay)), W, fd.stiffness(g), h)
        r = lay + rc
        info["layer_L2"] = _l2(lay, W)
        info["correction_L2"] = _l2(rc, W)
    scale = h * h * max(np.max(np.abs(a + r)), 1e-300)
    norms = {"r_L2": _l2(r, W), "pde_residual": _max_rel((E @ (a + r))[~b], scale),
             "boundary_residual": _max_rel(R @ (a + r), h * max(np.max(np.abs(a + r)), 1e-300)),
             "guard": _check_guard(g, h, guard_factor)}
    return CgoBundle(weight, phase, amp, h, ScalarField(r, g, "remainder", {"h": h}), -1.0, norms, info)


def _robin_degeneracy(grid, amp, zc, h, floor=1e-8):
    """Warn when ``d_nu Theta`` vanishes on ``Z^c``; the one-sided ``h d_nu`` rows still close the system."""
    if len(zc) == 0:
        return None
    pts = grid.points[grid.boundary_index[zc]]
    nu = grid.boundary_normals[zc]
    dn = np.sum(amp.exponent_grad(pts) * nu, axis=1)
    if np.min(np.abs(dn)) < max(floor, h * 1e-6):
        return "Robin coefficient degenerate on Z^c; falling back to the one-sided normal-derivative rows"
    return None


def neumann_trace(bundle: CgoBundle, nodes=None):
    """Conjugated Neumann trace ``h e^{-Theta/h} d_nu u`` at boundary nodes (default: all)."""
    g = bundle.remainder.grid
    nodes = np.arange(len(g.boundary_index)) if nodes is None else np.asarray(nodes)
    R = robin_matrix(g, bundle.amplitude, bundle.h, nodes)
    return R @ (bundle.amplitude.value(g.points) + bundle.remainder.values.ravel())


def transport_defect(amp: AmplitudeField, h: float, q, grid) -> float:
    """``L^2`` norm of the conjugated equation applied to ``a`` alone (``r = 0``).

    With ``Theta`` eikonal and ``a`` transported this equals
    ``h^2 (-Lap a + q a)``, so it scales like ``h^2``.
    """
    pts = grid.points
    gt = amp.exponent_grad(pts)
    ga = amp.grad(pts)
    qv = q(pts) if callable(q) else np.broadcast_to(np.asarray(q, dtype=float).ravel(), (grid.size,))
    a = amp.value(pts)
    res = (-h * h * amp.lap(pts) - 2 * h * np.sum(gt * ga, axis=1) - np.sum(gt * gt, axis=1) * a
           - h * amp.exponent_lap(pts) * a + h * h * qv * a)
    return _l2(res, grid.volume_weights.ravel())


# --------------------------------------------------------------------------
# decay fits


@dataclass(frozen=True)
class DecayFit:
    slope: float
    stderr: float
    n_points: int
    threshold: float
    passed: bool
    intercept: float


def validate_decay(series, threshold: float = 0.4, min_points: int = 3) -> DecayFit:
    """Least-squares slope of ``log norm`` against ``log h``.

    ``series`` holds ``(h, norm)`` or ``(h, norm, guard_ok)`` tuples; points
    failing the guard are dropped.
    """
    pts = []
    for item in series:
        h, v = float(item[0]), float(item[1])
        ok = bool(item[2]) if len(item) > 2 else True
        if ok and h > 0 and v > 0 and np.isfinite(v):
            pts.append((h, v))
    if len(pts) < min_points:
        raise CgoError(f"need at least {min_points} valid (h, norm) points, got {len(pts)}")
    x = np.log([p[0] for p in pts])
    y = np.log([p[1] for p in pts])
    A = np.vstack([x, np.ones_like(x)]).T
    coef, res, *_ = np.linalg.lstsq(A, y, rcond=None)
    n = len(x)
    resid = y - A @ coef
    s2 = float(resid @ resid) / max(n - 2, 1)
    stderr = float(np.sqrt(s2 / max(np.sum((x - x.mean()) ** 2), 1e-300)))
    slope = float(coef[0])
    return DecayFit(slope, stderr, n, threshold, bool(slope >= threshold), float(coef[1]))
