"""Limiting Carleman weights, eikonal partners and transport amplitudes.

All evaluators are closed-form closures acting on point arrays of shape
``(npts, dim)``.  Finite differences appear only in the gate check of the
log-case amplitude (see :func:`cauchy_riemann_residual`).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import Domain, GeometryError, check_pole_outside

THETA_MIN = 0.2


class WeightError(ValueError):
    """Raised for invalid weight parameters or phase directions."""


def _unit(v, name):
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v)
    if not np.isfinite(n) or n == 0:
        raise WeightError(f"{name} must be a nonzero vector")
    if abs(n - 1) > 1e-12:
        raise WeightError(f"{name} must be a unit vector (norm {n:.6g})")
    return v


@dataclass(frozen=True)
class Weight:
    """Carleman weight ``phi``.

    ``linear``: ``phi = direction . x``.  ``log_plus``/``log_minus``:
    ``phi = +-log|x - p|``.  ``scale`` multiplies ``phi`` (used only for
    rescaling checks).
    """

    kind: str
    direction: np.ndarray | None = None
    pole: np.ndarray | None = None
    scale: float = 1.0

    @property
    def dim(self):
        return len(self.direction if self.direction is not None else self.pole)

    @property
    def sign(self):
        return -1.0 if self.kind == "log_minus" else 1.0

    def _rel(self, x):
        return np.atleast_2d(x) - self.pole

    def phi(self, x):
        x = np.atleast_2d(x)
        if self.kind == "linear":
            return self.scale * (x @ self.direction)
        return self.scale * self.sign * np.log(np.linalg.norm(self._rel(x), axis=1))

    def grad(self, x):
        x = np.atleast_2d(x)
        if self.kind == "linear":
            return self.scale * np.broadcast_to(self.direction, x.shape).copy()
        y = self._rel(x)
        return self.scale * self.sign * y / np.sum(y * y, axis=1, keepdims=True)

    def lap(self, x):
        x = np.atleast_2d(x)
        if self.kind == "linear":
            return np.zeros(len(x))
        r2 = np.sum(self._rel(x) ** 2, axis=1)
        return self.scale * self.sign * (x.shape[1] - 2) / r2

    def negated(self):
        """The weight ``-phi``."""
        if self.kind == "linear":
            return Weight("linear", -self.direction, None, self.scale)
        flip = {"log_plus": "log_minus", "log_minus": "log_plus"}[self.kind]
        return Weight(flip, None, self.pole, self.scale)

    def rescaled(self, c):
        if c <= 0:
            raise WeightError("rescaling constant must be positive")
        return Weight(self.kind, self.direction, self.pole, self.scale * c)

    def describe(self):
        out = {"kind": self.kind, "scale": self.scale}
        if self.direction is not None:
            out["direction"] = self.direction.tolist()
        if self.pole is not None:
            out["pole"] = self.pole.tolist()
        return out


def make_weight(kind: str, params: dict | None = None, domain: Domain | None = None) -> Weight:
    """Build a weight; log kinds reject poles inside the domain hull when ``domain`` is given.

    Parameters
    ----------
    kind : {'linear', 'log_plus', 'log_minus'}
    params : dict
        ``direction`` (unit vector) for ``linear``; ``pole`` for log kinds.
    """
    params = params or {}
    if kind == "linear":
        return Weight("linear", direction=_unit(params["direction"], "direction"))
    if kind in ("log_plus", "log_minus"):
        p = np.asarray(params["pole"], dtype=float)
        if domain is not None:
            corners, ball = domain.hull_vertices()
            try:
                if ball is not None:
                    check_pole_outside(p, centers=ball[0], radius=ball[1])
                else:
                    check_pole_outside(p, corners=corners)
            except GeometryError as exc:
                raise WeightError(str(exc)) from exc
        return Weight(kind, pole=p)
    raise WeightError(f"unknown weight kind {kind!r}")


# --------------------------------------------------------------------------
# phases and amplitudes


@dataclass(frozen=True)
class PhaseField:
    """Eikonal partner ``psi`` of a weight, generated by the unit vector ``omega``."""

    weight: Weight
    omega: np.ndarray

    def psi(self, x):
        x = np.atleast_2d(x)
        if self.weight.kind == "linear":
            return x @ self.omega
        y = self.weight._rel(x)
        r = np.linalg.norm(y, axis=1)
        return np.arccos(np.clip(y @ self.omega / r, -1.0, 1.0))

    def grad(self, x):
        x = np.atleast_2d(x)
        if self.weight.kind == "linear":
            return np.broadcast_to(self.omega, x.shape).copy()
        y = self.weight._rel(x)
        r = np.linalg.norm(y, axis=1, keepdims=True)
        u = y / r
        c = u @ self.omega
        s = np.sqrt(np.maximum(1 - c * c, 0.0))[:, None]
        return -(self.omega[None] - c[:, None] * u) / (r * s)

    def lap(self, x):
        x = np.atleast_2d(x)
        if self.weight.kind == "linear":
            return np.zeros(len(x))
        y = self.weight._rel(x)
        r = np.linalg.norm(y, axis=1)
        c = y @ self.omega / r
        s = np.sqrt(np.maximum(1 - c * c, 0.0))
        return (x.shape[1] - 2) * c / (r * r * s)

    def axis_angle(self, x):
        """Angle between ``x - p`` and ``omega`` (log kinds)."""
        return self.psi(x)


def eikonal_partner(weight: Weight, omega, points=None, theta_min=THETA_MIN) -> PhaseField:
    """Phase ``psi`` with ``grad phi . grad psi = 0`` and ``|grad psi| = |grad phi|``.

    Linear weights use ``psi = omega . x`` and need ``omega`` orthogonal to the
    direction.  Log weights use the spherical angle from the axis
    ``{p + t omega}``; ``points`` (the domain nodes) must keep that angle in
    ``(theta_min, pi - theta_min)``.
    """
    omega = _unit(omega, "omega")
    if weight.kind == "linear":
        if abs(omega @ weight.direction) > 1e-12:
            raise WeightError("omega must be orthogonal to the weight direction")
        return PhaseField(weight, omega)
    phase = PhaseField(weight, omega)
    if points is not None:
        th = phase.axis_angle(points)
        if np.min(th) <= theta_min or np.max(th) >= np.pi - theta_min:
            raise WeightError(
                f"axis p + t*omega passes within angle {min(th.min(), np.pi - th.max()):.3f} of the domain "
                f"(need > {theta_min}); the amplitude would be singular"
            )
    return phase


@dataclass(frozen=True)
class AmplitudeField:
    """Transport amplitude ``a`` solving the Cauchy-Riemann equation for ``(phi, psi)``.

    ``sign`` selects the exponent ``(sign * phi + i psi) / h``: -1 for decaying
    CGOs, +1 for growing ones.  For log weights the closed form
    ``(r sin theta)^(-(d-2)/2)`` (distance to the axis) works for both signs.
    """

    phase: PhaseField
    sign: float = -1.0
    descriptor: dict = field(default_factory=dict)

    @property
    def constant(self):
        return self.phase.weight.kind == "linear"

    def _axis_distance(self, x):
        y = self.phase.weight._rel(np.atleast_2d(x))
        om = self.phase.omega
        perp = y - (y @ om)[:, None] * om[None]
        return np.linalg.norm(perp, axis=1), perp

    def value(self, x):
        x = np.atleast_2d(x)
        if self.constant:
            return np.ones(len(x), dtype=complex)
        rho, _ = self._axis_distance(x)
        return (rho ** (-(x.shape[1] - 2) / 2)).astype(complex)

    def grad(self, x):
        x = np.atleast_2d(x)
        if self.constant:
            return np.zeros(x.shape, dtype=complex)
        s = -(x.shape[1] - 2) / 2
        rho, perp = self._axis_distance(x)
        return (s * rho ** (s - 2))[:, None] * perp + 0j

    def lap(self, x):
        x = np.atleast_2d(x)
        if self.constant:
            return np.zeros(len(x), dtype=complex)
        d = x.shape[1]
        s = -(d - 2) / 2
        rho, _ = self._axis_distance(x)
        return (s * (s + d - 3) * rho ** (s - 2)) + 0j

    def exponent(self, x):
        """``sign * phi + i psi`` at the points."""
        return self.sign * self.phase.weight.phi(x) + 1j * self.phase.psi(x)

    def exponent_grad(self, x):
        return self.sign * self.phase.weight.grad(x) + 1j * self.phase.grad(x)

    def exponent_lap(self, x):
        return self.sign * self.phase.weight.lap(x) + 1j * self.phase.lap(x)


def cauchy_riemann_residual(amp: AmplitudeField, points, step=1e-4, analytic=False):
    """Residual ``grad(Theta).grad(a) + a lap(Theta)/2`` with ``Theta = sign*phi + i psi``.

    By default ``grad a`` and ``lap Theta`` come from centred differences of
    the closed forms, an oracle independent of the analytic derivatives.
    Returns the residual divided by ``|a| |grad Theta|^2`` pointwise.
    """
    x = np.atleast_2d(points)
    g_th = amp.exponent_grad(x)
    if analytic:
        g_a = amp.grad(x)
        l_th = amp.exponent_lap(x)
    else:
        d = x.shape[1]
        g_a = np.zeros(x.shape, dtype=complex)
        l_th = np.zeros(len(x), dtype=complex)
        th0 = amp.exponent(x)
        for k in range(d):
            e = np.zeros(d)
            e[k] = step
            g_a[:, k] = (amp.value(x + e) - amp.value(x - e)) / (2 * step)
            l_th += (amp.exponent(x + e) - 2 * th0 + amp.exponent(x - e)) / step**2
    res = np.sum(g_th * g_a, axis=1) + 0.5 * amp.value(x) * l_th
    scale = np.abs(amp.value(x)) * np.sum(np.abs(g_th) ** 2, axis=1)
    return res / scale


def transport_amplitude(weight: Weight, phase: PhaseField, sign=-1.0, points=None, theta_min=THETA_MIN,
                        gate_tol=1e-5) -> AmplitudeField:
    """Closed-form transport amplitude, gate-checked for log weights.

    Linear weights give ``a = 1``.  For log weights the closed form is
    accepted only after a finite-difference Cauchy-Riemann residual on
    ``points`` (or a default sample around the axis) stays below ``gate_tol``.
    """
    if phase.weight is not weight:
        if phase.weight.describe() != weight.describe():
            raise WeightError("phase was generated for a different weight")
    amp = AmplitudeField(phase, float(np.sign(sign)), {"kind": "constant" if weight.kind == "linear" else "axis_distance_power"})
    if weight.kind == "linear":
        return amp
    if points is None:
        rng = np.random.default_rng(0)
        # off-axis directions at unit-order distances from the pole
        pts = rng.normal(size=(64, weight.dim))
        pts = weight.pole + 2.0 * pts / np.linalg.norm(pts, axis=1, keepdims=True)
    else:
        pts = np.atleast_2d(points)
        if len(pts) > 512:
            pts = pts[np.linspace(0, len(pts) - 1, 512).astype(int)]
    th = phase.axis_angle(pts)
    if points is not None and (np.min(np.sin(th)) < np.sin(theta_min)):
        raise WeightError("domain too close to the phase axis: sin(theta) below threshold")
    ok = np.sin(th) > np.sin(theta_min)
    r = np.linalg.norm(pts - weight.pole, axis=1)
    res = cauchy_riemann_residual(amp, pts[ok], step=1e-4 * np.min(r))
    if not np.all(np.abs(res) < gate_tol):
        raise WeightError(f"closed-form amplitude failed the Cauchy-Riemann gate: residual {np.max(np.abs(res)):.2e}")
    return amp


# --------------------------------------------------------------------------
# convexification


@dataclass(frozen=True)
class ConvexifiedWeight:
    """``phi_c = phi + h phi^2 / (2 eps)``; ``limit=True`` returns ``phi`` exactly."""

    base: Weight
    h: float
    eps: float
    limit: bool = False

    @property
    def kind(self):
        return self.base.kind

    @property
    def c(self):
        return 0.0 if self.limit else self.h / self.eps

    def phi(self, x):
        p = self.base.phi(x)
        return p if self.limit else p + 0.5 * self.c * p * p

    def grad(self, x):
        g = self.base.grad(x)
        return g if self.limit else (1 + self.c * self.base.phi(x))[:, None] * g

    def lap(self, x):
        if self.limit:
            return self.base.lap(x)
        p = self.base.phi(x)
        g = self.base.grad(x)
        return (1 + self.c * p) * self.base.lap(x) + self.c * np.sum(g * g, axis=1)


def convexify(weight: Weight, h: float, eps: float, limit: bool = False) -> ConvexifiedWeight:
    if limit:
        return ConvexifiedWeight(weight, 0.0, np.inf, True)
    if not (h > 0 and eps > 0):
        raise WeightError("convexification needs h > 0 and eps > 0")
    return ConvexifiedWeight(weight, float(h), float(eps))
