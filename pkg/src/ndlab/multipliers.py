"""Semiclassical Fourier multipliers, the J operator families and symbols.

Fields live on a box whose last axis is the normal variable (``y >= 0`` for
the J family, ``r >= 1`` for the radial family).  The other axes are
tangential.  Tangential transforms pad each axis by a factor of two.  The
padding continues the edge values with half-cosine ramps, so the periodized
field has no jump.  Symbols are evaluated at the semiclassical frequency
``eta = h * xi`` with ``xi = 2 pi * index / padded_length``.

Inverse operators integrate the exponential kernels exactly against a
piecewise cubic Hermite interpolant of the data (slopes from fourth-order
differences).  The kernel enters only through the decaying per-step factor
``exp(-F dy / h)``, so no growing exponential is ever formed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .fields import ScalarField
from .grid import Grid

PAD_FACTOR = 2


class SymbolError(ValueError):
    """Raised for inconsistent symbol parameters or branch-cut hits."""


# --------------------------------------------------------------------------
# tangential transforms


def _ramp(n):
    """Half-cosine ramp from 1 down to 0 over ``n`` samples (endpoints excluded)."""
    t = np.arange(1, n + 1) / (n + 1)
    return 0.5 * (1 + np.cos(np.pi * t))


@dataclass
class TangentialTransform:
    """Padded DFT over the tangential axes of ``grid``.

    ``warnings`` collects a record whenever a transformed field is not small
    at the tangential edges (periodization error is then uncontrolled).
    """

    grid: Grid
    pad: int = PAD_FACTOR
    edge_tol: float = 1e-8
    warnings: list = field(default_factory=list)

    @property
    def tangential_axes(self):
        return tuple(range(self.grid.dim - 1))

    @property
    def padded_shape(self):
        return tuple(self.pad * self.grid.resolution[a] for a in self.tangential_axes)

    def frequencies(self, h=1.0):
        """Semiclassical frequencies ``h * xi``, shape ``(n,) + padded_shape + (1,)``."""
        ks = [2 * np.pi * np.fft.fftfreq(m, d=self.grid.spacing[a]) for a, m in zip(self.tangential_axes, self.padded_shape)]
        mesh = np.stack(np.meshgrid(*ks, indexing="ij"))
        return h * mesh[..., None]

    def extend(self, u):
        """Pad the tangential axes with half-cosine continuations of the edge values."""
        scale = np.max(np.abs(u)) if u.size else 0.0
        for a in self.tangential_axes:
            n = u.shape[a]
            m = self.pad * n
            first = np.take(u, [0], axis=a)
            last = np.take(u, [n - 1], axis=a)
            edge = max(np.max(np.abs(first)), np.max(np.abs(last)))
            if scale > 0 and edge > self.edge_tol * scale:
                self.warnings.append(
                    f"field support reaches the tangential edge on axis {a} (|edge|/max = {edge / scale:.2e}); "
                    "periodization error is not controlled"
                )
            k = m - n
            k1 = k // 2
            k2 = k - k1
            shape = [1] * u.ndim
            shape[a] = k1
            right = last * _ramp(k1).reshape(shape)
            shape[a] = k2
            left = first * _ramp(k2)[::-1].reshape(shape)
            u = np.concatenate([u, right, left], axis=a)
        return u

    def forward(self, u):
        return np.fft.fftn(self.extend(np.asarray(u, dtype=complex)), axes=self.tangential_axes)

    def inverse(self, uh):
        v = np.fft.ifftn(uh, axes=self.tangential_axes)
        sl = tuple(slice(0, n) for n in self.grid.resolution[:-1]) + (slice(None),)
        return v[sl]


# --------------------------------------------------------------------------
# symbols


def smoothstep(t):
    """C^2 monotone step: 1 for ``t <= 0``, 0 for ``t >= 1``."""
    t = np.clip(t, 0.0, 1.0)
    return 1.0 - t**3 * (10 - 15 * t + 6 * t * t)


@dataclass(frozen=True)
class SymbolParams:
    """Parameters of the graph-model symbols.

    ``V1`` enters the linear coefficient and ``V2`` the quadratic one.
    ``K`` (default ``V1``) is the reference slope used by the cutoffs.
    ``alpha`` (default 1) feeds the eps-versions.
    """

    V1: np.ndarray
    V2: np.ndarray | None = None
    K: np.ndarray | None = None
    mu1: float = 0.6
    mu2: float = 0.64
    m1: float = 0.2
    m2: float = 0.3
    delta: float = 0.0
    h: float | None = None
    eps: float | None = None
    alpha: float | np.ndarray = 1.0

    def __post_init__(self):
        v1 = np.atleast_1d(np.asarray(self.V1, dtype=float))
        object.__setattr__(self, "V1", v1)
        object.__setattr__(self, "V2", v1 if self.V2 is None else np.atleast_1d(np.asarray(self.V2, dtype=float)))
        object.__setattr__(self, "K", v1 if self.K is None else np.atleast_1d(np.asarray(self.K, dtype=float)))
        self.validate()

    @property
    def kappa(self):
        k = np.linalg.norm(self.K)
        return k / np.sqrt(1 + k * k)

    def validate(self):
        kap = self.kappa
        upper = 0.5 + kap / 2
        if not (kap < self.mu1 < self.mu2 < upper < 1):
            raise SymbolError(
                f"need |K|/sqrt(1+|K|^2) = {kap:.4f} < mu1 = {self.mu1} < mu2 = {self.mu2} < {upper:.4f}"
            )
        if not (0 < self.m1 < self.m2):
            raise SymbolError(f"need 0 < m1 < m2, got m1={self.m1}, m2={self.m2}")


def _dot(V, xi):
    """``V . xi`` with ``xi`` of shape ``(n, ...)``."""
    return np.tensordot(V, xi, axes=(0, 0))


def _abs(xi):
    return np.sqrt(np.sum(np.abs(xi) ** 2, axis=0))


def rho_cutoff(params: SymbolParams, xi):
    """1 where ``|xi| < mu1`` and ``|K.xi| < m1``; 0 where ``|xi| > mu2`` or ``|K.xi| > m2``."""
    a = _abs(xi)
    kx = np.abs(_dot(params.K, xi))
    return smoothstep((a - params.mu1) / (params.mu2 - params.mu1)) * smoothstep((kx - params.m1) / (params.m2 - params.m1))


def zeta_cutoff(params: SymbolParams, xi):
    """1 where ``|K.xi| < m1/2`` and ``|xi| < (kappa + mu1)/2``; 0 where ``|K.xi| >= m1`` or ``|xi| >= mu1``."""
    a = _abs(xi)
    kx = np.abs(_dot(params.K, xi))
    inner = 0.5 * (params.kappa + params.mu1)
    return smoothstep((a - inner) / (params.mu1 - inner)) * smoothstep((kx - params.m1 / 2) / (params.m1 / 2))


def _roots(V1, V2, xi, alpha, sign, guard=None, cut_tol=1e-12):
    lin = alpha + 1j * _dot(V1, xi)
    quad = 1.0 + V2 @ V2
    disc = lin * lin - quad * (alpha * alpha - np.sum(xi * xi, axis=0))
    if guard is not None:
        on_cut = (np.real(disc) <= 0) & (np.abs(np.imag(disc)) <= cut_tol * np.maximum(1.0, np.abs(disc)))
        bad = on_cut & (guard > 0)
        if np.any(bad):
            raise SymbolError(
                f"square-root argument on the branch cut at {int(np.sum(bad))} frequencies where 1 - zeta > 0"
            )
    root = np.sqrt(disc + 0j)  # principal branch: nonnegative real part
    # the root without cancellation comes from lin + s root with s aligned to lin;
    # the other follows from the product of the roots
    s = np.where(np.real(np.conj(lin) * root) >= 0, 1.0, -1.0)
    big = (lin + s * root) / quad
    const = alpha * alpha - np.sum(xi * xi, axis=0)
    safe = np.where(big == 0, 1.0, big)
    small = np.where(big == 0, 0.0, const / (quad * safe))
    return np.where(s == sign, big, small)


SYMBOL_KINDS = ("Aplus", "Aminus", "Aeps_plus", "Aeps_minus", "Gplus", "Gminus", "Geps_plus", "Geps_minus",
                "rho", "zeta", "one_minus_rho", "abs", "one_plus_abs", "one_minus_abs", "bracket")


def symbol_eval(kind: str, params: SymbolParams | None, xi, alpha=None):
    """Evaluate a named symbol at semiclassical frequencies ``xi`` (shape ``(n, ...)``).

    ``A*`` kinds are the roots of ``(1+|V2|^2) X^2 - 2(alpha + i V1.xi) X +
    (alpha^2 - |xi|^2)`` with ``alpha = 1`` for the plain kinds.  ``G*`` kinds
    blend ``(1 - zeta) A + zeta``; they raise :class:`SymbolError` when the
    square-root argument hits the cut where ``1 - zeta > 0``.
    """
    xi = np.asarray(xi, dtype=float)
    if kind == "abs":
        return _abs(xi) + 0j
    if kind == "one_plus_abs":
        return 1 + _abs(xi) + 0j
    if kind == "one_minus_abs":
        return 1 - _abs(xi) + 0j
    if kind == "bracket":
        return np.sqrt(1 + np.sum(xi * xi, axis=0)) + 0j
    if params is None:
        raise SymbolError(f"symbol {kind} needs SymbolParams")
    if kind == "rho":
        return rho_cutoff(params, xi) + 0j
    if kind == "one_minus_rho":
        return 1 - rho_cutoff(params, xi) + 0j
    if kind == "zeta":
        return zeta_cutoff(params, xi) + 0j
    if kind not in SYMBOL_KINDS:
        raise SymbolError(f"unknown symbol kind {kind!r}")
    sign = 1.0 if "plus" in kind else -1.0
    eps_version = "eps" in kind
    a = (params.alpha if alpha is None else alpha) if eps_version else 1.0
    if kind.startswith("A"):
        return _roots(params.V1, params.V2, xi, a, sign)
    z = zeta_cutoff(params, xi)
    root = _roots(params.V1, params.V2, xi, a, sign, guard=1 - z)
    return (1 - z) * root + z


def root_residual(params: SymbolParams, xi, X, alpha=1.0):
    """``|(1+|V2|^2) X^2 - 2(alpha + i V1.xi) X + (alpha^2 - |xi|^2)|``."""
    xi = np.asarray(xi, dtype=float)
    quad = 1.0 + params.V2 @ params.V2
    return np.abs(quad * X * X - 2 * (alpha + 1j * _dot(params.V1, xi)) * X + (alpha * alpha - np.sum(xi * xi, axis=0)))


# --------------------------------------------------------------------------
# multipliers


@dataclass(frozen=True)
class MultiplierSpec:
    """A symbol ``F(eta)`` at semiclassical frequency ``eta = h xi``.

    Either ``kind`` names a :func:`symbol_eval` kind, or ``func`` is a callable
    ``eta -> complex`` (``eta`` of shape ``(n, ...)``).
    """

    h: float
    kind: str | None = None
    params: SymbolParams | None = None
    func: Callable | None = None
    lower_constant: float | None = None

    def evaluate(self, eta):
        if self.func is not None:
            return np.asarray(self.func(eta), dtype=complex)
        return symbol_eval(self.kind, self.params, eta)

    def check_elliptic(self, eta):
        """Recorded constant ``c`` with ``Re F >= c (1 + |eta|)`` on the frequencies."""
        F = self.evaluate(eta)
        c = float(np.min(np.real(F) / (1 + _abs(eta))))
        if c <= 0:
            raise SymbolError(f"symbol is not elliptic for the J family: min Re F/(1+|eta|) = {c:.3g}")
        return c


def generic_symbol(h, offset=1.0):
    """``F(eta) = offset + |eta|`` with ``Re F = |F| >= min(1, offset) (1 + |eta|)``."""
    return MultiplierSpec(h, func=lambda eta: offset + _abs(eta) + 0j, lower_constant=min(1.0, offset))


def fourier_multiplier(spec: MultiplierSpec, f: ScalarField, transform: TangentialTransform | None = None) -> ScalarField:
    """Apply ``T_F`` layer by layer in the normal variable."""
    tr = transform or TangentialTransform(f.grid)
    uh = tr.forward(f.values)
    sym = spec.evaluate(tr.frequencies(spec.h))
    return f.with_values(tr.inverse(sym * uh), warnings=list(tr.warnings))


def compose_factorized(w: ScalarField, h, roots=("one_plus_abs", "one_minus_abs"), dy=None):
    """``(h d_y - T_{F1})(h d_y - T_{F2}) w`` with spectral derivatives in ``y``.

    ``w`` must vanish near both ends of the ``y`` interval (band-limited probes).
    """
    g = w.grid
    tr = TangentialTransform(g)
    eta = tr.frequencies(h)
    wh = tr.forward(w.values)
    dy = dy or (lambda v: spectral_derivative(v, g.spacing[-1], axis=-1))
    F2 = symbol_eval(roots[1], None, eta)
    F1 = symbol_eval(roots[0], None, eta)
    inner = h * dy(wh) - F2 * wh
    outer = h * dy(inner) - F1 * inner
    return w.with_values(tr.inverse(outer))


def spectral_derivative(v, dx, axis=-1, order=1, pad=PAD_FACTOR):
    """FFT derivative along ``axis`` after zero padding (data must vanish at both ends)."""
    v = np.moveaxis(np.asarray(v, dtype=complex), axis, -1)
    n = v.shape[-1]
    m = pad * n
    vh = np.fft.fft(v, n=m, axis=-1)
    k = 2 * np.pi * np.fft.fftfreq(m, d=dx)
    if order % 2 == 1 and m % 2 == 0:
        k[m // 2] = 0.0
    out = np.fft.ifft((1j * k) ** order * vh, axis=-1)[..., :n]
    return np.moveaxis(out, -1, axis)


# --------------------------------------------------------------------------
# J operators


def _moments(z, jmax=3):
    """``M_j(z) = int_0^1 s^j e^{-z s} ds`` for ``j = 0..jmax``."""
    z = np.asarray(z, dtype=complex)
    small = np.abs(z) < 1.0
    out = np.empty((jmax + 1,) + z.shape, dtype=complex)
    zs = np.where(small, 1.0, z)
    ez = np.exp(-zs)
    m = (1 - ez) / zs
    out[0] = m
    for j in range(1, jmax + 1):
        # upward recurrence, stable for |z| >= 1
        m = (j * m - ez) / zs
        out[j] = m
    if np.any(small):
        zz = z[small]
        for j in range(jmax + 1):
            acc = np.zeros_like(zz)
            term = np.ones_like(zz)
            for k in range(30):
                acc += term / (k + j + 1)
                term = term * (-zz) / (k + 1)
            out[j][small] = acc
    return out


# cubic Hermite basis on [0, 1]: value at 0, slope at 0, value at 1, slope at 1
_HERMITE = np.array([[1, 0, -3, 2], [0, 1, -2, 1], [0, 0, 3, -2], [0, 0, -1, 1]], dtype=float)
# the same basis written in the reversed variable t = 1 - s
_HERMITE_REV = np.array([np.polynomial.Polynomial(b)(np.polynomial.Polynomial([1.0, -1.0])).coef for b in _HERMITE])


def _hermite_weights(z, reverse):
    """Weights of ``(u_0, du_0, u_1, du_1)`` in ``int_0^1 u(s) e^{-z k(s)} ds``.

    ``k(s) = s`` (``reverse=False``) or ``1 - s`` (``reverse=True``); slopes
    are per unit ``s``.
    """
    M = _moments(z)
    basis = _HERMITE_REV if reverse else _HERMITE
    return [sum(c[j] * M[j] for j in range(len(c))) for c in basis]


def _hermite_sweep(u, s, rate, du, backward):
    """Exponential-kernel integrals of ``u`` along the last axis.

    Forward: ``V(s) = int_{s_0}^{s} u(t) exp(-rate (s - t)) dt``.
    Backward: ``V(s) = int_{s}^{s_end} u(t) exp(-rate (t - s)) dt``.
    ``u`` is interpolated by cubic Hermite pieces with slopes ``du`` and the
    exponential is integrated exactly on each piece.
    """
    ds = np.diff(s)
    du = normal_derivative4(u, ds[0]) if du is None else du
    z = np.asarray(rate)[..., None] * ds
    if np.allclose(ds, ds[0], rtol=1e-9, atol=0):
        weights = [w[..., :1] for w in _hermite_weights(z[..., :1], reverse=not backward)]
        step = lambda w, k: w[..., 0]
    else:
        weights = _hermite_weights(z, reverse=not backward)
        step = lambda w, k: w[..., k]
    decay = np.exp(-z)
    out = np.zeros(u.shape, dtype=complex)
    acc = np.zeros(u.shape[:-1], dtype=complex)
    order = range(len(ds) - 1, -1, -1) if backward else range(len(ds))
    for k in order:
        d = ds[k]
        w0, w1, w2, w3 = (step(w, k) for w in weights)
        acc = decay[..., k] * acc + d * (w0 * u[..., k] + w1 * d * du[..., k] + w2 * u[..., k + 1] + w3 * d * du[..., k + 1])
        out[..., k if backward else k + 1] = acc
    return out


def _forward_integral(u, s, rate, du=None):
    return _hermite_sweep(u, s, rate, du, backward=False)


def _backward_integral(u, s, rate, du=None):
    return _hermite_sweep(u, s, rate, du, backward=True)


def normal_derivative4(v, dy, axis=-1):
    """Fourth-order finite-difference derivative along ``axis``."""
    v = np.moveaxis(v, axis, -1)
    out = np.empty_like(v)
    out[..., 2:-2] = (v[..., :-4] - 8 * v[..., 1:-3] + 8 * v[..., 3:-1] - v[..., 4:]) / (12 * dy)
    c = np.array([-25, 48, -36, 16, -3]) / (12 * dy)
    c1 = np.array([-3, -10, 18, -6, 1]) / (12 * dy)
    out[..., 0] = v[..., :5] @ c
    out[..., 1] = v[..., :5] @ c1
    out[..., -1] = -(v[..., -5:][..., ::-1] @ c)
    out[..., -2] = -(v[..., -5:][..., ::-1] @ c1)
    return np.moveaxis(out, -1, axis)


J_KINDS = ("J", "Jstar", "Jinv", "Jstarinv", "Jlog", "Jlogstar", "Jloginv", "Jlogstarinv")


def _j_hat(kind, F, uh, y, h):
    """One J-family operator on tangentially transformed data ``uh``."""
    radial = "log" in kind
    rate = F[..., 0] / h
    dy = y[1] - y[0]
    if kind in ("J", "Jlog"):
        coef = F / y if radial else F
        return coef * uh + h * normal_derivative4(uh, dy)
    if kind in ("Jstar", "Jlogstar"):
        coef = np.conj(F) / y if radial else np.conj(F)
        return coef * uh - h * normal_derivative4(uh, dy)
    if kind == "Jinv":
        return _forward_integral(uh, y, rate) / h
    if kind == "Jstarinv":
        return _backward_integral(uh, y, np.conj(rate)) / h
    # radial kernels are exponentials in s = log r; dt = t ds
    s = np.log(y)
    g = uh * y
    dg = y * normal_derivative4(g, dy)  # d/ds = r d/dr
    if kind == "Jloginv":
        return _forward_integral(g, s, rate, dg) / h
    return _backward_integral(g, s, np.conj(rate), dg) / h


def j_apply(kind, spec: MultiplierSpec, f: ScalarField, decay_tol=1e-8) -> ScalarField:
    """Apply a J-family operator along the last (normal) axis.

    ``J = F + h d_y``, ``J* = conj(F) - h d_y`` and their right inverses
    ``J^-1 u = h^-1 int_0^y u(t) e^{F (t-y)/h} dt`` and
    ``J*^-1 u = h^-1 int_y^inf u(t) e^{conj(F)(y-t)/h} dt``.  The radial kinds
    use ``F/r + h d_r`` and the kernels ``(t/r)^{F/h}``, ``(r/t)^{conj(F)/h}``
    on ``r >= 1``.

    ``kind`` may be a sequence of kinds, applied first to last inside one
    padded transform.  Compositions such as ``("Jinv", "J")`` then see the
    full tangential tails of intermediate results instead of a cropped copy.
    Warnings land in ``meta['warnings']`` when the field does not decay at
    the far end or touches the tangential edges.
    """
    kinds = (kind,) if isinstance(kind, str) else tuple(kind)
    for k in kinds:
        if k not in J_KINDS:
            raise SymbolError(f"unknown J kind {k!r}")
    g = f.grid
    h = spec.h
    y = g.axes[-1]
    if any("log" in k for k in kinds) and y[0] < 1 - 1e-12:
        raise SymbolError("radial J operators need r >= 1 on the normal axis")
    tr = TangentialTransform(g)
    F = spec.evaluate(tr.frequencies(h))
    warnings = []
    scale = np.max(np.abs(f.values)) or 1.0
    if np.max(np.abs(f.values[..., -1])) > decay_tol * scale:
        warnings.append("field does not decay at the far end of the normal axis")
    out = tr.forward(f.values)
    for k in kinds:
        out = _j_hat(k, F, out, y, h)
    return f.with_values(tr.inverse(out), warnings=warnings + list(tr.warnings))


def boundary_defect(f: ScalarField, spec: MultiplierSpec):
    """``u(., 0) e^{-F y / h}``: the part of ``u`` that ``J^-1 J`` does not return."""
    g = f.grid
    tr = TangentialTransform(g)
    F = spec.evaluate(tr.frequencies(spec.h))
    uh = tr.forward(f.values)
    y = g.axes[-1] - g.axes[-1][0]
    return f.with_values(tr.inverse(uh[..., :1] * np.exp(-F * y / spec.h)))


# --------------------------------------------------------------------------
# frequency split and layered symbols


def split_frequency(f: ScalarField, params: SymbolParams, h: float):
    """``(T_rho f, f - T_rho f)``; the pair sums to ``f`` exactly."""
    ws = fourier_multiplier(MultiplierSpec(h, "rho", params), f)
    wl = f.with_values(f.values - ws.values)
    return ws, wl


def layered_symbol_apply(symbol: Callable, f: ScalarField, h: float, chunk=2048) -> ScalarField:
    """Kohn-Nirenberg quantization of ``a(x, eta, y)`` applied layer by layer.

    ``symbol(x, eta, y)`` receives tangential points ``x`` of shape
    ``(n, nx)``, frequencies ``eta`` of shape ``(n, nk)`` and the layer
    coordinate ``y`` and returns ``(nx, nk)`` values.
    """
    g = f.grid
    tr = TangentialTransform(g)
    uh = tr.forward(f.values)
    ks = tr.frequencies(1.0)[..., 0].reshape(g.dim - 1, -1)
    nk = ks.shape[1]
    # x coordinates of the unpadded nodes; phases use the padded-periodic frame
    xs = np.stack(np.meshgrid(*[g.axes[a] for a in range(g.dim - 1)], indexing="ij")).reshape(g.dim - 1, -1)
    x0 = np.array([g.extents[a][0] for a in range(g.dim - 1)])[:, None]
    out = np.empty(g.shape, dtype=complex)
    flat_out = out.reshape(-1, g.shape[-1])
    uh_flat = uh.reshape(-1, g.shape[-1])
    for j, yj in enumerate(g.axes[-1]):
        for start in range(0, xs.shape[1], chunk):
            xb = xs[:, start:start + chunk]
            phase = np.exp(1j * ((xb - x0).T @ ks))
            a = symbol(xb, h * ks, yj)
            flat_out[start:start + chunk, j] = (a * phase) @ uh_flat[:, j] / nk
    return f.with_values(out)
