"""Second-order finite-difference stencils on box grids.

Two families live here.  Array stencils (``d1``, ``d2``, ``laplacian``) act
on sampled fields and close at the box faces with second-order one-sided
differences; they are used to *apply* operators.  Sparse assemblers build
matrices for *solves*, closing every face with a centred ghost node whose
value is eliminated through a normal-derivative condition
``d_nu v = alpha * v + beta``.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .grid import Grid


def d1(u, grid: Grid, axis):
    """First derivative along ``axis``; one-sided second order at the ends."""
    return np.gradient(u, grid.spacing[axis], axis=axis, edge_order=2)


def d2(u, grid: Grid, axis):
    """Second derivative along ``axis``; one-sided second order at the ends."""
    h = grid.spacing[axis]
    u = np.moveaxis(u, axis, 0)
    out = np.empty_like(u)
    out[1:-1] = (u[:-2] - 2 * u[1:-1] + u[2:]) / h**2
    out[0] = (2 * u[0] - 5 * u[1] + 4 * u[2] - u[3]) / h**2
    out[-1] = (2 * u[-1] - 5 * u[-2] + 4 * u[-3] - u[-4]) / h**2
    return np.moveaxis(out, 0, axis)


def gradient(u, grid: Grid):
    return np.stack([d1(u, grid, ax) for ax in range(grid.dim)])


def laplacian(u, grid: Grid):
    return sum(d2(u, grid, ax) for ax in range(grid.dim))


def _kron_axis(grid, mats):
    """Sum over axes of I x ... x mats[ax] x ... x I."""
    out = None
    for ax in range(grid.dim):
        factors = [sp.identity(n, format="csr") for n in grid.resolution]
        factors[ax] = mats[ax]
        term = factors[0]
        for f in factors[1:]:
            term = sp.kron(term, f, format="csr")
        out = term if out is None else out + term
    return out


def _second_diff_1d(n, h):
    main = np.full(n, -2.0)
    lower = np.ones(n - 1)
    upper = np.ones(n - 1)
    upper[0] = 2.0
    lower[-1] = 2.0
    return sp.diags([lower, main, upper], [-1, 0, 1], format="csr") / h**2


def _first_diff_1d(n, h):
    lower = -np.ones(n - 1)
    upper = np.ones(n - 1)
    upper[0] = 0.0
    lower[-1] = 0.0
    return sp.diags([lower, upper], [-1, 1], format="csr") / (2 * h)


def stiffness(grid: Grid):
    """Symmetric Neumann stiffness ``W (-Lap_h)`` with trapezoidal weights ``W``.

    Equals the ghost-node Laplacian scaled row-wise by the lumped volume
    weights, which makes it exactly symmetric.
    """
    out = None
    for ax in range(grid.dim):
        n, h = grid.resolution[ax], grid.spacing[ax]
        main = np.full(n, 2.0)
        main[0] = main[-1] = 1.0
        k1 = sp.diags([-np.ones(n - 1), main, -np.ones(n - 1)], [-1, 0, 1], format="csr") / h
        factors = [sp.diags(w, format="csr") for w in grid.axis_weights]
        factors[ax] = k1
        term = factors[0]
        for f in factors[1:]:
            term = sp.kron(term, f, format="csr")
        out = term if out is None else out + term
    return out.tocsr()


class BoundaryClosure:
    """Per-face ghost-node data ``d_nu v = alpha * v + beta``.

    Faces default to homogeneous Neumann.  ``alpha`` and ``beta`` are node
    arrays (zero off the face); edge and corner nodes receive one condition
    per incident face.
    """

    def __init__(self, grid: Grid):
        self.grid = grid
        self.alpha = {}
        self.beta = {}

    def set(self, face, alpha=None, beta=None, where=None):
        g = self.grid
        mask = g.face_mask(face) if where is None else (g.face_mask(face) & where)
        if alpha is not None:
            a = self.alpha.setdefault(face, np.zeros(g.shape, dtype=complex))
            a[mask] = np.broadcast_to(alpha, g.shape)[mask]
        if beta is not None:
            b = self.beta.setdefault(face, np.zeros(g.shape, dtype=complex))
            b[mask] = np.broadcast_to(beta, g.shape)[mask]
        return self


def assemble(grid: Grid, diffusion=1.0, convection=None, reaction=None, closure=None):
    """Assemble ``-diffusion * Lap v + convection . grad v + reaction * v``.

    Returns ``(matrix, offset)`` such that the discrete operator applied to
    ``v`` equals ``matrix @ v + offset``; ``offset`` carries the inhomogeneous
    part ``beta`` of the ghost closure.  Coefficients may be complex node
    arrays; ``diffusion`` must be a scalar.
    """
    lap = _kron_axis(grid, [_second_diff_1d(m, h) for m, h in zip(grid.resolution, grid.spacing)])
    mat = -diffusion * lap
    diag = np.zeros(grid.shape, dtype=complex)
    offset = np.zeros(grid.shape, dtype=complex)
    if convection is not None:
        convection = np.asarray(convection)
        for ax in range(grid.dim):
            b = np.broadcast_to(convection[ax], grid.shape)
            if not np.any(b):
                continue
            dmat = _kron_axis_single(grid, ax, _first_diff_1d(grid.resolution[ax], grid.spacing[ax]))
            mat = mat + sp.diags(b.ravel()) @ dmat
    if reaction is not None:
        diag += np.broadcast_to(reaction, grid.shape)
    if closure is not None:
        for face in grid.faces:
            ax, side = face
            nu = 1.0 if side else -1.0
            h = grid.spacing[ax]
            bnu = 0.0
            if convection is not None:
                bnu = np.broadcast_to(np.asarray(convection)[ax], grid.shape) * nu
            factor = -diffusion * 2.0 / h + bnu
            if face in closure.alpha:
                diag += factor * closure.alpha[face]
            if face in closure.beta:
                offset += factor * closure.beta[face]
    mat = (mat + sp.diags(diag.ravel())).tocsr()
    if not np.iscomplexobj(mat.data) or not np.any(mat.data.imag):
        mat = mat.real.tocsr() if np.iscomplexobj(mat.data) else mat
    return mat, offset.ravel()


def _kron_axis_single(grid, axis, mat1d):
    factors = [sp.identity(n, format="csr") for n in grid.resolution]
    factors[axis] = mat1d
    term = factors[0]
    for f in factors[1:]:
        term = sp.kron(term, f, format="csr")
    return term


def face_normal_derivative(u, grid: Grid, face):
    """One-sided second-order outward normal derivative on one face."""
    ax, side = face
    h = grid.spacing[ax]
    v = np.moveaxis(u, ax, 0)
    if side:
        dn = (3 * v[-1] - 4 * v[-2] + v[-3]) / (2 * h)
    else:
        dn = (3 * v[0] - 4 * v[1] + v[2]) / (2 * h)
    return dn
