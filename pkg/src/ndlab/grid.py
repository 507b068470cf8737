"""Uniform structured grids on axis-aligned boxes.

Every node of the box, boundary nodes included, carries an unknown.  Arrays
live in ``ij`` order with shape ``grid.shape``; flat indices follow numpy's
C order so ``field.ravel()`` and ``grid.flat_index`` agree.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

MIN_NODES = 8


class GridError(ValueError):
    """Raised for grids that violate resolution or dimension limits."""


@dataclass(frozen=True)
class Grid:
    """Tensor-product grid with uniform spacing per axis.

    Parameters
    ----------
    extents : sequence of (lo, hi)
        Coordinate interval per axis.
    resolution : sequence of int
        Node count per axis, boundary nodes included.
    """

    extents: tuple
    resolution: tuple

    def __post_init__(self):
        ext = tuple((float(lo), float(hi)) for lo, hi in self.extents)
        res = tuple(int(n) for n in self.resolution)
        object.__setattr__(self, "extents", ext)
        object.__setattr__(self, "resolution", res)
        if len(ext) != len(res):
            raise GridError("extents and resolution disagree on dimension")
        if len(res) not in (2, 3):
            raise GridError(f"dimension {len(res)} unsupported; use 2 or 3")
        if min(res) < MIN_NODES:
            raise GridError(f"resolution {res} too coarse: need >= {MIN_NODES} nodes per axis")
        for lo, hi in ext:
            if not hi > lo:
                raise GridError(f"degenerate interval ({lo}, {hi})")

    @classmethod
    def cube(cls, n, dim=3, lo=0.0, hi=1.0):
        return cls(((lo, hi),) * dim, (n,) * dim)

    @property
    def dim(self):
        return len(self.resolution)

    @property
    def shape(self):
        return self.resolution

    @property
    def size(self):
        return int(np.prod(self.resolution))

    @cached_property
    def spacing(self):
        return tuple((hi - lo) / (n - 1) for (lo, hi), n in zip(self.extents, self.resolution))

    @property
    def dx(self):
        """Largest spacing; the resolution scale used by all guards."""
        return max(self.spacing)

    @cached_property
    def axes(self):
        return tuple(np.linspace(lo, hi, n) for (lo, hi), n in zip(self.extents, self.resolution))

    @cached_property
    def coords(self):
        """Node coordinates, shape ``(dim,) + shape``."""
        return np.stack(np.meshgrid(*self.axes, indexing="ij"))

    @cached_property
    def points(self):
        """Node coordinates as an ``(size, dim)`` array."""
        return self.coords.reshape(self.dim, -1).T

    @cached_property
    def axis_weights(self):
        """1D trapezoidal weights per axis."""
        out = []
        for d, n in zip(self.spacing, self.resolution):
            w = np.full(n, d)
            w[0] = w[-1] = d / 2
            out.append(w)
        return tuple(out)

    @cached_property
    def volume_weights(self):
        """Trapezoidal volume weights, shape ``grid.shape``."""
        return _outer(self.axis_weights)

    @cached_property
    def boundary_mask(self):
        m = np.zeros(self.shape, dtype=bool)
        for ax in range(self.dim):
            for side in (0, -1):
                m[_face_slice(self.dim, ax, side)] = True
        return m

    @cached_property
    def boundary_index(self):
        """Flat indices of boundary nodes, ascending."""
        return np.flatnonzero(self.boundary_mask.ravel())

    @cached_property
    def interior_index(self):
        return np.flatnonzero(~self.boundary_mask.ravel())

    @property
    def faces(self):
        """Faces as ``(axis, side)`` with side 0 (low) or 1 (high)."""
        return [(ax, s) for ax in range(self.dim) for s in (0, 1)]

    def face_normal(self, face):
        ax, side = face
        nu = np.zeros(self.dim)
        nu[ax] = 1.0 if side else -1.0
        return nu

    def face_mask(self, face):
        ax, side = face
        m = np.zeros(self.shape, dtype=bool)
        m[_face_slice(self.dim, ax, -1 if side else 0)] = True
        return m

    def face_weights(self, face):
        """Surface quadrature weights of one face, zero off the face."""
        ax, side = face
        ws = list(self.axis_weights)
        ws[ax] = np.zeros(self.resolution[ax])
        ws[ax][-1 if side else 0] = 1.0
        return _outer(ws)

    @cached_property
    def surface_weights(self):
        """Sum of face weights per node (edges and corners collect several faces)."""
        s = np.zeros(self.shape)
        for f in self.faces:
            s += self.face_weights(f)
        return s

    @cached_property
    def boundary_normals(self):
        """Outward unit normal at each boundary node, averaged over incident faces.

        Returns an array of shape ``(n_boundary, dim)`` ordered like
        ``boundary_index``.
        """
        acc = np.zeros((self.dim,) + self.shape)
        for f in self.faces:
            acc += self.face_normal(f)[(slice(None),) + (None,) * self.dim] * self.face_mask(f)
        nb = acc.reshape(self.dim, -1)[:, self.boundary_index].T
        return nb / np.linalg.norm(nb, axis=1, keepdims=True)

    def flat_index(self, multi):
        return np.ravel_multi_index(multi, self.shape)

    def integrate(self, values):
        return np.sum(self.volume_weights * values)

    def refined(self, factor):
        res = tuple(int(round((n - 1) * factor)) + 1 for n in self.resolution)
        return Grid(self.extents, res)

    def describe(self):
        return {"extents": [list(e) for e in self.extents], "resolution": list(self.resolution)}


def _outer(vectors):
    out = vectors[0]
    for v in vectors[1:]:
        out = np.multiply.outer(out, v)
    return out


def _face_slice(dim, ax, idx):
    sl = [slice(None)] * dim
    sl[ax] = idx
    return tuple(sl)
