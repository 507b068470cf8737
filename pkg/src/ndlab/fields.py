"""Scalar fields on structured grids, semiclassical norms and binary IO.

Norms use trapezoidal quadrature.  Derivatives come from second-order
differences (one-sided at the faces).  On graph domains the field lives on
the flattened box and gradients are pulled back with the chain rule
``d/dx_i -> d/dx_i - f_i d/dt``.  The flattening has unit Jacobian, so the
volume weights need no correction.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import fd
from .grid import Grid

ROLES = ("generic", "solution", "test", "remainder", "boundary", "potential")
VOLUME_SPACES = ("L2", "H1", "H2", "H1_r")
BOUNDARY_SPACES = ("boundary_L2", "boundary_H1")


class FieldError(ValueError):
    """Raised for malformed fields or mismatched norm requests."""


@dataclass(frozen=True)
class ScalarField:
    """Complex samples on every node of ``grid``.

    Attributes
    ----------
    values : ndarray
        Shape ``grid.shape``; complex128.
    grid : Grid
    role : str
        One of ``generic, solution, test, remainder, boundary, potential``.
    meta : dict
        Free-form metadata written to the JSON sidecar (``h`` etc.).
    """

    values: np.ndarray
    grid: Grid
    role: str = "generic"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=complex)
        if v.shape != self.grid.shape:
            v = v.reshape(self.grid.shape) if v.size == self.grid.size else None
            if v is None:
                raise FieldError(f"values of shape {np.shape(self.values)} do not match grid {self.grid.shape}")
        if not np.all(np.isfinite(v)):
            raise FieldError("field contains NaN or Inf")
        if self.role not in ROLES:
            raise FieldError(f"unknown role {self.role!r}")
        object.__setattr__(self, "values", v)

    def with_values(self, values, role=None, **meta):
        return ScalarField(values, self.grid, role or self.role, {**self.meta, **meta})

    def __add__(self, other):
        return self.with_values(self.values + _vals(other))

    def __sub__(self, other):
        return self.with_values(self.values - _vals(other))

    def __mul__(self, c):
        return self.with_values(self.values * _vals(c))

    __rmul__ = __mul__

    # -- io --------------------------------------------------------------
    def save(self, path):
        """Write ``<path>.bin`` (little-endian complex128) and ``<path>.json``."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.values.astype("<c16").tofile(path.with_suffix(".bin"))
        side = {"grid": self.grid.describe(), "role": self.role, "dtype": "<c16", "order": "C",
                "shape": list(self.grid.shape), "meta": _jsonable(self.meta)}
        path.with_suffix(".json").write_text(json.dumps(side, indent=2, sort_keys=True))
        return path

    @classmethod
    def load(cls, path):
        path = Path(path)
        side = json.loads(path.with_suffix(".json").read_text())
        g = Grid(side["grid"]["extents"], side["grid"]["resolution"])
        vals = np.fromfile(path.with_suffix(".bin"), dtype="<c16").reshape(side["shape"])
        return cls(vals, g, side["role"], side.get("meta", {}))


def _vals(x):
    return x.values if isinstance(x, ScalarField) else x


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    return obj


# --------------------------------------------------------------------------
# derivatives in physical coordinates


def physical_gradient(u, grid: Grid, graph=None):
    """Gradient ``(dim,) + shape`` in physical coordinates.

    ``graph`` is an optional :class:`~ndlab.geometry.GraphFunction`; the
    field is then sampled on the flattened box.
    """
    g = fd.gradient(u, grid)
    if graph is not None:
        fx = graph.grad(grid.coords[:-1].reshape(grid.dim - 1, -1)).reshape((grid.dim - 1,) + grid.shape)
        g = g.copy()
        g[:-1] = g[:-1] - fx * g[-1]
    return g


def physical_hessian(u, grid: Grid, graph=None):
    g = physical_gradient(u, grid, graph)
    return np.stack([physical_gradient(gi, grid, graph) for gi in g])


def face_normals_physical(grid: Grid, face, graph=None):
    """Outward unit normal field ``(dim,) + shape`` of one face and its area factor."""
    ax, side = face
    nu = np.zeros((grid.dim,) + grid.shape)
    nu[ax] = 1.0 if side else -1.0
    area = np.ones(grid.shape)
    if graph is not None and ax == grid.dim - 1:
        fx = graph.grad(grid.coords[:-1].reshape(grid.dim - 1, -1)).reshape((grid.dim - 1,) + grid.shape)
        nu[:-1] = -nu[ax] * fx
        norm = np.sqrt(np.sum(nu * nu, axis=0))
        nu = nu / norm
        area = norm
    return nu, area


# --------------------------------------------------------------------------
# norms


def _volume_mask(grid, region):
    if region is None:
        return np.ones(grid.shape, dtype=bool)
    region = np.asarray(region)
    if region.dtype == bool and region.shape == grid.shape:
        return region
    raise FieldError("volume norms need a boolean node mask of the grid shape as region")


def _boundary_mask(grid, region):
    m = np.zeros(grid.size, dtype=bool)
    if region is None:
        m[grid.boundary_index] = True
    else:
        region = np.asarray(region)
        if region.dtype == bool:
            raise FieldError("boundary norms need an index array into the boundary node list")
        m[grid.boundary_index[region.astype(np.int64)]] = True
    return m.reshape(grid.shape)


def scl_norm(f, h: float, space: str = "L2", region=None, graph=None) -> float:
    """Semiclassical norm of a field.

    Parameters
    ----------
    f : ScalarField or ndarray
    h : float
        Semiclassical parameter; each derivative carries a factor ``h``.
    space : str
        ``L2``, ``H1`` (``|u|^2 + |h grad u|^2``), ``H2`` (adds
        ``|h^2 D^2 u|^2``), ``H1_r`` (``|u/r|^2 + |h d_r u|^2 + |h grad_x u / r|^2``
        with ``r`` the last coordinate), ``boundary_L2`` or ``boundary_H1``
        (tangential gradient only).
    region : optional
        Boolean node mask for volume spaces; index array into the boundary
        node list (``grid.boundary_index`` order) for boundary spaces.
    graph : GraphFunction, optional
        Evaluate in physical coordinates of a flattened graph domain.
    """
    if not h > 0:
        raise FieldError("h must be positive")
    grid = f.grid if isinstance(f, ScalarField) else None
    u = _vals(f)
    if grid is None:
        raise FieldError("scl_norm needs a ScalarField")
    if space in VOLUME_SPACES:
        if region is not None and np.asarray(region).dtype != bool:
            raise FieldError(f"space {space} needs a volume region (boolean mask), got boundary indices")
        mask = _volume_mask(grid, region)
        w = grid.volume_weights * mask
        if space == "H1_r":
            r = grid.coords[-1]
            if np.min(r) <= 0:
                raise FieldError("H1_r needs a positive radial coordinate on the last axis")
            g = fd.gradient(u, grid)
            dens = np.abs(u / r) ** 2 + np.abs(h * g[-1]) ** 2 + np.sum(np.abs(h * g[:-1] / r) ** 2, axis=0)
            return float(np.sqrt(np.sum(w * dens)))
        dens = np.abs(u) ** 2
        if space in ("H1", "H2"):
            g = physical_gradient(u, grid, graph)
            dens = dens + h * h * np.sum(np.abs(g) ** 2, axis=0)
        if space == "H2":
            hs = np.stack([physical_gradient(gi, grid, graph) for gi in physical_gradient(u, grid, graph)])
            dens = dens + h**4 * np.sum(np.abs(hs) ** 2, axis=(0, 1))
        return float(np.sqrt(np.sum(w * dens)))
    if space in BOUNDARY_SPACES:
        if region is not None and np.asarray(region).dtype == bool:
            raise FieldError(f"space {space} needs boundary node indices, got a volume mask")
        mask = _boundary_mask(grid, region)
        g = physical_gradient(u, grid, graph) if space == "boundary_H1" else None
        total = 0.0
        for face in grid.faces:
            wf = grid.face_weights(face) * mask
            if not np.any(wf):
                continue
            nu, area = face_normals_physical(grid, face, graph)
            dens = np.abs(u) ** 2
            if g is not None:
                gn = np.sum(g * nu, axis=0)
                gt = g - gn * nu
                dens = dens + h * h * np.sum(np.abs(gt) ** 2, axis=0)
            total += np.sum(wf * area * dens)
        return float(np.sqrt(total))
    raise FieldError(f"unknown space {space!r}")
