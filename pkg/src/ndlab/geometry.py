"""Domains, coordinate maps and boundary decompositions.

Three shapes are supported, each realized on a structured computational
grid:

``box``
    An axis-aligned box; the map is the identity.
``graph``
    The slab ``{(x, y) : f(x) <= y <= f(x) + height}`` over a box in ``x``.
    The flattening map ``(x, y) -> (x, y - f(x))`` sends it to a box.  The
    last coordinate plays the role of ``y``.
``ball``
    A closed ball.  Boundary nodes sample the sphere on a latitude/longitude
    lattice.  When a pole is given, the spherical map
    ``x -> (theta_1, theta_2, r / f(theta))`` about that pole is attached, with
    ``f`` the distance from the pole to the near side of the sphere.

Boundary sets are stored as index arrays into ``domain.boundary_points``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import dijkstra

from .grid import Grid, GridError

TIE_TOL = 1e-12


class GeometryError(ValueError):
    """Raised for invalid domains, poles or points outside a domain."""


# --------------------------------------------------------------------------
# coordinate maps


@dataclass(frozen=True)
class CoordinateMap:
    """Point map between physical and computational coordinates.

    ``forward`` and ``inverse`` act on arrays of shape ``(npts, dim)``.
    ``jacobian`` returns the matrices ``d(forward)/dx`` with shape
    ``(npts, dim, dim)``.
    """

    kind: str
    forward: Callable
    inverse: Callable
    jacobian: Callable
    params: dict = field(default_factory=dict)

    def round_trip_error(self, points):
        pts = np.atleast_2d(points)
        return float(np.max(np.abs(self.inverse(self.forward(pts)) - pts)))

    def jacobian_determinant(self, points):
        return np.linalg.det(self.jacobian(np.atleast_2d(points)))


def identity_map(dim):
    eye = np.eye(dim)
    return CoordinateMap(
        "identity",
        lambda p: np.array(p, dtype=float),
        lambda p: np.array(p, dtype=float),
        lambda p: np.broadcast_to(eye, (len(p), dim, dim)).copy(),
    )


class GraphFunction:
    """Sampled-or-analytic graph ``y = f(x)`` with gradient and Laplacian.

    Parameters
    ----------
    f, grad, lap : callables
        ``f(x)`` with ``x`` of shape ``(n, npts)`` returns ``(npts,)``;
        ``grad`` returns ``(n, npts)`` and ``lap`` returns ``(npts,)``.
    """

    def __init__(self, f, grad, lap, descriptor=None):
        self.f = f
        self.grad = grad
        self.lap = lap
        self.descriptor = descriptor or {}

    @classmethod
    def linear(cls, slope):
        k = np.asarray(slope, dtype=float)
        return cls(
            lambda x: np.tensordot(k, x, axes=1),
            lambda x: np.broadcast_to(k[:, None], (len(k), x.shape[1])).copy(),
            lambda x: np.zeros(x.shape[1]),
            {"kind": "linear", "slope": k.tolist()},
        )

    @classmethod
    def ripple(cls, slope, amplitude, wavenumber):
        """``f = K.x + amplitude * sin(wavenumber . x)``; ``|grad f - K| <= amplitude*|wavenumber|``."""
        k = np.asarray(slope, dtype=float)
        m = np.asarray(wavenumber, dtype=float)
        a = float(amplitude)
        return cls(
            lambda x: np.tensordot(k, x, axes=1) + a * np.sin(np.tensordot(m, x, axes=1)),
            lambda x: k[:, None] + a * m[:, None] * np.cos(np.tensordot(m, x, axes=1))[None],
            lambda x: -a * (m @ m) * np.sin(np.tensordot(m, x, axes=1)),
            {"kind": "ripple", "slope": k.tolist(), "amplitude": a, "wavenumber": m.tolist()},
        )

    def slope_deviation(self, points_x, center=None):
        """Max of ``|grad f - K|`` with ``K`` the mean gradient (or ``center``)."""
        g = self.grad(points_x)
        k = g.mean(axis=1) if center is None else np.asarray(center, dtype=float)
        return float(np.max(np.linalg.norm(g - k[:, None], axis=0))), k


def graph_map(gf: GraphFunction, dim):
    def fwd(p):
        p = np.array(p, dtype=float)
        p[:, -1] -= gf.f(p[:, :-1].T)
        return p

    def inv(p):
        p = np.array(p, dtype=float)
        p[:, -1] += gf.f(p[:, :-1].T)
        return p

    def jac(p):
        j = np.broadcast_to(np.eye(dim), (len(p), dim, dim)).copy()
        j[:, -1, :-1] = -gf.grad(np.asarray(p)[:, :-1].T).T
        return j

    return CoordinateMap("graph_flatten", fwd, inv, jac, {"graph": gf.descriptor})


def _frame(axis):
    """Orthonormal frame whose last column is ``axis``."""
    c = np.asarray(axis, dtype=float)
    c = c / np.linalg.norm(c)
    trial = np.eye(3)[np.argmin(np.abs(c))]
    a = trial - (trial @ c) * c
    a /= np.linalg.norm(a)
    b = np.cross(c, a)
    return np.stack([a, b, c], axis=1)


def spherical_map(pole, axis, radial_scale=None):
    """Spherical coordinates about ``pole`` with angles near ``pi/2`` on ``axis``.

    Local coordinates ``xh = R^T (x - p)`` give ``r = |xh|``,
    ``theta_1 = arccos(xh_0 / r)`` and ``theta_2 = atan2(xh_2, xh_1)``; the
    computational point is ``(theta_1, theta_2, r / f(theta))``.  Requires
    ``xh_2 > 0`` (points on the axis side of a plane through the pole).
    """
    p = np.asarray(pole, dtype=float)
    rot = _frame(axis)
    scale = radial_scale or (lambda th1, th2: np.ones_like(th1))

    def fwd(x):
        xh = (np.atleast_2d(x) - p) @ rot
        r = np.linalg.norm(xh, axis=1)
        th1 = np.arccos(np.clip(xh[:, 0] / r, -1, 1))
        th2 = np.arctan2(xh[:, 2], xh[:, 1])
        return np.stack([th1, th2, r / scale(th1, th2)], axis=1)

    def inv(s):
        s = np.atleast_2d(s)
        th1, th2 = s[:, 0], s[:, 1]
        r = s[:, 2] * scale(th1, th2)
        xh = np.stack([r * np.cos(th1), r * np.sin(th1) * np.cos(th2), r * np.sin(th1) * np.sin(th2)], axis=1)
        return xh @ rot.T + p

    def jac(x, eps=1e-6):
        # centred differences of the closed-form forward map; used only for
        # orientation checks, never inside solvers
        x = np.atleast_2d(x)
        cols = []
        for k in range(3):
            dx = np.zeros(3)
            dx[k] = eps
            cols.append((fwd(x + dx) - fwd(x - dx)) / (2 * eps))
        return np.stack(cols, axis=2)

    return CoordinateMap("spherical", fwd, inv, jac, {"pole": p.tolist(), "axis": rot[:, 2].tolist()})


# --------------------------------------------------------------------------
# domains


@dataclass(frozen=True)
class Domain:
    """A mapped structured domain.

    Attributes
    ----------
    shape : {'box', 'graph', 'ball'}
    grid : Grid
        Computational grid (for the ball: a lattice over the sphere's
        spherical coordinates about its centre, used for boundary sampling).
    map : CoordinateMap
        Physical -> computational map (identity for boxes).
    boundary_points, boundary_normals : ndarray
        Physical boundary samples ``(nb, dim)`` and outward unit normals.
    boundary_graph : scipy.sparse matrix
        Symmetric adjacency with physical edge lengths, for arc distances.
    """

    shape: str
    grid: Grid
    map: CoordinateMap
    boundary_points: np.ndarray
    boundary_normals: np.ndarray
    boundary_graph: sp.csr_matrix
    graph_function: GraphFunction | None = None
    params: dict = field(default_factory=dict)

    @property
    def dim(self):
        return self.boundary_points.shape[1]

    @property
    def n_boundary(self):
        return len(self.boundary_points)

    def hull_vertices(self):
        """Points whose convex hull contains the closed domain."""
        if self.shape == "ball":
            c, r = np.asarray(self.params["center"]), self.params["radius"]
            return None, (c, r)
        corners = []
        for idx in np.ndindex(*(2,) * self.grid.dim):
            corners.append([self.grid.extents[a][i] for a, i in enumerate(idx)])
        corners = np.array(corners)
        if self.shape == "graph":
            # the graph slab lies between min f and max f + height on a fine sample
            xs = _fine_sample(self.grid.extents[:-1], 33)
            fx = self.graph_function.f(xs.T)
            lo, hi = fx.min(), fx.max() + self.params["height"]
            corners[:, -1] = np.where(corners[:, -1] > self.grid.extents[-1][0], hi, lo)
        return corners, None

    def contains(self, points, tol=1e-12):
        pts = np.atleast_2d(points)
        if self.shape == "ball":
            c, r = np.asarray(self.params["center"]), self.params["radius"]
            return np.linalg.norm(pts - c, axis=1) <= r + tol
        comp = self.map.forward(pts)
        ok = np.ones(len(pts), dtype=bool)
        for a, (lo, hi) in enumerate(self.grid.extents):
            ok &= (comp[:, a] >= lo - tol) & (comp[:, a] <= hi + tol)
        return ok

    def physical_coords(self):
        """Physical coordinates of computational nodes, shape ``(dim,) + grid.shape``."""
        if self.shape == "ball":
            raise GeometryError("ball domains carry no volume lattice")
        pts = self.map.inverse(self.grid.points)
        return pts.T.reshape((self.grid.dim,) + self.grid.shape)

    def describe(self):
        out = {"shape": self.shape, "grid": self.grid.describe(), "map": self.map.kind}
        out.update({k: v for k, v in self.params.items() if k != "radial_scale"})
        if self.graph_function is not None:
            out["graph"] = self.graph_function.descriptor
        return out


def _fine_sample(extents, n):
    axes = [np.linspace(lo, hi, n) for lo, hi in extents]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(extents))


def _grid_boundary(grid: Grid, points_of, normals_of):
    """Boundary sampling and adjacency from the computational grid's boundary."""
    bidx = grid.boundary_index
    pts = points_of(grid.points[bidx])
    normals = normals_of(grid.points[bidx])
    # neighbours: boundary nodes within one step per axis (in-face diagonals
    # included); edges across the interior are excluded because both ends
    # would not lie on a common face
    multi = np.array(np.unravel_index(bidx, grid.shape)).T
    lookup = -np.ones(grid.size, dtype=np.int64)
    lookup[bidx] = np.arange(len(bidx))
    rows, cols = [], []
    shape = np.array(grid.shape)
    for off in np.ndindex(*(3,) * grid.dim):
        off = np.array(off) - 1
        if not off.any():
            continue
        nb = multi + off
        ok = np.all((nb >= 0) & (nb < shape), axis=1)
        j = np.full(len(bidx), -1)
        j[ok] = lookup[np.ravel_multi_index(nb[ok].T, grid.shape)]
        ok &= j >= 0
        # both ends must share a face: some axis where both sit on the same side
        both = np.zeros(len(bidx), dtype=bool)
        for ax in range(grid.dim):
            for side in (0, shape[ax] - 1):
                both |= (multi[:, ax] == side) & (nb[:, ax] == side)
        ok &= both
        rows.append(np.flatnonzero(ok))
        cols.append(j[ok])
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    w = np.linalg.norm(pts[rows] - pts[cols], axis=1)
    adj = sp.csr_matrix((w, (rows, cols)), shape=(len(bidx),) * 2)
    return pts, normals, adj


def _box_normals(grid: Grid):
    def normals(comp_pts):
        acc = np.zeros_like(comp_pts)
        for ax, (lo, hi) in enumerate(grid.extents):
            tol = 1e-9 * (hi - lo)
            acc[:, ax] -= np.abs(comp_pts[:, ax] - lo) < tol
            acc[:, ax] += np.abs(comp_pts[:, ax] - hi) < tol
        return acc

    return normals


def build_domain(spec: dict) -> Domain:
    """Build a Domain from a plain-dict spec.

    Examples of specs::

        {"shape": "box", "extents": [[0, 1]] * 3, "resolution": [16] * 3}
        {"shape": "graph", "extents_x": [[0, 1]] * 2, "height": 1.0,
         "resolution": [16] * 3, "graph": {"kind": "linear", "slope": [0.1, 0]}}
        {"shape": "ball", "center": [0, 0, 2], "radius": 1.0, "pole": [0, 0, 0],
         "resolution": [16, 16, 32]}
    """
    shape = spec.get("shape", "box")
    try:
        if shape == "box":
            grid = Grid(spec["extents"], spec["resolution"])
            unit = _unit_normals(_box_normals(grid))
            pts, nrm, adj = _grid_boundary(grid, lambda p: p, unit)
            return Domain("box", grid, identity_map(grid.dim), pts, nrm, adj)
        if shape == "graph":
            gf = spec["graph"]
            if not isinstance(gf, GraphFunction):
                gf = graph_function_from_spec(gf)
            height = float(spec["height"])
            ext = list(spec["extents_x"]) + [(0.0, height)]
            grid = Grid(ext, spec["resolution"])
            gmap = graph_map(gf, grid.dim)
            box_n = _box_normals(grid)

            def normals(comp):
                # covectors of the flattened faces pulled back by the shear
                n_comp = box_n(comp)
                x = comp[:, :-1].T
                gfx = gf.grad(x).T
                out = n_comp.copy()
                out[:, :-1] -= n_comp[:, -1:] * gfx
                return out / np.linalg.norm(out, axis=1, keepdims=True)

            pts, nrm, adj = _grid_boundary(grid, gmap.inverse, normals)
            return Domain("graph", grid, gmap, pts, nrm, adj, gf, {"height": height})
        if shape == "ball":
            return _build_ball(spec)
    except GridError as exc:
        raise GeometryError(str(exc)) from exc
    raise GeometryError(f"unknown shape {shape!r}")


def _unit_normals(fn):
    def wrapped(p):
        n = fn(p)
        return n / np.linalg.norm(n, axis=1, keepdims=True)

    return wrapped


def graph_function_from_spec(spec: dict) -> GraphFunction:
    kind = spec.get("kind", "linear")
    if kind == "linear":
        return GraphFunction.linear(spec["slope"])
    if kind == "ripple":
        return GraphFunction.ripple(spec.get("slope", [0.0] * len(spec["wavenumber"])), spec["amplitude"], spec["wavenumber"])
    raise GeometryError(f"unknown graph kind {kind!r}")


def _build_ball(spec):
    c = np.asarray(spec["center"], dtype=float)
    rad = float(spec["radius"])
    if len(c) != 3:
        raise GeometryError("ball domains are three-dimensional")
    n_lat, n_lon = spec.get("resolution", [16, 16, 32])[1:]
    grid = Grid(((0.0, rad), (0.0, np.pi), (0.0, 2 * np.pi)), (8, n_lat, n_lon))
    # sphere lattice about the centre; poles collapse to single samples
    th = np.linspace(0, np.pi, n_lat)[1:-1]
    ph = np.linspace(0, 2 * np.pi, n_lon, endpoint=False)
    T, P = np.meshgrid(th, ph, indexing="ij")
    dirs = np.stack([np.sin(T) * np.cos(P), np.sin(T) * np.sin(P), np.cos(T)], axis=-1).reshape(-1, 3)
    dirs = np.vstack([[0, 0, 1.0], dirs, [0, 0, -1.0]])
    pts = c + rad * dirs
    nrm = dirs.copy()
    # adjacency: lattice neighbours in theta/phi plus the two polar caps
    nt, npn = len(th), len(ph)
    idx = 1 + np.arange(nt * npn).reshape(nt, npn)
    rows, cols = [], []
    for a, b in ((idx[:, :], np.roll(idx, -1, axis=1)), (idx[:-1, :], idx[1:, :]),
                 (idx[:-1, :], np.roll(idx[1:, :], -1, axis=1)), (idx[:-1, :], np.roll(idx[1:, :], 1, axis=1))):
        rows.append(a.ravel())
        cols.append(b.ravel())
    rows.append(np.zeros(npn, dtype=int))
    cols.append(idx[0])
    rows.append(np.full(npn, len(pts) - 1))
    cols.append(idx[-1])
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    w = rad * np.arccos(np.clip(np.sum(dirs[rows] * dirs[cols], axis=1), -1, 1))
    adj = sp.csr_matrix((np.concatenate([w, w]), (np.concatenate([rows, cols]), np.concatenate([cols, rows]))), shape=(len(pts),) * 2)
    params = {"center": c.tolist(), "radius": rad}
    cmap = identity_map(3)
    if spec.get("pole") is not None:
        p = np.asarray(spec["pole"], dtype=float)
        check_pole_outside(p, centers=c, radius=rad)
        dist = np.linalg.norm(c - p)
        axis = (c - p) / dist
        rot = _frame(axis)

        def near_radius(th1, th2):
            # distance from the pole to the near side of the sphere along the
            # direction with spherical angles (th1, th2)
            e = np.stack([np.cos(th1), np.sin(th1) * np.cos(th2), np.sin(th1) * np.sin(th2)], axis=-1) @ rot.T
            b = e @ (c - p)
            disc = b * b - (dist**2 - rad**2)
            return b - np.sqrt(np.maximum(disc, 0.0))

        cmap = spherical_map(p, axis, near_radius)
        params.update({"pole": p.tolist(), "radial_scale": near_radius})
    return Domain("ball", grid, cmap, pts, nrm, adj, None, params)


def check_pole_outside(pole, centers=None, radius=None, corners=None):
    """Reject poles inside the convex hull of the domain closure.

    The log weights need the pole strictly outside the closed convex hull.
    """
    p = np.asarray(pole, dtype=float)
    if corners is not None:
        lo, hi = corners.min(axis=0), corners.max(axis=0)
        # hull of a box-like point set: box test on the bounding corners is
        # exact for boxes and conservative for sheared slabs
        if np.all(p >= lo - 1e-12) and np.all(p <= hi + 1e-12):
            raise GeometryError(
                f"pole {p.tolist()} lies in the convex hull of the domain; the log weight needs it outside"
            )
        return
    if np.linalg.norm(p - centers) <= radius:
        raise GeometryError(
            f"pole {p.tolist()} lies in the convex hull of the ball; the log weight needs it outside"
        )


def flatten(domain: Domain, points, tol=1e-9):
    """Map physical points to computational coordinates, rejecting outside points."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if not np.all(domain.contains(pts, tol)):
        raise GeometryError("point outside domain")
    return domain.map.forward(pts)


def unflatten(domain: Domain, coords):
    return domain.map.inverse(np.atleast_2d(np.asarray(coords, dtype=float)))


# --------------------------------------------------------------------------
# boundary decomposition


@dataclass(frozen=True)
class BoundaryDecomposition:
    """Boundary node sets with respect to a weight.

    ``plus_set``/``minus_set`` are the sign sets of ``d_nu phi`` (ties in
    both); ``gamma``/``zed`` enlarge them by ``margin`` in boundary arc
    distance.  All arrays index ``domain.boundary_points``.
    """

    plus_set: np.ndarray
    minus_set: np.ndarray
    gamma: np.ndarray
    zed: np.ndarray
    margin: float
    normals: np.ndarray
    n_boundary: int
    warnings: tuple = ()

    @property
    def gamma_c(self):
        return np.setdiff1d(np.arange(self.n_boundary), self.gamma)

    @property
    def zed_c(self):
        return np.setdiff1d(np.arange(self.n_boundary), self.zed)

    def mask(self, name):
        m = np.zeros(self.n_boundary, dtype=bool)
        m[getattr(self, name)] = True
        return m

    def tangential_projectors(self):
        n = self.normals
        return np.eye(n.shape[1])[None] - n[:, :, None] * n[:, None, :]

    def reversed(self):
        """Roles swapped as under ``phi -> -phi``."""
        return BoundaryDecomposition(self.minus_set, self.plus_set, self.zed, self.gamma, self.margin,
                                     self.normals, self.n_boundary, self.warnings)

    def to_json(self):
        return json.dumps({
            "margin": self.margin,
            "n_boundary": self.n_boundary,
            "plus": self.plus_set.tolist(),
            "minus": self.minus_set.tolist(),
            "gamma": self.gamma.tolist(),
            "zed": self.zed.tolist(),
            "warnings": list(self.warnings),
        })

    def digest(self):
        import hashlib

        h = hashlib.sha256()
        for a in (self.gamma, self.zed):
            h.update(np.ascontiguousarray(a, dtype=np.int64).tobytes())
        return h.hexdigest()[:16]


def boundary_distance(domain: Domain, sources):
    """Arc distance along the boundary graph from the node set ``sources``."""
    sources = np.asarray(sources, dtype=np.int64)
    if sources.size == 0:
        return np.full(domain.n_boundary, np.inf)
    d = dijkstra(domain.boundary_graph, directed=False, indices=sources, min_only=True)
    return d


def decompose_boundary(domain: Domain, weight, margin: float, tie_tol: float = TIE_TOL) -> BoundaryDecomposition:
    """Split the boundary by the sign of ``d_nu phi`` and grow Gamma and Z.

    ``weight`` needs a ``grad(points)`` method returning ``(npts, dim)``.
    Nodes with ``|d_nu phi| <= tie_tol |grad phi|`` go to both sets; a larger
    ``tie_tol`` only enlarges Gamma and Z.
    """
    if margin < 0:
        raise GeometryError("margin must be nonnegative")
    pts, nrm = domain.boundary_points, domain.boundary_normals
    grad = weight.grad(pts)
    gnorm = np.linalg.norm(grad, axis=1)
    if np.any(gnorm <= 0):
        raise GeometryError("weight gradient vanishes on the boundary")
    dn = np.sum(grad * nrm, axis=1)
    tie = np.abs(dn) <= max(tie_tol, TIE_TOL) * gnorm
    plus = np.flatnonzero((dn > 0) | tie)
    minus = np.flatnonzero((dn < 0) | tie)
    tol = 1e-9 * max(1.0, margin)
    gamma = np.flatnonzero(boundary_distance(domain, plus) <= margin + tol)
    zed = np.flatnonzero(boundary_distance(domain, minus) <= margin + tol)
    warnings = []
    if len(gamma) == domain.n_boundary:
        warnings.append("Gamma covers the whole boundary: the complement is empty and the boundary estimate is trivial")
    if len(zed) == domain.n_boundary:
        warnings.append("Z covers the whole boundary: no Neumann constraint set remains")
    return BoundaryDecomposition(plus, minus, gamma, zed, float(margin), nrm, domain.n_boundary, tuple(warnings))
