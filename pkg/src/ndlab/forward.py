"""Schrodinger Neumann solver, Neumann-to-Dirichlet maps and their partial blocks.

On box domains every node carries an unknown.  The Neumann condition
closes each face through a centred ghost node.  Scaling the rows by the
trapezoid volume weights ``W`` gives the symmetric system::

    (K + diag(W q)) u = diag(S) g

with ``K = W (-Lap_h)`` the Neumann stiffness and ``S`` the summed face
weights.  The ND map is therefore ``N = R A^-1 R^T S`` (``R`` restricts to
boundary nodes).  ``diag(S) N`` is symmetric for real ``q``.

Graph domains are solved on the flattened box with the pulled-back
Laplacian in the interior.  Boundary rows there impose the physical normal
derivative through one-sided second-order differences.
"""

from __future__ import annotations

import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import fd
from .fields import ScalarField
from .geometry import BoundaryDecomposition, Domain, GeometryError
from .grid import Grid

DIRECT_LIMIT = 33**3
KRYLOV_TOL = 1e-10


class ForwardError(RuntimeError):
    """Raised for ill-posed or failed forward solves."""


class ContractViolation(PermissionError):
    """Raised when a partial-data view is asked for entries outside its block."""


# --------------------------------------------------------------------------
# potentials


@dataclass(frozen=True)
class Potential:
    """Potential ``q`` with a well-posedness record.

    ``wellposed`` holds the evidence: a coercivity bound ``min Re q > 0``
    or a solver conditioning report.
    """

    q: ScalarField
    wellposed: dict = field(default_factory=dict)

    @classmethod
    def from_values(cls, values, grid: Grid):
        return cls(ScalarField(np.broadcast_to(values, grid.shape), grid, "potential"))

    @property
    def values(self):
        return self.q.values

    def certify(self):
        """Attach a coercivity record when ``min Re q > 0``; otherwise a pending record."""
        qv = self.q.values
        if not np.all(np.isfinite(qv)):
            raise ForwardError("potential has non-finite values")
        if np.max(np.abs(qv)) == 0:
            raise ForwardError(
                "q = 0 makes the pure Neumann problem singular: constants span the kernel "
                "(zero eigenvalue of the Neumann Laplacian); use a background q >= c > 0"
            )
        lo = float(np.min(np.real(qv)))
        if lo > 0:
            rec = {"kind": "coercive", "bound": lo, "max_abs_q": float(np.max(np.abs(qv)))}
        else:
            rec = {"kind": "unverified", "min_re_q": lo, "max_abs_q": float(np.max(np.abs(qv)))}
        return Potential(self.q, rec)

    def digest(self):
        return hashlib.sha256(np.ascontiguousarray(self.q.values).tobytes()).hexdigest()[:16]


def _as_potential(q, grid):
    if isinstance(q, Potential):
        p = q
    elif isinstance(q, ScalarField):
        p = Potential(q)
    else:
        p = Potential.from_values(q, grid)
    return p if p.wellposed else p.certify()


# --------------------------------------------------------------------------
# solvers


def _factor(mat, size_limit=DIRECT_LIMIT):
    mat = mat.tocsc()
    if mat.shape[0] <= size_limit:
        try:
            lu = spla.splu(mat)
        except RuntimeError as exc:
            raise ForwardError(f"sparse factorization failed ({exc}); the operator is singular") from exc
        diag = np.abs(lu.U.diagonal())
        if diag.min() <= 1e-14 * diag.max():
            raise ForwardError("operator is numerically singular (zero pivot): a zero eigenvalue obstructs the solve")
        return lu.solve, {"method": "splu", "pivot_ratio": float(diag.min() / diag.max())}
    dinv = 1.0 / mat.diagonal()
    prec = spla.LinearOperator(mat.shape, matvec=lambda x: dinv * x, dtype=mat.dtype)

    def solve(b):
        x, info = spla.gmres(mat, b, M=prec, rtol=KRYLOV_TOL, restart=200, maxiter=50)
        if info != 0:
            raise ForwardError(f"GMRES did not converge (info={info})")
        return x

    return solve, {"method": "gmres", "tol": KRYLOV_TOL}


def _solve_complex(solve, rhs, real_matrix):
    if real_matrix and np.iscomplexobj(rhs):
        return solve(np.ascontiguousarray(rhs.real)) + 1j * solve(np.ascontiguousarray(rhs.imag))
    return solve(rhs)


class NeumannSolver:
    """Factorized ``(-Lap + q)`` with Neumann or Robin boundary closure.

    Parameters
    ----------
    domain : Domain
        Box or graph domain.
    q : Potential, ScalarField or array
    robin : dict, optional
        ``{"h": h, "c": c}`` selects ``h d_nu u + c u = d`` with ``c`` per
        boundary node; the boundary data then plays the role of ``d``.
    """

    def __init__(self, domain: Domain, q, robin=None):
        if domain.shape == "ball":
            raise GeometryError("forward solves support box and graph domains")
        self.domain = domain
        self.grid = domain.grid
        self.potential = _as_potential(q, self.grid)
        self.robin = robin
        g = self.grid
        self.bidx = g.boundary_index
        if domain.shape == "box":
            self.W = g.volume_weights.ravel()
            self.S = g.surface_weights.ravel()[self.bidx]
            mat = fd.stiffness(g) + sp.diags(self.W * self.potential.values.ravel())
            if robin is not None:
                c = np.broadcast_to(robin["c"], self.bidx.shape)
                extra = np.zeros(g.size, dtype=complex)
                extra[self.bidx] = self.S * c / robin["h"]
                mat = mat + sp.diags(extra)
        else:
            mat = self._graph_matrix()
        if np.iscomplexobj(mat.data) and not np.any(mat.data.imag):
            mat = mat.real
        self.matrix = mat.tocsr()
        self._real = not np.iscomplexobj(self.matrix.data)
        self._solve, self.info = _factor(self.matrix)
        self.info["wellposed"] = self.potential.wellposed

    # graph domains: pulled-back operator with boundary rows for d_nu
    def _graph_matrix(self):
        g = self.grid
        gf = self.domain.graph_function
        n = g.dim
        xs = g.coords[:-1].reshape(n - 1, -1)
        fx = gf.grad(xs)
        lapf = gf.lap(xs)
        D = [fd._kron_axis_single(g, a, _first_diff_onesided(g.resolution[a], g.spacing[a])) for a in range(n)]
        D2 = [fd._kron_axis_single(g, a, _second_diff_plain(g.resolution[a], g.spacing[a])) for a in range(n)]
        Dt = D[-1]
        lap = D2[-1] * 0
        for a in range(n - 1):
            lap = lap + D2[a] - 2 * sp.diags(fx[a]) @ (D[a] @ Dt)
        lap = lap - sp.diags(lapf) @ Dt + sp.diags(1 + np.sum(fx * fx, axis=0)) @ D2[-1]
        op = (-lap + sp.diags(self.potential.values.ravel())).tolil()
        # boundary rows: nu . grad_phys u (+ c u / h for Robin)
        grads = [D[a] - sp.diags(fx[a]) @ Dt for a in range(n - 1)] + [Dt]
        nrm = self.domain.boundary_normals
        bidx = self.bidx
        rows = sum(sp.diags(nrm[:, a]) @ grads[a][bidx] for a in range(n))
        if self.robin is not None:
            c = np.broadcast_to(self.robin["c"], bidx.shape)
            sel = sp.csr_matrix((np.ones(len(bidx)), (np.arange(len(bidx)), bidx)), shape=(len(bidx), g.size))
            rows = rows + sp.diags(c / self.robin["h"]) @ sel
        op = op.tocsr()
        keep = np.ones(g.size, dtype=bool)
        keep[bidx] = False
        interior = sp.diags(keep.astype(float)) @ op
        place = sp.csr_matrix((np.ones(len(bidx)), (bidx, np.arange(len(bidx)))), shape=(g.size, len(bidx)))
        self.S = np.ones(len(bidx))
        self.W = np.ones(g.size)
        return (interior + place @ rows).tocsr()

    def rhs(self, g_boundary):
        """Right-hand side for boundary data (Neumann ``g`` or Robin ``d``)."""
        gb = np.asarray(g_boundary)
        b = np.zeros((self.grid.size,) + gb.shape[1:], dtype=complex if np.iscomplexobj(gb) else float)
        scale = self.S if self.robin is None else self.S / self.robin["h"]
        b[self.bidx] = (scale.reshape((-1,) + (1,) * (gb.ndim - 1))) * gb
        return b

    def solve_raw(self, rhs):
        return _solve_complex(self._solve, rhs, self._real)

    def solve(self, g_boundary, check=True):
        b = self.rhs(g_boundary)
        u = self.solve_raw(b)
        if check:
            res = np.linalg.norm(self.matrix @ u - b) / max(np.linalg.norm(b), 1e-300)
            self.last_residual = float(res)
            if self.info["method"] == "splu" and res > 1e-10:
                raise ForwardError(f"discrete residual {res:.2e} exceeds 1e-10")
        return u

    def trace(self, u):
        return u[self.bidx]


def _first_diff_onesided(n, h):
    m = sp.lil_matrix((n, n))
    for i in range(1, n - 1):
        m[i, i - 1] = -0.5
        m[i, i + 1] = 0.5
    m[0, :3] = [-1.5, 2.0, -0.5]
    m[n - 1, n - 3:] = [0.5, -2.0, 1.5]
    return m.tocsr() / h


def _second_diff_plain(n, h):
    m = sp.lil_matrix((n, n))
    for i in range(1, n - 1):
        m[i, i - 1:i + 2] = [1.0, -2.0, 1.0]
    return m.tocsr() / h**2


def neumann_data(grid: Grid, grad_u):
    """Nodal Neumann data from a gradient sampled at the boundary nodes.

    ``grad_u`` has shape ``(n_boundary, dim)``.  Edge and corner nodes get
    the face-weighted mean of the per-face normal derivatives, which is the
    value the boundary quadrature integrates.
    """
    bidx = grid.boundary_index
    acc = np.zeros(len(bidx), dtype=np.result_type(grad_u, float))
    for face in grid.faces:
        w = grid.face_weights(face).ravel()[bidx]
        ax, side = face
        acc += w * (grad_u[:, ax] if side else -grad_u[:, ax])
    return acc / grid.surface_weights.ravel()[bidx]


def solve_schrodinger_neumann(domain: Domain, q, g, robin=None) -> ScalarField:
    """Solve ``(-Lap + q) u = 0`` with ``d_nu u = g`` (or the Robin closure).

    ``g`` holds one value per boundary node in ``grid.boundary_index`` order.
    """
    solver = NeumannSolver(domain, q, robin)
    u = solver.solve(np.asarray(g))
    return ScalarField(u.reshape(domain.grid.shape), domain.grid, "solution",
                       {"residual": solver.last_residual, "solver": solver.info["method"]})


# --------------------------------------------------------------------------
# ND maps


class NdMap:
    """Dense Neumann-to-Dirichlet matrix with logged reads.

    Columns correspond to nodal hat functions on the boundary nodes;
    ``weights`` are the boundary quadrature weights ``S``.  Every read goes
    through :meth:`read`, which records the requested row and column sets.
    """

    def __init__(self, matrix, weights, grid: Grid, meta=None):
        self._matrix = np.asarray(matrix)
        self.weights = np.asarray(weights)
        self.grid = grid
        self.meta = dict(meta or {})
        self.read_log = []

    @property
    def shape(self):
        return self._matrix.shape

    def read(self, rows=None, cols=None):
        """Return a copy of ``N[rows][:, cols]`` and log the access."""
        r = np.arange(self.shape[0]) if rows is None else np.asarray(rows)
        c = np.arange(self.shape[1]) if cols is None else np.asarray(cols)
        self.read_log.append((r.copy(), c.copy()))
        return self._matrix[np.ix_(r, c)].copy()

    @property
    def matrix(self):
        return self.read()

    def galerkin(self):
        """``diag(S) N``, symmetric for real ``q``."""
        return self.weights[:, None] * self.matrix

    def symmetry_defect(self):
        m = self.galerkin()
        return float(np.linalg.norm(m - m.T) / np.linalg.norm(m))

    def apply(self, g):
        return self.matrix @ g

    def pairing(self, g1, g2):
        """``<g1, N g2>`` with the boundary quadrature."""
        return np.sum(self.weights * g1 * (self.matrix @ g2))

    def reads_outside(self, rows, cols):
        """Number of logged entries outside ``rows x cols``."""
        rs, cs = set(np.asarray(rows).tolist()), set(np.asarray(cols).tolist())
        bad = 0
        for r, c in self.read_log:
            rin = np.array([x in rs for x in r.tolist()], dtype=bool)
            cin = np.array([x in cs for x in c.tolist()], dtype=bool)
            bad += int(len(r) * len(c) - rin.sum() * cin.sum())
        return bad

    def save(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self._matrix.astype("<c16").tofile(path.with_suffix(".bin"))
        side = {"shape": list(self.shape), "dtype": "<c16", "order": "C", "grid": self.grid.describe(),
                "weights": self.weights.tolist(), **self.meta}
        path.with_suffix(".json").write_text(json.dumps(side, indent=2, sort_keys=True))
        return path

    @classmethod
    def load(cls, path):
        path = Path(path)
        side = json.loads(path.with_suffix(".json").read_text())
        mat = np.fromfile(path.with_suffix(".bin"), dtype="<c16").reshape(side["shape"])
        g = Grid(side["grid"]["extents"], side["grid"]["resolution"])
        meta = {k: v for k, v in side.items() if k not in ("shape", "dtype", "order", "grid", "weights")}
        return cls(mat, np.array(side["weights"]), g, meta)


def assemble_nd_map(domain: Domain, q, workers: int = 1, block: int = 256, solver=None) -> NdMap:
    """Column ``j`` is the boundary trace for Neumann data ``e_j``.

    Columns are solved in blocks, concurrently when ``workers > 1``; the
    factorization is shared read-only.
    """
    solver = solver or NeumannSolver(domain, q)
    nb = len(solver.bidx)
    cols = [np.arange(s, min(s + block, nb)) for s in range(0, nb, block)]

    def run(js):
        e = np.zeros((nb, len(js)))
        e[js, np.arange(len(js))] = 1.0
        u = solver.solve_raw(solver.rhs(e))
        return js, u[solver.bidx]

    out = np.empty((nb, nb), dtype=complex)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(run, cols))
    else:
        results = [run(js) for js in cols]
    for js, tr in results:
        out[:, js] = tr
    meta = {"q_digest": solver.potential.digest(), "solver": solver.info["method"], "wellposed": solver.potential.wellposed}
    return NdMap(out, solver.S, domain.grid, meta)


class PartialNdMap:
    """Read-only view of ``N[Gamma][:, Z]``.

    The block is copied once from the parent through its logged accessor;
    the view keeps no reference to the full matrix.  Requests for entries
    outside the block return ``None`` (``entry``) or raise
    :class:`ContractViolation` (``apply`` with data off ``Z``).
    """

    def __init__(self, parent: NdMap, rows, cols):
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        if rows.size == 0 or cols.size == 0:
            raise ForwardError("partial ND map needs nonempty Gamma and Z")
        self.rows = rows
        self.cols = cols
        self._block = parent.read(rows, cols)
        self.weights = parent.weights
        self.n_boundary = parent.shape[0]
        self.meta = {"parent": dict(parent.meta)}
        self.refused = 0
        self.served = 0
        self._row_pos = {int(r): i for i, r in enumerate(rows)}
        self._col_pos = {int(c): i for i, c in enumerate(cols)}

    def entry(self, i, j):
        ri, cj = self._row_pos.get(int(i)), self._col_pos.get(int(j))
        if ri is None or cj is None:
            self.refused += 1
            return None
        self.served += 1
        return self._block[ri, cj]

    def block(self):
        self.served += self._block.size
        return self._block.copy()

    def apply(self, g, tol=0.0):
        """``(N g)|_Gamma`` for boundary data ``g`` supported in ``Z``.

        ``g`` is either a full boundary vector (which must vanish off ``Z``)
        or a vector on ``Z`` only.
        """
        g = np.asarray(g)
        if g.shape[0] == self.n_boundary and self.n_boundary != len(self.cols):
            off = np.ones(self.n_boundary, dtype=bool)
            off[self.cols] = False
            scale = max(np.max(np.abs(g)), 1e-300)
            if np.any(np.abs(g[off]) > tol * scale):
                self.refused += 1
                raise ContractViolation("boundary data has support outside Z")
            g = g[self.cols]
        self.served += self._block.size
        return self._block @ g

    def __sub__(self, other):
        if not (np.array_equal(self.rows, other.rows) and np.array_equal(self.cols, other.cols)):
            raise ForwardError("partial maps live on different blocks")
        out = object.__new__(PartialNdMap)
        out.__dict__.update(self.__dict__)
        out._block = self._block - other._block
        out.refused = 0
        out.served = 0
        return out


def restrict_nd(nd: NdMap, dec: BoundaryDecomposition) -> PartialNdMap:
    if dec.n_boundary != nd.shape[0]:
        raise ForwardError("decomposition and ND map disagree on the boundary node count")
    return PartialNdMap(nd, dec.gamma, dec.zed)


# --------------------------------------------------------------------------
# conductivity reduction


@dataclass(frozen=True)
class ConductivityReduction:
    potential: Potential
    sqrt_gamma_boundary: np.ndarray
    descriptor: dict


def conductivity_reduction(gamma: ScalarField, normal_tol: float = 1e-6) -> ConductivityReduction:
    """``q = Lap sqrt(gamma) / sqrt(gamma)`` for a conductivity flat at the boundary.

    Requires ``gamma > 0`` and ``d_nu gamma = 0`` on every face (checked with
    one-sided differences relative to ``max|grad gamma|``).  The ND maps are
    then related by ``N_q f = gamma^(1/2) N_gamma(gamma^(1/2) f)`` on the
    boundary; the descriptor records the boundary factor.
    """
    gv = np.real(gamma.values)
    if np.any(np.abs(np.imag(gamma.values)) > 0) or np.min(gv) <= 0:
        raise ForwardError("conductivity must be real and strictly positive")
    g = gamma.grid
    scale = max(np.max(np.abs(fd.gradient(gv, g))), 1e-300)
    for face in g.faces:
        dn = fd.face_normal_derivative(gv, g, face)
        if np.max(np.abs(dn)) > normal_tol * max(scale, 1.0):
            raise ForwardError(f"d_nu gamma = {np.max(np.abs(dn)):.2e} on face {face}; the reduction needs d_nu gamma = 0")
    sg = np.sqrt(gv)
    q = fd.laplacian(sg, g) / sg
    pot = Potential(ScalarField(q, g, "potential")).certify() if np.any(q) else Potential(ScalarField(q, g, "potential"), {"kind": "zero"})
    return ConductivityReduction(pot, sg.ravel()[g.boundary_index],
                                 {"relation": "N_q f = gamma^(1/2) N_gamma(gamma^(1/2) f)", "stencil": "second-order"})


def solve_conductivity_neumann(domain: Domain, gamma: ScalarField, f) -> ScalarField:
    """Solve ``-div(gamma grad u) = 0`` with ``gamma d_nu u = f`` on a box.

    Flux form with arithmetic face averages of ``gamma``.  Constants span the
    kernel, so ``f`` must have zero boundary integral and ``u`` is normalized
    to zero mean.
    """
    g = domain.grid
    gv = np.real(gamma.values).ravel()
    stiff = None
    for ax in range(g.dim):
        n, h = g.resolution[ax], g.spacing[ax]
        diff = [sp.identity(m, format="csr") for m in g.resolution]
        avg = [sp.identity(m, format="csr") for m in g.resolution]
        diff[ax] = sp.diags([-np.ones(n - 1), np.ones(n - 1)], [0, 1], shape=(n - 1, n)) / h
        avg[ax] = sp.diags([0.5 * np.ones(n - 1), 0.5 * np.ones(n - 1)], [0, 1], shape=(n - 1, n))
        wts = list(g.axis_weights)
        wts[ax] = np.full(n - 1, h)
        dmat, amat = diff[0], avg[0]
        for a in range(1, g.dim):
            dmat = sp.kron(dmat, diff[a], format="csr")
            amat = sp.kron(amat, avg[a], format="csr")
        wface = wts[0]
        for w in wts[1:]:
            wface = np.multiply.outer(wface, w)
        term = dmat.T @ sp.diags(wface.ravel() * (amat @ gv)) @ dmat
        stiff = term if stiff is None else stiff + term
    W = g.volume_weights.ravel()
    S = g.surface_weights.ravel()[g.boundary_index]
    f = np.asarray(f, dtype=float)
    if abs(np.sum(S * f)) > 1e-10 * max(np.sum(S * np.abs(f)), 1e-300):
        raise ForwardError("conductivity Neumann data must have zero boundary integral")
    kkt = sp.bmat([[stiff, sp.csr_matrix(W[:, None])], [sp.csr_matrix(W[None, :]), None]]).tocsc()
    rhs = np.zeros(g.size + 1)
    rhs[g.boundary_index] = S * f
    u = spla.splu(kkt).solve(rhs)[: g.size]
    return ScalarField(u.reshape(g.shape), g, "solution")
