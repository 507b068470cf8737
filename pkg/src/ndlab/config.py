"""Experiment configuration: loading, defaults, potentials and fail-fast guards.

A config is a JSON document (``.cfg``) merged over :data:`DEFAULTS`.  Every
guard that a downstream solver would raise is checked by :func:`validate`
before any solve runs, and failures come back as a list of machine-readable
error records.
"""

from __future__ import annotations

import ast
import copy
import hashlib
import json
import operator
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

DEFAULTS = {
    "name": "experiment",
    "seed": 0,
    "workers": 1,
    "domain": {"shape": "box", "extents": [[0.0, 1.0]] * 3, "resolution": [24, 24, 24]},
    "potentials": {
        "q1": {"kind": "constant", "value": 1.0},
        "q2": {"kind": "gaussian", "base": 1.0, "amplitude": 0.5, "width": 0.25, "center": [0.5, 0.5, 0.5]},
    },
    "decomposition": {"margin": 0.2, "tie_tol": 0.05},
    "carleman": {
        "models": ["flat", "graph"],
        "reverse": True,
        "weight": {"kind": "linear", "direction": [0.0, 0.0, 1.0]},
        "h_list": [0.4, 0.28, 0.2, 0.14, 0.1],
        "probes": 20,
        "dx": 0.01,
        "refine": 1.5,
        "guard_factor": 10.0,
        "eps": 0.125,
        "extents_x": [[0.0, 1.0], [0.0, 1.0]],
        "height": 0.5,
        "window": [[0.2, 0.8], [0.2, 0.8]],
        "graph": {"kind": "ripple", "slope": [0.3, 0.0], "delta": 0.05, "wavenumber": [6.283185307179586, 0.0]},
        "sigma": "0.5*cos(pi*x)",
        "q": {"kind": "gaussian", "base": 1.0, "amplitude": 1.0, "width": 0.15, "center": [0.5, 0.5, 0.2]},
        "stability_tolerance": 0.5,
        "adversarial_probes": 5,
        "adversarial_fraction": 0.1,
    },
    "cgo": {
        "weight": {"kind": "linear", "direction": [0.0, 0.0, 1.0]},
        "omega": [1.0, 0.0, 0.0],
        "potential": "q2",
        "guard_factor": 10.0,
        "min_points": 4,
        "free": {"method": "faddeev", "resolution": 33, "h_list": [0.6, 0.5, 0.4, 0.32], "threshold": 0.8},
        "constrained": {"method": "layer", "resolution": 25, "h_list": [0.8, 0.65, 0.5, 0.42], "threshold": 0.4},
    },
    "nd": {"block": 256},
    "recon": {
        "h_list": [0.15, 0.18, 0.21],
        "guard_factor": 3.0,
        "directions": [0, 1, 2],
        "lattice": {"period": 1.0, "nmax": 1, "n2max": 2},
        "extrapolation": "none",
        "taper": 0.25,
        "u2_potential": "q2",
        "baseline": True,
        "control": True,
        "audit": True,
        "log_check": {"enabled": True, "axis": 2, "distance": 20.0},
        "thresholds": {"relative_l2": 0.3, "baseline_slack": 0.1, "control_ratio": 0.05},
    },
}

VERBS = ("carleman-scan", "cgo-decay", "nd-assemble", "recon", "selftest")


class ConfigError(ValueError):
    """Validation failure carrying a list of error records."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(f"{e['field']}: {e['message']}" for e in self.errors))


def _err(fld, guard, message):
    return {"field": fld, "guard": guard, "message": message}


# --------------------------------------------------------------------------
# safe analytic expressions

_BINOPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul, ast.Div: operator.truediv,
           ast.Pow: operator.pow}
_UNOPS = {ast.USub: operator.neg, ast.UAdd: operator.pos}
_FUNCS = {"exp": np.exp, "sin": np.sin, "cos": np.cos, "tan": np.tan, "sqrt": np.sqrt, "log": np.log,
          "abs": np.abs, "tanh": np.tanh, "cosh": np.cosh, "sinh": np.sinh, "arctan": np.arctan}
_CONSTS = {"pi": np.pi, "e": np.e}


def compile_expression(expr: str, names=("x", "y", "z")):
    """Compile an arithmetic expression in ``names`` into a vectorized callable.

    Only numbers, the listed variable names, ``pi``, ``e``, ``+ - * / **`` and
    the functions in ``_FUNCS`` are accepted.  The callable takes points of
    shape ``(npts, len(names))``.
    """
    try:
        tree = ast.parse(expr, mode="eval")
    except SyntaxError as exc:
        raise ConfigError([_err("expression", "syntax", f"cannot parse {expr!r}: {exc.msg}")]) from exc

    def check(node):
        if isinstance(node, ast.Expression):
            return check(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            return
        if isinstance(node, ast.Name) and (node.id in names or node.id in _CONSTS):
            return
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            check(node.left)
            check(node.right)
            return
        if isinstance(node, ast.UnaryOp) and type(node.op) in _UNOPS:
            check(node.operand)
            return
        if (isinstance(node, ast.Call) and isinstance(node.func, ast.Name) and node.func.id in _FUNCS
                and not node.keywords):
            for a in node.args:
                check(a)
            return
        raise ConfigError([_err("expression", "syntax", f"disallowed element {ast.dump(node)[:40]} in {expr!r}")])

    check(tree)

    def run(node, env):
        if isinstance(node, ast.Expression):
            return run(node.body, env)
        if isinstance(node, ast.Constant):
            return float(node.value)
        if isinstance(node, ast.Name):
            return env[node.id] if node.id in env else _CONSTS[node.id]
        if isinstance(node, ast.BinOp):
            return _BINOPS[type(node.op)](run(node.left, env), run(node.right, env))
        if isinstance(node, ast.UnaryOp):
            return _UNOPS[type(node.op)](run(node.operand, env))
        return _FUNCS[node.func.id](*[run(a, env) for a in node.args])

    def fn(points):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        env = {n: pts[:, i] for i, n in enumerate(names) if i < pts.shape[1]}
        return np.broadcast_to(run(tree, env), (pts.shape[0],)).astype(float)

    return fn


def potential_function(spec, base_dir: Path | None = None):
    """Callable ``points (n, d) -> values (n,)`` for a potential spec; ``None`` for imported fields."""
    kind = spec.get("kind")
    if kind == "constant":
        v = float(spec["value"])
        return lambda p: np.full(np.atleast_2d(p).shape[0], v)
    if kind == "gaussian":
        c = np.asarray(spec["center"], dtype=float)
        s, a, b = float(spec["width"]), float(spec["amplitude"]), float(spec.get("base", 0.0))
        return lambda p: b + a * np.exp(-np.sum((np.atleast_2d(p) - c) ** 2, axis=1) / (2 * s * s))
    if kind == "expression":
        return compile_expression(spec["expr"])
    if kind == "field":
        return None
    raise ConfigError([_err("potentials", "kind", f"unknown potential kind {kind!r}")])


def potential_values(spec, grid, base_dir: Path | None = None):
    """Node values of a potential spec on ``grid``, shaped like the grid."""
    fn = potential_function(spec)
    if fn is not None:
        return fn(grid.points).reshape(grid.shape)
    from .fields import ScalarField

    path = Path(spec["path"])
    if not path.is_absolute() and base_dir is not None:
        path = base_dir / path
    f = ScalarField.load(path)
    if tuple(f.grid.shape) != tuple(grid.shape) or not np.allclose(f.grid.extents, grid.extents):
        raise ConfigError([_err("potentials", "grid", f"imported field {path} lives on another grid")])
    return np.real(f.values)


def delta_function(spec1, spec2):
    f1, f2 = potential_function(spec1), potential_function(spec2)
    if f1 is None or f2 is None:
        return None
    return lambda p: f2(p) - f1(p)


# --------------------------------------------------------------------------
# config object


def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k != "potentials":
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


@dataclass
class ExperimentConfig:
    """Merged configuration plus its source location.

    ``data`` holds the full merged document.  ``hash`` covers everything that
    can change a result; the worker count and output directory are excluded.
    """

    data: dict
    source: str = "<defaults>"
    base_dir: Path | None = None
    notes: list = field(default_factory=list)

    def __getitem__(self, key):
        return self.data[key]

    @property
    def seed(self) -> int:
        return int(self.data["seed"])

    @property
    def workers(self) -> int:
        return int(self.data["workers"])

    @property
    def hash(self) -> str:
        d = {k: v for k, v in self.data.items() if k != "workers"}
        return hashlib.sha256(canonical_json(d).encode()).hexdigest()

    def with_overrides(self, seed=None, workers=None):
        data = copy.deepcopy(self.data)
        notes = list(self.notes)
        if seed is not None:
            data["seed"] = int(seed)
            notes.append(f"seed overridden to {int(seed)}")
        if workers is not None:
            data["workers"] = int(workers)
        return ExperimentConfig(data, self.source, self.base_dir, notes)


def bundled_configs():
    return sorted(p.name for p in resources.files("ndlab.configs").iterdir() if p.name.endswith(".cfg"))


def resolve_config_path(name_or_path) -> Path:
    """A filesystem path, or the name of a bundled config."""
    p = Path(name_or_path)
    if p.exists():
        return p
    cand = resources.files("ndlab.configs") / p.name
    if cand.is_file():
        return Path(str(cand))
    raise ConfigError([_err("config", "missing", f"no config file {name_or_path!r} (bundled: {bundled_configs()})")])


def load_config(path=None, data: dict | None = None) -> ExperimentConfig:
    """Parse a JSON config (or a dict) and merge it over the defaults.

    Unknown top-level keys are reported as validation errors to catch typos.
    """
    if data is None and path is None:
        return ExperimentConfig(copy.deepcopy(DEFAULTS))
    base_dir = None
    source = "<dict>"
    if data is None:
        p = resolve_config_path(path)
        try:
            data = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError([_err("config", "syntax", f"{p}: {exc}")]) from exc
        base_dir = p.parent
        source = str(p)
    if not isinstance(data, dict):
        raise ConfigError([_err("config", "syntax", "top level must be an object")])
    unknown = sorted(set(data) - set(DEFAULTS) - {"description"})
    if unknown:
        raise ConfigError([_err(k, "unknown_key", f"unknown top-level key {k!r}") for k in unknown])
    return ExperimentConfig(_merge(DEFAULTS, data), source, base_dir)


# --------------------------------------------------------------------------
# validation


def _positive_list(errors, fld, values):
    if not isinstance(values, list) or not values:
        errors.append(_err(fld, "type", "expected a nonempty list"))
        return False
    ok = True
    for i, v in enumerate(values):
        if not isinstance(v, (int, float)) or not v > 0:
            errors.append(_err(f"{fld}[{i}]", "range", f"expected a positive number, got {v!r}"))
            ok = False
    return ok


def _grid_dx(extents, resolution):
    return min((b - a) / (n - 1) for (a, b), n in zip(extents, resolution))


def _check_common(cfg: ExperimentConfig, errors):
    d = cfg.data
    if not isinstance(d["seed"], int) or d["seed"] < 0:
        errors.append(_err("seed", "type", "seed must be a nonnegative integer"))
    if not isinstance(d["workers"], int) or d["workers"] < 1:
        errors.append(_err("workers", "type", "workers must be a positive integer"))


def _check_domain(cfg, errors):
    from .geometry import GeometryError, build_domain

    dom = cfg["domain"]
    res = dom.get("resolution")
    if not isinstance(res, list) or any((not isinstance(n, int)) or n < 8 for n in res):
        errors.append(_err("domain.resolution", "range", "resolution must be a list of integers >= 8"))
        return None
    try:
        return build_domain(dom)
    except (GeometryError, KeyError, TypeError, ValueError) as exc:
        errors.append(_err("domain", "geometry", str(exc)))
        return None


def _check_potentials(cfg, grid, errors, certify=True):
    from .forward import ForwardError, Potential

    out = {}
    for name in ("q1", "q2"):
        spec = cfg["potentials"].get(name)
        if not isinstance(spec, dict):
            errors.append(_err(f"potentials.{name}", "missing", "potential spec missing"))
            continue
        try:
            vals = potential_values(spec, grid, cfg.base_dir)
        except ConfigError as exc:
            errors.extend(_err(f"potentials.{name}", e["guard"], e["message"]) for e in exc.errors)
            continue
        except (KeyError, OSError, ValueError) as exc:
            errors.append(_err(f"potentials.{name}", "spec", str(exc)))
            continue
        if not np.all(np.isfinite(vals)):
            errors.append(_err(f"potentials.{name}", "finite", "potential has non-finite values"))
            continue
        if certify:
            try:
                Potential.from_values(vals, grid).certify()
            except ForwardError as exc:
                errors.append(_err(f"potentials.{name}", "wellposed", str(exc)))
                continue
        out[name] = vals
    return out


def _check_carleman(cfg, errors):
    c = cfg["carleman"]
    if not set(c["models"]) <= {"flat", "graph"} or not c["models"]:
        errors.append(_err("carleman.models", "value", "models must be a nonempty subset of ['flat', 'graph']"))
    if _positive_list(errors, "carleman.h_list", c["h_list"]):
        dx = float(c["dx"])
        for i, h in enumerate(c["h_list"]):
            if h < c["guard_factor"] * dx * (1 - 1e-9):
                errors.append(_err(f"carleman.h_list[{i}]", "oscillation",
                                   f"h = {h} < {c['guard_factor']} * dx = {c['guard_factor'] * dx:.4g}"))
    if not isinstance(c["probes"], int) or c["probes"] < 1:
        errors.append(_err("carleman.probes", "range", "need at least one probe"))
    if not c["dx"] > 0 or not c["refine"] > 1:
        errors.append(_err("carleman.dx", "range", "dx must be positive and refine > 1"))
    if not c["eps"] > 0:
        errors.append(_err("carleman.eps", "range", "eps must be positive"))
    if not c["height"] > 0:
        errors.append(_err("carleman.height", "range", "height must be positive"))
    for a, ((lo, hi), (wlo, whi)) in enumerate(zip(c["extents_x"], c["window"])):
        if not (lo <= wlo < whi <= hi):
            errors.append(_err(f"carleman.window[{a}]", "range", "window must be a nonempty interval inside extents_x"))
    if "graph" in c["models"]:
        gsp = c["graph"]
        if gsp.get("kind") == "ripple":
            if not 0 <= gsp.get("delta", 0) <= 0.1:
                errors.append(_err("carleman.graph.delta", "branch_cut",
                                   "slope deviation delta must lie in [0, 0.1] for the symbol square roots"))
            if np.linalg.norm(gsp.get("wavenumber", [0.0])) == 0 and gsp.get("delta", 0) > 0:
                errors.append(_err("carleman.graph.wavenumber", "range", "nonzero delta needs a nonzero wavenumber"))
        elif gsp.get("kind") != "linear":
            errors.append(_err("carleman.graph.kind", "value", "graph kind must be 'linear' or 'ripple'"))
    sig = c["sigma"]
    if isinstance(sig, str):
        try:
            compile_expression(sig, ("x", "y"))
        except ConfigError as exc:
            errors.extend(_err("carleman.sigma", e["guard"], e["message"]) for e in exc.errors)
    elif not isinstance(sig, (int, float)):
        errors.append(_err("carleman.sigma", "type", "sigma must be a number or an expression in x, y"))
    try:
        potential_function(c["q"])
    except (ConfigError, KeyError) as exc:
        errors.append(_err("carleman.q", "spec", str(exc)))
    if c["weight"].get("kind") != "linear":
        errors.append(_err("carleman.weight.kind", "value", "the slab scans use the linear weight"))


def _weight_checks(wspec, omegas, domain, errors, fld):
    """Build the weight and its eikonal partners, recording pole and axis guards."""
    from .weights import WeightError, eikonal_partner, make_weight

    try:
        wt = make_weight(wspec["kind"], wspec, domain)
    except (WeightError, KeyError) as exc:
        errors.append(_err(f"{fld}.weight", "pole_outside_hull" if "hull" in str(exc) else "spec", str(exc)))
        return None
    for om in omegas:
        try:
            eikonal_partner(wt, om, domain.map.inverse(domain.grid.points) if wt.kind != "linear" else None)
        except WeightError as exc:
            guard = "axis_misses_domain" if "axis" in str(exc) else "orthogonality"
            errors.append(_err(f"{fld}.omega", guard, str(exc)))
    return wt


def _check_cgo(cfg, errors):
    from .geometry import build_domain

    c = cfg["cgo"]
    for part in ("free", "constrained"):
        s = c[part]
        fld = f"cgo.{part}"
        from .cgo import CONSTRAINED_METHODS, FREE_METHODS

        methods = FREE_METHODS if part == "free" else CONSTRAINED_METHODS
        if s["method"] not in methods:
            errors.append(_err(f"{fld}.method", "value", f"method must be one of {list(methods)}"))
        if not isinstance(s["resolution"], int) or s["resolution"] < 8:
            errors.append(_err(f"{fld}.resolution", "range", "resolution must be an integer >= 8"))
            continue
        ext = cfg["domain"]["extents"]
        dx = _grid_dx(ext, [s["resolution"]] * len(ext))
        if _positive_list(errors, f"{fld}.h_list", s["h_list"]):
            ok = [h for h in s["h_list"] if h >= c["guard_factor"] * dx * (1 - 1e-9)]
            for i, h in enumerate(s["h_list"]):
                if h < c["guard_factor"] * dx * (1 - 1e-9):
                    errors.append(_err(f"{fld}.h_list[{i}]", "oscillation",
                                       f"h = {h} < {c['guard_factor']} * dx = {c['guard_factor'] * dx:.4g}"))
            if len(ok) < c["min_points"]:
                errors.append(_err(f"{fld}.h_list", "min_points",
                                   f"{len(ok)} h values pass the guard; the decay fit needs {c['min_points']}"))
    if c["potential"] not in ("q1", "q2", "delta"):
        errors.append(_err("cgo.potential", "value", "potential must be 'q1', 'q2' or 'delta'"))
    try:
        dom = build_domain({**cfg["domain"], "resolution": [c["constrained"]["resolution"]] * len(cfg["domain"]["extents"])})
    except Exception as exc:  # geometry errors are reported by _check_domain already
        errors.append(_err("cgo.domain", "geometry", str(exc)))
        return
    _weight_checks(c["weight"], [c["omega"]], dom, errors, "cgo")


def _check_recon(cfg, domain, errors):
    from .recon import EXTRAPOLATIONS, ReconError, _perp_direction, _phases, frequency_lattice, log_weight_for

    r = cfg["recon"]
    if domain.shape != "box":
        errors.append(_err("domain.shape", "value", "reconstruction runs on box domains"))
        return
    g = domain.grid
    if _positive_list(errors, "recon.h_list", r["h_list"]):
        for i, h in enumerate(r["h_list"]):
            if h < r["guard_factor"] * g.dx * (1 - 1e-9):
                errors.append(_err(f"recon.h_list[{i}]", "oscillation",
                                   f"h = {h} < {r['guard_factor']} * dx = {r['guard_factor'] * g.dx:.4g}"))
    if r["extrapolation"] not in EXTRAPOLATIONS:
        errors.append(_err("recon.extrapolation", "value", f"extrapolation must be one of {list(EXTRAPOLATIONS)}"))
    if not 0 <= r["taper"] < 1:
        errors.append(_err("recon.taper", "range", "taper must lie in [0, 1)"))
    m = cfg["decomposition"]["margin"]
    if not 0 <= m < 0.5:
        errors.append(_err("decomposition.margin", "range", "margin must lie in [0, 0.5)"))
    dirs = r["directions"]
    if not dirs or any(d not in range(g.dim) for d in dirs):
        errors.append(_err("recon.directions", "value", f"directions must be axes in 0..{g.dim - 1}"))
        return
    lat = r["lattice"]
    ks = frequency_lattice(lat["period"], lat["nmax"], lat["n2max"])
    kmax = np.pi / (5 * g.dx)
    for k in ks:
        if np.linalg.norm(k) > kmax * (1 + 1e-9):
            errors.append(_err("recon.lattice", "kmax", f"|k| = {np.linalg.norm(k):.3g} exceeds k_max = {kmax:.3g}"))
        if not any(abs(k[d]) < 1e-12 for d in dirs):
            errors.append(_err("recon.lattice", "direction",
                               f"k = {np.round(k, 3).tolist()} is orthogonal to no configured direction"))
        if np.linalg.norm(k) * max(r["h_list"]) / 2 >= 1:
            errors.append(_err("recon.lattice", "phase", f"h |k| / 2 >= 1 for k = {np.round(k, 3).tolist()}"))
    lc = r["log_check"]
    if lc.get("enabled"):
        if lc["distance"] <= 1:
            errors.append(_err("recon.log_check.distance", "pole_outside_hull", "distance must exceed 1"))
            return
        c = g.points.mean(axis=0)
        wt = log_weight_for(lc["axis"], c, lc["distance"], g.dim)
        spec = {"kind": wt.kind, "pole": wt.pole.tolist()}
        d = np.eye(g.dim)[lc["axis"]]
        omegas = []
        for k in ks:
            if abs(k[lc["axis"]]) >= 1e-12:
                continue
            for h in r["h_list"]:
                try:
                    o1, o2, _ = _phases(wt, k, _perp_direction(k, d), h / lc["distance"], c)
                except ReconError as exc:
                    errors.append(_err("recon.log_check", "phase", str(exc)))
                    continue
                omegas.extend([o1, o2])
        _weight_checks(spec, omegas, domain, errors, "recon.log_check")


def validate(cfg: ExperimentConfig, verb: str):
    """All guards for ``verb``; returns a list of error records (empty when valid)."""
    errors = []
    if verb not in VERBS:
        return [_err("verb", "value", f"unknown verb {verb!r}")]
    _check_common(cfg, errors)
    if verb == "selftest":
        return errors
    if verb == "carleman-scan":
        _check_carleman(cfg, errors)
        return errors
    domain = _check_domain(cfg, errors)
    if domain is None:
        return errors
    if verb == "cgo-decay":
        _check_cgo(cfg, errors)
        _check_potentials(cfg, domain.grid, errors, certify=False)
        return errors
    _check_potentials(cfg, domain.grid, errors, certify=True)
    if not isinstance(cfg["nd"]["block"], int) or cfg["nd"]["block"] < 1:
        errors.append(_err("nd.block", "range", "block must be a positive integer"))
    if verb == "recon":
        _check_recon(cfg, domain, errors)
    return errors


def check(cfg: ExperimentConfig, verb: str):
    """Raise :class:`ConfigError` when :func:`validate` reports anything."""
    errors = validate(cfg, verb)
    if errors:
        raise ConfigError(errors)
    return cfg
