"""Command-line entry point: ``ndlab <verb> [--config] [--out] [--workers] [--seed-override]``.

Exit codes: 0 pass, 2 validation failure (or usage error), 3 solver failure,
4 acceptance-threshold failure.  Artifacts go to ``--out``:

* ``summary.json`` (one section per verb) and ``manifest.json`` (config hash,
  versions, artifact digests, notes)
* ``carleman.csv``, ``cgo.csv``, ``samples.csv``
* ``fields/*.bin`` (little-endian complex128) with ``fields/*.json`` sidecars
* ``figures/*.png``
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import platform
import sys
import traceback
from pathlib import Path

import numpy as np

from . import __version__
from .config import VERBS, ConfigError, ExperimentConfig, load_config, validate

EXIT_OK, EXIT_VALIDATION, EXIT_SOLVER, EXIT_THRESHOLD = 0, 2, 3, 4
DEFAULT_CONFIG = {"carleman-scan": "flat_carleman.cfg", "cgo-decay": "recon_bump.cfg",
                  "nd-assemble": "recon_bump.cfg", "recon": "recon_bump.cfg", "selftest": None}


# --------------------------------------------------------------------------
# serialization


def _plain(obj):
    """JSON-safe copy: numpy scalars and arrays to Python, complex to ``[re, im]``, non-finite to ``None``."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    if isinstance(obj, (complex, np.complexfloating)):
        return [_plain(complex(obj).real), _plain(complex(obj).imag)]
    if obj is None or isinstance(obj, str):
        return obj
    return str(obj)


def dumps(obj) -> str:
    return json.dumps(_plain(obj), indent=2, sort_keys=True) + "\n"


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (complex, np.complexfloating)):
        return f"{repr(complex(v).real)}{'+' if complex(v).imag >= 0 else '-'}{repr(abs(complex(v).imag))}j"
    return str(v)


def csv_text(rows) -> str:
    """Rows (dicts) to CSV text; columns in first-appearance order, floats via ``repr``."""
    cols = []
    for r in rows:
        for k in r:
            if k not in cols:
                cols.append(k)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in rows:
        w.writerow([_cell(r.get(c)) for c in cols])
    return buf.getvalue()


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def versions() -> dict:
    import matplotlib
    import scipy

    return {"ndlab": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "matplotlib": matplotlib.__version__}


# --------------------------------------------------------------------------
# artifact tree


class ArtifactWriter:
    """Serialized writes into the output tree, tracking what each verb produced."""

    def __init__(self, out: Path, cfg: ExperimentConfig | None, verb: str):
        self.out = Path(out)
        self.cfg = cfg
        self.verb = verb
        self.files = []
        self.notes = list(cfg.notes) if cfg is not None else []
        self.out.mkdir(parents=True, exist_ok=True)

    def text(self, rel, content):
        p = self.out / rel
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text(content)
        self.files.append(rel)
        return p

    def table(self, name, rows):
        return self.text(f"{name}.csv", csv_text(rows))

    def field(self, name, obj):
        obj.save(self.out / "fields" / name)
        self.files += [f"fields/{name}.bin", f"fields/{name}.json"]

    def figure(self, name, data):
        from .plotting import render

        render(name, data, self.out / "figures" / f"{name}.png")
        self.files.append(f"figures/{name}.png")

    def _merged(self, name, section):
        """Merge ``section`` under this verb into an existing JSON document of the same config."""
        p = self.out / name
        doc = {}
        chash = self.cfg.hash if self.cfg is not None else None
        if p.exists():
            try:
                doc = json.loads(p.read_text())
            except json.JSONDecodeError:
                doc = {}
            if doc.get("config_hash") != chash:
                doc = {}
        doc["config_hash"] = chash
        doc.setdefault("verbs", {})[self.verb] = section
        return doc

    def summary(self, section):
        doc = self._merged("summary.json", _plain(section))
        self.text("summary.json", dumps(doc))

    def manifest(self, passed, exit_code):
        arts = {rel: sha256_file(self.out / rel) for rel in sorted(set(self.files)) if rel != "manifest.json"}
        section = {"artifacts": arts, "notes": self.notes, "passed": bool(passed), "exit_code": exit_code}
        doc = self._merged("manifest.json", section)
        doc["versions"] = versions()
        if self.cfg is not None:
            doc["config_source"] = Path(self.cfg.source).name
            doc["config"] = self.cfg.data
        (self.out / "manifest.json").write_text(dumps(doc))


# --------------------------------------------------------------------------
# verbs


def _load_nd_or_assemble(cfg, writer, workers, log):
    from .forward import NdMap
    from .geometry import build_domain
    from .pipelines import nd_matches, potential_arrays, run_nd_assemble

    dom = build_domain(cfg["domain"])
    q1, q2 = potential_arrays(cfg, dom)
    fdir = writer.out / "fields"
    maps = {}
    for name, q in (("nd_q1", q1), ("nd_q2", q2)):
        p = fdir / f"{name}.json"
        if p.exists():
            nd = NdMap.load(fdir / name)
            if nd_matches(nd, dom, q):
                maps[name] = nd
    if len(maps) == 2:
        writer.notes.append("ND maps loaded from fields/nd_q1, fields/nd_q2 (previous nd-assemble)")
        return maps["nd_q1"], maps["nd_q2"]
    writer.notes.append("ND maps not found for this grid and potentials; assembled automatically "
                        "(same procedure as nd-assemble) and written to fields/")
    res = run_nd_assemble(cfg, workers, log)
    for name, nd in res.fields.items():
        writer.field(name, nd)
    return res.fields["nd_q1"], res.fields["nd_q2"]


def run_verb(verb: str, cfg: ExperimentConfig | None, out: Path, workers: int = 1, log=None, echo=True) -> int:
    """Validate, run and write artifacts for one verb; returns the exit code."""
    from .carleman import CarlemanError
    from .cgo import CgoError
    from .forward import ContractViolation, ForwardError
    from .geometry import GeometryError
    from .multipliers import SymbolError
    from .recon import ReconError
    from .weights import WeightError

    SOLVER_ERRORS = (CarlemanError, CgoError, ForwardError, ContractViolation, ReconError, SymbolError,
                     GeometryError, WeightError, np.linalg.LinAlgError, RuntimeError)
    writer = ArtifactWriter(out, cfg, verb)
    if cfg is not None:
        errors = validate(cfg, verb)
        if errors:
            writer.text("errors.json", dumps({"stage": "validation", "errors": errors}))
            if echo:
                print(dumps({"stage": "validation", "errors": errors}), end="")
            return EXIT_VALIDATION
    try:
        if verb == "selftest":
            from .selftest import run_all

            results = run_all(log=log)
            rows = [{"name": r.name, "passed": r.passed, "seconds": r.seconds, "detail": r.detail} for r in results]
            passed = all(r.passed for r in results)
            summary = {"n": len(results), "failed": [r.name for r in results if not r.passed], "passed": passed}
            writer.text("selftest.csv", csv_text([{k: v for k, v in r.items() if k != "seconds"} for r in rows]))
            writer.summary(summary)
            writer.manifest(passed, EXIT_OK if passed else EXIT_THRESHOLD)
            return EXIT_OK if passed else EXIT_THRESHOLD
        from . import pipelines

        if verb == "carleman-scan":
            res = pipelines.run_carleman_scan(cfg, workers, log)
        elif verb == "cgo-decay":
            res = pipelines.run_cgo_decay(cfg, workers, log)
        elif verb == "nd-assemble":
            res = pipelines.run_nd_assemble(cfg, workers, log)
        else:
            nd1, nd2 = _load_nd_or_assemble(cfg, writer, workers, log)
            res = pipelines.run_recon(cfg, nd1, nd2, workers, log)
    except Exception as exc:
        err = {"stage": "solver", "type": type(exc).__name__, "message": str(exc)}
        if not isinstance(exc, SOLVER_ERRORS):
            # unexpected failures still map to the solver exit code, with a traceback
            err["traceback"] = traceback.format_exc()
        writer.text("errors.json", dumps(err))
        if echo:
            print(dumps(err), end="", file=sys.stderr)
        return EXIT_SOLVER
    for name, rows in res.tables.items():
        writer.table(name, rows)
    for name, obj in res.fields.items():
        writer.field(name, obj)
    for name, data in res.figures.items():
        writer.figure(name, data)
    writer.notes += res.notes
    code = EXIT_OK if res.passed else EXIT_THRESHOLD
    writer.summary(res.summary)
    writer.manifest(res.passed, code)
    return code


def build_parser():
    p = argparse.ArgumentParser(prog="ndlab", description="Partial-data Calderon experiments: Carleman scans, CGO "
                                "decay, ND assembly and reconstruction.")
    p.add_argument("verb", choices=VERBS, help="pipeline to run")
    p.add_argument("--config", help="JSON config path or bundled config name (default depends on the verb)")
    p.add_argument("--out", default="ndlab-out", help="output directory (default: ./ndlab-out)")
    p.add_argument("--workers", type=int, default=None, help="concurrent jobs (default: config value)")
    p.add_argument("--seed-override", type=int, default=None, help="replace the config seed")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_VALIDATION
    log = lambda msg: print(msg, file=sys.stderr, flush=True)
    cfg = None
    name = args.config or DEFAULT_CONFIG[args.verb]
    if name is not None or args.verb != "selftest":
        try:
            cfg = load_config(name) if name else load_config()
        except ConfigError as exc:
            print(dumps({"stage": "validation", "errors": exc.errors}), end="")
            return EXIT_VALIDATION
        cfg = cfg.with_overrides(args.seed_override, args.workers)
    workers = cfg.workers if cfg is not None else max(1, args.workers or 1)
    code = run_verb(args.verb, cfg, Path(args.out), workers, log)
    status = {EXIT_OK: "pass", EXIT_VALIDATION: "validation failure", EXIT_SOLVER: "solver failure",
              EXIT_THRESHOLD: "acceptance-threshold failure"}[code]
    log(f"ndlab {args.verb}: {status} (exit {code}); artifacts in {args.out}")
    return code


if __name__ == "__main__":
    sys.exit(main())
