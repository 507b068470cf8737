import json

import pytest

from ndlab.cli import EXIT_OK, EXIT_SOLVER, EXIT_VALIDATION, csv_text, main, run_verb
from ndlab.config import load_config

BOX = {"shape": "box", "extents": [[0, 1]] * 3, "resolution": [8] * 3}


def _write(tmp_path, data):
    p = tmp_path / "c.cfg"
    p.write_text(json.dumps(data))
    return str(p)


def test_unknown_verb_is_usage_error():
    assert main(["frobnicate"]) == EXIT_VALIDATION


def test_help_exits_zero(capsys):
    assert main(["--help"]) == EXIT_OK


def test_bad_config_file(tmp_path):
    p = tmp_path / "bad.cfg"
    p.write_text("{")
    assert main(["recon", "--config", str(p), "--out", str(tmp_path / "o")]) == EXIT_VALIDATION


def test_validation_error_json(tmp_path, capsys):
    cfg = _write(tmp_path, {"recon": {"h_list": [0.001]}})
    code = main(["recon", "--config", cfg, "--out", str(tmp_path / "o")])
    assert code == EXIT_VALIDATION
    err = json.loads((tmp_path / "o" / "errors.json").read_text())
    assert err["stage"] == "validation" and any(e["guard"] == "oscillation" for e in err["errors"])


def test_solver_failure_exit_code(tmp_path, monkeypatch):
    from ndlab import pipelines

    def boom(*a, **k):
        raise ValueError("unexpected")

    monkeypatch.setattr(pipelines, "run_nd_assemble", boom)
    code = run_verb("nd-assemble", load_config(data={"domain": BOX}), tmp_path / "o", echo=False)
    assert code == EXIT_SOLVER
    err = json.loads((tmp_path / "o" / "errors.json").read_text())
    assert err["type"] == "ValueError" and "traceback" in err


def test_nd_assemble_artifacts_and_workers_invariance(tmp_path):
    cfg = _write(tmp_path, {"domain": BOX})
    assert main(["nd-assemble", "--config", cfg, "--out", str(tmp_path / "a")]) == EXIT_OK
    assert main(["nd-assemble", "--config", cfg, "--out", str(tmp_path / "b"), "--workers", "2"]) == EXIT_OK
    for f in ("fields/nd_q1.bin", "fields/nd_q2.bin", "summary.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    man = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert man["config_hash"] == load_config(data={"domain": BOX}).hash
    assert {"numpy", "scipy", "python", "ndlab"} <= set(man["versions"])
    assert "fields/nd_q1.bin" in man["verbs"]["nd-assemble"]["artifacts"]


def test_seed_override_changes_hash(tmp_path):
    cfg = _write(tmp_path, {"domain": BOX})
    main(["nd-assemble", "--config", cfg, "--out", str(tmp_path / "a"), "--seed-override", "42"])
    man = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert man["config"]["seed"] == 42


def test_csv_round_trips_floats():
    import csv
    import io

    rows = [{"a": 0.1 + 0.2, "b": 1}, {"a": 1e-300, "c": "x"}]
    back = list(csv.DictReader(io.StringIO(csv_text(rows))))
    assert float(back[0]["a"]) == 0.1 + 0.2 and float(back[1]["a"]) == 1e-300
    assert back[0]["c"] == "" and back[1]["b"] == ""


@pytest.mark.parametrize("verb", ["carleman-scan", "cgo-decay", "nd-assemble", "recon"])
def test_default_configs_validate(verb):
    from ndlab.cli import DEFAULT_CONFIG
    from ndlab.config import validate

    assert validate(load_config(DEFAULT_CONFIG[verb]), verb) == []
