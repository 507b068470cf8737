import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ndlab.config import ConfigError, bundled_configs, compile_expression, load_config, validate


def _fields(errors):
    return {e["field"] for e in errors}


def test_defaults_validate_for_every_verb():
    cfg = load_config()
    for verb in ("carleman-scan", "cgo-decay", "nd-assemble", "recon"):
        assert validate(cfg, verb) == [], verb


@pytest.mark.parametrize("name", bundled_configs())
def test_bundled_configs_validate(name):
    cfg = load_config(name)
    verb = "carleman-scan" if "carleman" in name else "recon"
    assert validate(cfg, verb) == []


def test_unknown_key_rejected():
    with pytest.raises(ConfigError) as exc:
        load_config(data={"recn": {}})
    assert exc.value.errors[0]["guard"] == "unknown_key"


def test_missing_file_rejected():
    with pytest.raises(ConfigError):
        load_config("/nonexistent/file.cfg")


def test_syntax_error_reported(tmp_path):
    p = tmp_path / "bad.cfg"
    p.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(str(p))


def test_oscillation_guard():
    errs = validate(load_config(data={"recon": {"h_list": [0.01]}}), "recon")
    assert any(e["guard"] == "oscillation" for e in errs)


def test_branch_cut_guard():
    errs = validate(load_config(data={"carleman": {"graph": {"delta": 0.2}}}), "carleman-scan")
    assert any(e["guard"] == "branch_cut" for e in errs)


def test_coarse_resolution_rejected():
    errs = validate(load_config(data={"domain": {"resolution": [6, 6, 6]}}), "nd-assemble")
    assert errs


def test_hash_ignores_workers_but_not_seed():
    a = load_config()
    assert a.with_overrides(workers=4).hash == a.hash
    assert a.with_overrides(seed=5).hash != a.hash


def test_file_and_dict_agree(tmp_path):
    data = {"seed": 11, "recon": {"taper": 0.3}}
    p = tmp_path / "c.cfg"
    p.write_text(json.dumps(data))
    assert load_config(str(p)).hash == load_config(data=data).hash


@given(a=st.floats(-5, 5), b=st.floats(-5, 5))
def test_expression_matches_numpy(a, b):
    f = compile_expression(f"({a!r})*x + ({b!r})*cos(pi*y) + exp(-z**2)")
    pts = np.random.default_rng(0).uniform(-1, 1, (10, 3))
    ref = a * pts[:, 0] + b * np.cos(np.pi * pts[:, 1]) + np.exp(-pts[:, 2] ** 2)
    assert np.allclose(f(pts), ref)


@pytest.mark.parametrize("expr", ["__import__('os')", "x.__class__", "open('f')", "lambda: 1", "[1, 2]"])
def test_expression_sandbox(expr):
    with pytest.raises(ConfigError):
        compile_expression(expr)
