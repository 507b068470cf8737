"""Every built-in self-check as its own test."""

import pytest

from ndlab.selftest import CHECKS, run_all


@pytest.mark.parametrize("name", [n for n, _ in CHECKS])
def test_builtin_check(name):
    (res,) = run_all([name])
    assert res.passed, res.detail
