import pytest

from sigrl.diagnostics import SUITE_NAMES, SUITE_TOLERANCES, run_suite, run_suites
from sigrl.errors import ConfigError


@pytest.mark.parametrize("suite", SUITE_NAMES)
def test_suite_passes(suite):
    for check, report in run_suite(suite, seed=0):
        assert report.tol == SUITE_TOLERANCES[suite]
        assert report.passed, (suite, check, report.failures(), report.max_error)


def test_alternate_seed_passes():
    for suite in ("ops", "gmc", "svfr", "full"):
        assert all(r.passed for _, r in run_suite(suite, seed=3))


def test_unknown_suite_rejected():
    with pytest.raises(ConfigError):
        run_suite("everything")


def test_run_suites_flattens():
    rows = run_suites(("gmc", "loss"), seed=0)
    assert [s for s, _, _ in rows] == ["gmc"] * 2 + ["loss"] * 7
    assert all(r.passed for _, _, r in rows)
