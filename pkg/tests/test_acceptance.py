"""Acceptance suite: every criterion at its stated tolerance.

Each test runs one check from :mod:`twoscale.checks` and records the
outcome; ``conftest.py`` prints one PASS/FAIL line per criterion at the
end of the session.  Criteria 5, 6, 8 and 10 are Monte Carlo studies
and take minutes on one CPU.
"""
import pytest

from twoscale.checks import CRITERIA, run_checks

SLOW = {5, 6, 8, 10}


@pytest.mark.parametrize("number", [
    pytest.param(k, marks=pytest.mark.slow, id=f"criterion{k}") if k in SLOW
    else pytest.param(k, id=f"criterion{k}")
    for k in sorted(CRITERIA)
])
def test_criterion(number, acceptance_log):
    (res,) = run_checks([number])
    acceptance_log[number] = res
    assert res.passed, res.summary() + "\n" + "\n".join(res.lines)
