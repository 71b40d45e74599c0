"""End-to-end acceptance criteria 1 to 10 on the reference configuration.

The suite runs once per session (a few minutes on one core); each criterion
is its own test and its one-line result is printed in the terminal summary.
"""
import pytest

from occuflux.acceptance import run_acceptance

pytestmark = pytest.mark.slow

LINES = []


@pytest.fixture(scope="module")
def results():
    out = run_acceptance(replicas=4000, seed=0, log=None)
    LINES.extend(r.line() for r in out)
    return {r.number: r for r in out}


@pytest.mark.parametrize("number", range(1, 11))
def test_criterion(results, number):
    r = results[number]
    assert r.passed, r.line()
