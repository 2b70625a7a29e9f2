"""Acceptance battery: one test per criterion at its stated tolerance.

Each test prints a single ``criterion k PASS|FAIL`` line followed by its
individual checks; run with ``-s`` to see them inline.
"""

import pytest

from torcover.acceptance import CRITERIA, run_criterion


@pytest.mark.parametrize("number", sorted(CRITERIA))
def test_criterion(number):
    res = run_criterion(number)
    print()
    print(res.line())
    for c in res.checks:
        print("   ", c.line())
    assert res.passed, "; ".join(c.line() for c in res.failing)
