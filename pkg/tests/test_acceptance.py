"""The twelve acceptance criteria, one test each.

Each test prints its one-line verdict; the lines are repeated in the
terminal summary so they are visible without ``-s``.
"""

import pytest

from refugia.acceptance import CRITERIA, run_criterion

ACCEPTANCE_LINES: list[str] = []


@pytest.mark.slow
@pytest.mark.parametrize("number", sorted(CRITERIA))
def test_criterion(number):
    result = run_criterion(number)
    line = result.line()
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert result.passed, line
