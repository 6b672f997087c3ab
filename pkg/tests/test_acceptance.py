"""Acceptance criteria 1-9 at full size; each prints one pass/fail line."""

import pytest

from astromorph.acceptance import CRITERIA, run_criterion
from conftest import ACCEPTANCE_LINES


@pytest.mark.parametrize("number", [c[0] for c in CRITERIA], ids=[f"criterion{c[0]}_{c[1].replace(' ', '_')}"
                                                                 for c in CRITERIA])
def test_criterion(number):
    res = run_criterion(number)
    line = res.line()
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert res.passed, line
