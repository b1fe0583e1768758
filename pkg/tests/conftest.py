import sys
from fractions import Fraction
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from noisylossy.bes import BesParams  # noqa: E402
from noisylossy.model import builtin_bes  # noqa: E402


@pytest.fixture(scope="session")
def bes01():
    return builtin_bes(Fraction(1, 10))


@pytest.fixture(scope="session")
def default_params():
    return BesParams(Fraction(1, 10), Fraction(1, 10), 0.1)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.RESULTS:
        terminalreporter.write_line(line)
