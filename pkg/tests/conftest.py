import os
import sys

import pytest

from znext.tensor import Tape

sys.path.insert(0, os.path.dirname(__file__))


@pytest.fixture(autouse=True)
def clean_tape():
    Tape.clear()
    yield
    Tape.clear()


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.write_sep("=", "acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
