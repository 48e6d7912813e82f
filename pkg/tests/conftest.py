import os
from pathlib import Path

import pytest

from fvspine.acceptance import run_acceptance

ACCEPTANCE_DIR = Path(os.environ.get("FVSPINE_ACCEPTANCE_DIR",
                                     Path(__file__).resolve().parent.parent / "out" / "acceptance"))
_lines = []


@pytest.fixture(scope="session")
def acceptance():
    """Criterion results at full scale; identical earlier runs are reused after hash checks."""
    results = run_acceptance(ACCEPTANCE_DIR, parallelism=int(os.environ.get("FVSPINE_PARALLELISM", 1)),
                             reuse=True)
    _lines[:] = [r.line() for r in results]
    return {r.number: r for r in results}


def pytest_terminal_summary(terminalreporter):
    if _lines:
        terminalreporter.section("acceptance criteria")
        for line in _lines:
            terminalreporter.write_line(line)
