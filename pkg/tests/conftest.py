from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from mcaids.attack import GridContext  # noqa: E402
from mcaids.case_io import load_case39  # noqa: E402


@pytest.fixture(scope="session")
def case39():
    return load_case39()


@pytest.fixture(scope="session")
def ctx39(case39):
    return GridContext(case39)


_CRITERIA: list[str] = []


class _Criterion:
    def __init__(self, number: int, title: str):
        self.number = number
        self.title = title
        self.details: list[str] = []

    def note(self, text: str) -> None:
        self.details.append(text)

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        verdict = "PASS" if exc_type is None else "FAIL"
        extra = "; ".join(self.details)
        if exc_type is not None and exc is not None:
            extra = (extra + "; " if extra else "") + f"{exc_type.__name__}: {str(exc).splitlines()[0] if str(exc) else ''}"
        _CRITERIA.append(f"criterion {self.number:2d} [{verdict}] {self.title}" + (f" ({extra})" if extra else ""))
        return False


@pytest.fixture
def criterion():
    return _Criterion


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_CRITERIA, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
