import numpy as np
import pytest

_RESULTS = []


class AcceptanceLog:
    """Collects one pass/fail line per acceptance criterion."""

    def record(self, name, passed, detail=""):
        _RESULTS.append((name, bool(passed), detail))
        return passed


@pytest.fixture(scope="session")
def acceptance():
    return AcceptanceLog()


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in _RESULTS:
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"[{status}] {name}" + (f"  ({detail})" if detail else ""))
