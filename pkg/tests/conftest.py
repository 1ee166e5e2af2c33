import pytest

from tesselogic.grid import Alphabet

_CRITERIA: list[tuple[str, bool, float, str]] = []


@pytest.fixture
def record_criterion():
    """Record (label, passed, seconds, detail) for the acceptance summary."""

    def record(label, passed, seconds, detail=""):
        _CRITERIA.append((label, bool(passed), seconds, detail))

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for label, passed, seconds, detail in sorted(_CRITERIA, key=lambda c: int(c[0].split()[0])):
        status = "PASS" if passed else "FAIL"
        extra = f"  ({detail})" if detail else ""
        terminalreporter.write_line(f"[{status}] criterion {label}  {seconds:.1f}s{extra}")


@pytest.fixture
def WL():
    return Alphabet(("white", "lime"))


@pytest.fixture
def WLB():
    return Alphabet(("white", "lime", "blue"))
