import pytest

from fdmac.timing import derive_timing

ACCEPTANCE = {}


@pytest.fixture(scope="session")
def timing():
    return derive_timing()


@pytest.fixture
def acceptance():
    """Record one criterion outcome for the end-of-run summary."""
    def record(key, ok, detail):
        ACCEPTANCE[key] = (ok, detail)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: (len(k), k)):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  criterion {key}: {detail}")
