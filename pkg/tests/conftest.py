import pytest

ACCEPTANCE = {}


@pytest.fixture
def record():
    """Register one acceptance line: record(number, name, ok, detail)."""

    def _record(number, name, ok, detail=""):
        ACCEPTANCE[number] = (name, bool(ok), detail)
        return ok

    return _record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        name, ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {k:>2}. {name}: {detail}")
