import pytest

_ACCEPTANCE = {}


@pytest.fixture
def record():
    """Log one pass/fail line for an acceptance criterion."""
    def _record(number, name, ok, detail):
        line = f"[{'PASS' if ok else 'FAIL'}] {number}. {name}: {detail}"
        _ACCEPTANCE[number] = line
        print(line)
        return ok
    return _record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[number])
