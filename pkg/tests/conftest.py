import pytest

_ACCEPTANCE: dict[int, str] = {}


@pytest.fixture
def verdict():
    """Record one acceptance line: ``verdict(n, passed, text)``."""
    def record(number: int, passed: bool, text: str):
        _ACCEPTANCE[number] = f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {text}"
        print(_ACCEPTANCE[number])
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        terminalreporter.write_line(_ACCEPTANCE[number])
