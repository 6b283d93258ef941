import pytest

CRITERIA: dict[int, str] = {}


@pytest.fixture
def record():
    """Store the pass/fail line of an acceptance criterion, then assert it."""

    def _record(number: int, ok: bool, detail: str):
        CRITERIA[number] = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        assert ok, CRITERIA[number]

    return _record


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for number in sorted(CRITERIA):
            terminalreporter.write_line(CRITERIA[number])
