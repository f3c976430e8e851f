"""Collects one status line per acceptance criterion and prints them at the
end of the run, whatever the capture mode."""
import pytest

ACCEPTANCE = {}


@pytest.fixture
def criterion():
    """Yields a recorder: ``record(number, passed, detail)``."""
    def record(number, passed, detail):
        ACCEPTANCE[number] = (bool(passed), detail)
        line = f"{'PASS' if passed else 'FAIL'} criterion {number}: {detail}"
        print(line)
        return line
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[n]
        terminalreporter.write_line(
            f"{'PASS' if passed else 'FAIL'} criterion {n}: {detail}")
