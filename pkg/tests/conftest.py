from contextlib import contextmanager

import pytest

_acceptance_lines: list[str] = []


@pytest.fixture
def criterion():
    """Record one pass/fail line per acceptance criterion for the summary."""

    @contextmanager
    def check(num: int, desc: str):
        try:
            yield
        except BaseException:
            _acceptance_lines.append(f"criterion {num} FAIL: {desc}")
            raise
        _acceptance_lines.append(f"criterion {num} PASS: {desc}")

    return check


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if _acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_acceptance_lines):
            terminalreporter.write_line(line)
