from __future__ import annotations

import pytest

CRITERIA: dict[int, str] = {}


@pytest.fixture
def criterion():
    """Record and print one PASS/FAIL line for an acceptance criterion."""

    def record(num: int, ok: bool, detail: str) -> bool:
        line = f"CRITERION {num:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        CRITERIA[num] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for num in sorted(CRITERIA):
            terminalreporter.write_line(CRITERIA[num])
