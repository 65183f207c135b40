"""Shared pytest wiring: a registry that renders one line per acceptance
check in the terminal summary, whether or not the individual test passed."""
from __future__ import annotations

import pytest

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def acceptance_report():
    """Recorder used by the acceptance tests: record(name, ok, detail)."""

    def record(name: str, ok: bool, detail: str = "") -> bool:
        tag = "PASS" if ok else "FAIL"
        suffix = f" :: {detail}" if detail else ""
        ACCEPTANCE_LINES.append(f"[{tag}] {name}{suffix}")
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in ACCEPTANCE_LINES:
        terminalreporter.write_line(line)
