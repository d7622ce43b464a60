"""Shared test plumbing: the acceptance-criterion report.

``criterion`` records one verdict line per headline guarantee; the lines are
echoed in their own section at the end of the run so the pass/fail status of
every guarantee is visible even under captured output.
"""

from __future__ import annotations

CRITERION_LINES: list[str] = []


def criterion(name: str, ok: bool, detail: str) -> None:
    """Record and assert one acceptance-criterion verdict."""
    line = f"{name}: {'PASS' if ok else 'FAIL'} ({detail})"
    CRITERION_LINES.append(line)
    print(f"[criterion] {line}")
    assert ok, line


def pytest_terminal_summary(terminalreporter):
    if CRITERION_LINES:
        terminalreporter.section("acceptance criteria")
        for line in CRITERION_LINES:
            terminalreporter.write_line(line)
