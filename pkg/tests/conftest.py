"""Collects acceptance verdicts and prints them in the terminal summary."""

from __future__ import annotations

VERDICTS: dict[int, tuple[str, str]] = {}


def record(number: int, passed: bool | None, detail: str) -> None:
    """Store the verdict of acceptance criterion ``number``; ``None`` means skipped."""
    VERDICTS[number] = ({True: "PASS", False: "FAIL", None: "SKIP"}[passed], detail)


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(VERDICTS):
        verdict, detail = VERDICTS[number]
        terminalreporter.write_line(f"criterion {number}: {verdict}  {detail}")
