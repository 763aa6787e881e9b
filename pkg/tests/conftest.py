"""Shared pytest wiring for the acceptance gate.

Capture swallows everything a passing test prints, including writes to the
real stdout, so verdict lines are collected here and echoed in their own
terminal section once capture has ended.
"""

verdict_lines: list[str] = []


def record_verdict(line: str) -> None:
    verdict_lines.append(line)


def pytest_terminal_summary(terminalreporter):
    if not verdict_lines:
        return
    terminalreporter.section("acceptance criteria")
    for line in verdict_lines:
        terminalreporter.write_line(line)
