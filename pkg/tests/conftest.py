"""Shared pytest plumbing: echo acceptance-criterion verdict lines.

Acceptance tests record one human-readable PASS/FAIL line per criterion via
``record_criterion``; a terminal-summary hook replays them after the run so
the verdicts are visible even though pytest captures stdout.
"""
CRITERION_LINES: list[str] = []


def record_criterion(line: str) -> None:
    print(line)
    CRITERION_LINES.append(line)


def pytest_terminal_summary(terminalreporter):
    if not CRITERION_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in CRITERION_LINES:
        terminalreporter.write_line(line)
