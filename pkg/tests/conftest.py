"""Collects acceptance verdicts and prints them once the session ends."""

VERDICTS = []


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance")
    for number, ok, line in sorted(VERDICTS):
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {line}")
