"""Collects the one-line acceptance verdicts and prints them at the end of
the session, so they show up even though pytest captures test output."""

ACCEPTANCE_LINES = {}


def record(criterion: int, passed: bool, detail: str):
    ACCEPTANCE_LINES[criterion] = f"C{criterion} {'PASS' if passed else 'FAIL'}  {detail}"


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])
