"""Shared pytest wiring: collects acceptance-criterion outcomes for the summary."""

ACCEPTANCE_LINES = []


def record_criterion(number, ok, detail):
    """Register one criterion outcome; returns the printed line."""
    line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'} - {detail}"
    ACCEPTANCE_LINES.append((number, line))
    return line


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for _, line in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(line)
