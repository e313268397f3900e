import pytest

#: criterion number -> (title, passed, detail); filled by test_acceptance.py
ACCEPTANCE_RESULTS: dict[int, tuple[str, bool, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "heavy: training-heavy acceptance runs")


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for num in sorted(ACCEPTANCE_RESULTS):
        title, passed, detail = ACCEPTANCE_RESULTS[num]
        status = "PASS" if passed else "FAIL"
        line = f"criterion {num} [{status}] {title}"
        if detail:
            line += f" ({detail})"
        terminalreporter.write_line(line)
