"""Shared pytest wiring: replay the acceptance verdict lines after the run.

Stdout capture would otherwise swallow the per-criterion lines on passing
runs; the terminal summary hook writes them to the real stdout regardless.
"""

VERDICTS: list[str] = []


def record_verdict(line: str) -> None:
    VERDICTS.append(line)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if VERDICTS:
        terminalreporter.section("acceptance gate", sep="-")
        for line in VERDICTS:
            terminalreporter.write_line(line)
