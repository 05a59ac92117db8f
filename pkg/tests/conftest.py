"""Shared pytest wiring.

The acceptance tests record one verdict line per criterion; this hook
replays them as a section of the terminal summary so the pass/fail list
is visible in plain ``pytest -v`` output (per-test capture would
otherwise swallow the prints).
"""


def pytest_configure(config):
    config._criterion_lines = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_criterion_lines", [])
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for line in lines:
        terminalreporter.write_line(line)
