import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

CRITERIA: list[str] = []


def record_criterion(line: str):
    """Keep a criterion line for the terminal summary and echo it immediately."""
    CRITERIA.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in CRITERIA:
            terminalreporter.write_line(line)
