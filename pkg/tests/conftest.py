import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

from helpers import CRITERION_LINES  # noqa: E402


def pytest_terminal_summary(terminalreporter):
    if not CRITERION_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(CRITERION_LINES):
        terminalreporter.write_line(CRITERION_LINES[n])
