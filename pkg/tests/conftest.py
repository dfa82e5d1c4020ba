import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.write_sep("=", "acceptance criteria")
        for num, desc, status in sorted(RESULTS):
            terminalreporter.write_line(f"[{status}] criterion {num:2d}: {desc}")
