import torch

# one line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE_LINES = {}

# single-threaded kernels keep every number in the suite reproducible
torch.set_num_threads(1)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
