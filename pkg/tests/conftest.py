import sys
from contextlib import contextmanager
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

_verdicts = {}


class _Verdict:
    def __init__(self):
        self.detail = ""


@pytest.fixture
def criterion():
    """``with criterion(n, title) as v:`` records a PASS/FAIL line for the summary."""
    @contextmanager
    def record(number, title):
        v = _Verdict()
        try:
            yield v
        except BaseException:
            _verdicts[number] = ("FAIL", title, v.detail)
            print(f"criterion {number} FAIL: {title} {v.detail}")
            raise
        _verdicts[number] = ("PASS", title, v.detail)
        print(f"criterion {number} PASS: {title} {v.detail}")
    return record


def pytest_terminal_summary(terminalreporter):
    if not _verdicts:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_verdicts):
        status, title, detail = _verdicts[n]
        terminalreporter.write_line(f"[{status}] {n:2d}. {title}" + (f" ({detail})" if detail else ""))
