import contextlib
import time

import pytest

_LINES: list[str] = []


class Criterion:
    def __init__(self, number: int, name: str):
        self.number = number
        self.name = name
        self.details: list[str] = []

    def note(self, text: str) -> None:
        self.details.append(text)


@contextlib.contextmanager
def _criterion(number: int, name: str):
    c = Criterion(number, name)
    t0 = time.perf_counter()
    status = "FAIL"
    try:
        yield c
        status = "PASS"
    finally:
        c.note(f"{time.perf_counter() - t0:.1f}s")
        line = f"[{status}] criterion {number}: {name} -- " + "; ".join(c.details)
        _LINES.append(line)
        print(line)


@pytest.fixture
def criterion():
    return _criterion


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_LINES, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
