import numpy as np
import pytest

from roistream.frame_grid import Frame, GridSpec


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_frame(rng, width=64, height=64, index=0):
    return Frame(index, rng.integers(0, 256, size=(height, width), dtype=np.uint8))


@pytest.fixture
def grid64():
    return GridSpec(8, 64, 64)


_VERDICTS: list[str] = []


@pytest.fixture
def verdict():
    """Record one PASS/FAIL line for an acceptance criterion, then assert it."""

    def record(number: int, ok: bool, detail: str) -> None:
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:>2}: {detail}"
        _VERDICTS.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in _VERDICTS:
            terminalreporter.write_line(line)
