import numpy as np
import pytest

from nstbench import kernels


def max_rel_diff(a, b):
    """max |a - b| / max |b|, the backend-agreement measure."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    scale = max(np.abs(b).max(), np.finfo(np.float32).tiny)
    return float(np.abs(a - b).max() / scale)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def restore_workers():
    before = kernels.get_workers()
    yield
    kernels.set_workers(before)


ACCEPTANCE_LINES: dict[int, str] = {}


@pytest.fixture
def criterion(request):
    """Record one PASS/FAIL line for an acceptance criterion, then assert it."""
    def verdict(number, title, ok, detail):
        ACCEPTANCE_LINES[number] = f"criterion {number} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
        print(ACCEPTANCE_LINES[number])
        assert ok, ACCEPTANCE_LINES[number]
    return verdict


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
