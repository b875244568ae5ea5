import numpy as np
import pytest

from seisnet import kernels


@pytest.fixture(params=kernels.available())
def backend(request):
    """Run the test once per importable kernel backend."""
    with kernels.using(request.param):
        yield request.param


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_CRITERIA = pytest.StashKey[dict]()


class _Criterion:
    def __init__(self, lines, number, title):
        self.lines, self.number, self.title = lines, number, title
        self.detail = ""

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        status = "PASS" if exc_type is None else "FAIL"
        detail = self.detail
        if exc is not None:
            detail = (detail + "; " if detail else "") + f"{exc_type.__name__}: {str(exc).splitlines()[0] if str(exc) else ''}"
        line = f"criterion {self.number} {status}: {self.title} [{detail}]"
        self.lines[self.number] = line
        print(line)
        return False


@pytest.fixture
def criterion(request):
    """``with criterion(n, title) as c:`` records one PASS/FAIL line for the run summary."""
    lines = request.config.stash.setdefault(_CRITERIA, {})
    return lambda number, title: _Criterion(lines, number, title)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_CRITERIA, {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])
