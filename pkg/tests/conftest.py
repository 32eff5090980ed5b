import numpy as np
import pytest

from simdps import _kernels

BACKENDS = ["numpy"] + (["numba"] if _kernels.HAVE_NUMBA else [])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(params=BACKENDS)
def kernels(request, monkeypatch):
    """Route the dispatching kernels through one backend for the test."""
    table = _kernels.NUMPY_KERNELS if request.param == "numpy" else _kernels.NUMBA_KERNELS
    monkeypatch.setattr(_kernels, "KERNELS", table)
    return request.param


_ACCEPTANCE = pytest.StashKey()


@pytest.fixture
def criterion(request):
    """Run one acceptance check: ``criterion(number, title, budget_s, fn)``.

    ``fn`` returns ``(ok, detail)``. The outcome also has to meet the runtime
    budget. One PASS/FAIL line per criterion is printed after the session.
    """
    lines = request.config.stash.setdefault(_ACCEPTANCE, {})

    def run(number, title, budget, fn):
        import time

        t = time.perf_counter()
        ok, detail = fn()
        elapsed = time.perf_counter() - t
        passed = bool(ok) and elapsed < budget
        line = (f"{'PASS' if passed else 'FAIL'}  {number:2d}. {title}: {detail} "
                f"[{elapsed:.2f}s / {budget:g}s]")
        lines[number] = line
        print(line)
        assert passed, line

    return run


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE, None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for k in sorted(lines):
            terminalreporter.write_line(lines[k])
