import numpy as np
import pytest

from m2ae import _accel
from m2ae.network import NetworkConfig


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(params=["numba", "numpy"])
def kernel_path(request, monkeypatch):
    """Run the test once per kernel implementation."""
    if request.param == "numba" and _accel.numba is None:
        pytest.skip("numba not installed")
    monkeypatch.setattr(_accel, "USE_NUMBA", request.param == "numba")
    return request.param


@pytest.fixture
def small_cfg():
    return NetworkConfig(base_width=8, encoder_blocks=(1, 1, 1, 2))


@pytest.fixture
def verdict(request):
    """Record one acceptance line; all lines are echoed in the terminal summary."""
    lines = request.config.stash.setdefault(_VERDICTS, [])

    def record(number, title, ok, detail):
        line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
        lines.append((number, line))
        print(line)
        return ok
    return record


_VERDICTS = pytest.StashKey()


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_VERDICTS, [])
    if lines:
        terminalreporter.section("acceptance")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
