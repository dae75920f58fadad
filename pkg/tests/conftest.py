import pytest

from netschelling.config import SimConfig
from netschelling.core import KernelTriple


@pytest.fixture
def cfg():
    return SimConfig()


@pytest.fixture
def asym_kernels():
    # strongly asymmetric triple: dissimilar ties decay fast, similar ties persist
    return KernelTriple.weibull(1.01, 2.0, 5.0, 0.5)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
