import numpy as np
import pytest

from dpiid.model import HyperParams

_ACCEPTANCE = []


def record(criterion, passed, detail=""):
    """Remember a criterion verdict; printed together at the end of the session."""
    line = f"criterion {criterion}: {'PASS' if passed else 'FAIL'}  {detail}".rstrip()
    print(line)
    _ACCEPTANCE.append(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture
def tiny_y():
    return np.array([-0.6, -0.4, 0.3, 0.5, 0.7])


@pytest.fixture
def small_hp():
    return HyperParams(M=3, N=4, s=4.0, S=2.0, nu0=0.0, c=2.0, a_alpha=2.0, b_alpha=4.0)


@pytest.fixture
def psi_hp():
    return HyperParams(M=3, N=4, s=4.0, S=2.0, nu0=0.0, c=2.0, a_alpha=2.0, b_alpha=4.0,
                       weight_mode="random_psi", psi_mean=0.5, psi_sd=2.0)
