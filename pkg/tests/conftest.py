import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from sbmpot.bernstein import Stable
from sbmpot.kernels import ProcessModel

settings.register_profile("sbm", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("sbm")


@pytest.fixture(scope="session")
def cauchy2():
    return ProcessModel(2, Stable(1.0))


@pytest.fixture(scope="session")
def cauchy3():
    return ProcessModel(3, Stable(1.0))


ACCEPTANCE = []


def report(tag, ok, detail):
    line = f"{tag} {'PASS' if ok else 'FAIL'}: {detail}"
    ACCEPTANCE.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[0][1:])):
            terminalreporter.write_line(line)
