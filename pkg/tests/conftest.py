import numpy as np
import pytest

from supslope import exprparse as ex
from supslope import geometry as geo
from supslope import operators as ops
from supslope import symfunc as sf


def real_instance(n=2, N=16, theta=None, g=None, psi=0.0, fspec=None, order=2):
    grid = geo.TorusGrid("real", n, N, order)
    theta = np.eye(n) if theta is None else theta
    g = np.eye(n) if g is None else g
    if isinstance(psi, str):
        psi = ex.field(psi, grid)
    fspec = sf.sigma_k(n, n) if fspec is None else fspec
    return ops.ProblemInstance(grid, g, theta, psi, fspec)


def j_quotient_instance(N=16, psi=0.0):
    return real_instance(2, N, psi=psi, fspec=sf.j_quotient(2))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one verdict line per acceptance criterion, echoed at the end of the session
ACCEPTANCE = {}


def record(label, passed, detail=""):
    line = f"{'PASS' if passed else 'FAIL'} {label}: {detail}"
    ACCEPTANCE[label] = line
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.write_sep("=", "acceptance criteria")
        for label in sorted(ACCEPTANCE, key=lambda s: (len(s.split()[0]), s)):
            terminalreporter.write_line(ACCEPTANCE[label])
