import numpy as np
import pytest
from hypothesis import strategies as st

from cptsca.scenario import Agent, AllocationProblem
from cptsca.utility import CptParams

finite = dict(allow_nan=False, allow_infinity=False)


@st.composite
def cpt_params(draw, increasing=True):
    """Valid parameters with mu = 1; slopes positive on both sides when ``increasing``."""
    g1 = draw(st.sampled_from([-1.0, 1.0])) * draw(st.floats(0.3, 2.0, **finite))
    g2 = draw(st.sampled_from([-1.0, 1.0])) * draw(st.floats(0.3, 2.0, **finite))
    m = draw(st.floats(0.5, 3.0, **finite))
    n = draw(st.floats(0.5, 3.0, **finite))
    s1 = draw(st.floats(0.2, 3.0, **finite))
    s2 = draw(st.floats(0.2, 3.0, **finite))
    if not increasing:
        s1 *= draw(st.sampled_from([-1.0, 1.0]))
    alpha = draw(st.sampled_from([-1.0, 1.0])) * draw(st.floats(0.05, 1.5, **finite))
    beta = draw(st.sampled_from([-1.0, 1.0])) * draw(st.floats(0.05, 1.5, **finite))
    x0 = draw(st.floats(-3.0, 3.0, **finite))
    # slope at x0 is -lambda/(gamma*scale)
    return CptParams(alpha, beta, -s1 * g1 * m, -s2 * g2 * n, g1, g2, 1.0, 1.0, m, n, x0)


def exp_concave(slope=1.0, curv=1.0, x0=0.0, loss_slope=None):
    """Concave on both sides; u'(x0+) = slope, u'(x0-) = loss_slope (default 2 * slope)."""
    ls = 2.0 * slope if loss_slope is None else loss_slope
    return CptParams(curv, curv, slope, ls, -1.0, -1.0, 1.0, 1.0, 1.0, 1.0, x0)


def make_problem(params, gains=None, noise=1.0, p_total=1.0):
    gains = np.ones(len(params)) if gains is None else gains
    return AllocationProblem(tuple(Agent(p, float(g)) for p, g in zip(params, gains)),
                             noise, p_total)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance_report():
    """Record one pass/fail line per acceptance criterion; echoed in the run summary."""
    def report(number, ok, detail):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok
    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
