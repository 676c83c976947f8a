import numpy as np
import pytest

from gpsobol.gp import FitOptions, fit
from gpsobol.inputs import InputSpace, Trapezoidal, Uniform, Weibull, lhs_sample


def toy_response(X):
    X = np.atleast_2d(X)
    out = np.sin(5.0 * X[:, 0]) + 0.5 * X[:, 0]
    if X.shape[1] > 1:
        out = out + np.cos(3.0 * X[:, 1]) + 0.3 * X[:, 1]
    if X.shape[1] > 2:
        out = out + 0.4 * X[:, 0] * X[:, 2]
    return out


def fitted(space, n, seed=0, trend="linear", **opts):
    design = lhs_sample(space, n, seed)
    design = design.with_responses(toy_response(design.points))
    return fit(design, space, trend, FitOptions(seed=seed, **opts))


SPACES = {
    "uniform2": InputSpace((Uniform(0.0, 1.0), Uniform(-1.0, 2.0))),
    "mixed3": InputSpace((Uniform(0.0, 1.0), Weibull(1.5, 0.8), Trapezoidal(-1.0, -0.2, 0.5, 1.0))),
}


@pytest.fixture(scope="session")
def gp_uniform2():
    return SPACES["uniform2"], fitted(SPACES["uniform2"], 15, seed=1)


@pytest.fixture(scope="session")
def gp_mixed3():
    return SPACES["mixed3"], fitted(SPACES["mixed3"], 18, seed=2)


@pytest.fixture(scope="session")
def gsobol_study():
    """g-function, 20 replicates at n = 25, 55, 95 (seed 0), shared by several tests."""
    from gpsobol.bench import convergence_study, gsobol

    return convergence_study(gsobol(), [25, 55, 95], 20, seed=0)


ACCEPTANCE_LINES = []


def report_criterion(number, ok, detail):
    """Record one PASS/FAIL line for the acceptance summary and fail the test if needed."""
    line = f"CRITERION {number}: {'PASS' if ok else 'FAIL'} - {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
