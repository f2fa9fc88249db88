import numpy as np
import pytest

from rwre.env import Environment, EnvironmentLaw


@pytest.fixture
def law2():
    return EnvironmentLaw(2, 0.05)


@pytest.fixture
def law3():
    return EnvironmentLaw(3, 0.05)


@pytest.fixture
def env2(law2):
    return Environment(law2, 11)


@pytest.fixture
def srw2():
    return Environment(EnvironmentLaw.srw(2), 0)


def dense_generator(env, pts):
    """Dense matrix of L = (1/2) sum_i a_i grad_i^2 restricted to ``pts`` (zero outside)."""
    pts = np.asarray(pts)
    index = {tuple(p): i for i, p in enumerate(pts.tolist())}
    a = env.values(pts)
    n, d = len(pts), env.d
    Lm = -np.eye(n)
    for i, p in enumerate(pts.tolist()):
        for k in range(d):
            for s in (1, -1):
                q = list(p)
                q[k] += s
                j = index.get(tuple(q))
                if j is not None:
                    Lm[i, j] += a[i, k] / 2
    return Lm


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for k in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[k])
