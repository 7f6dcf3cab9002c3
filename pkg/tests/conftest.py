import numpy as np
import pytest

from pibounds.mdp import Mdp


def make_m2(gamma=0.9):
    """Two states, two actions.

    State 0: a0 self-loop r=0, a1 -> state 1 r=0.
    State 1: a0 self-loop r=1, a1 -> state 0 r=0.
    """
    P = np.zeros((2, 2, 2))
    P[0, 0, 0] = P[0, 1, 1] = P[1, 0, 1] = P[1, 1, 0] = 1.0
    R = np.array([[0.0, 0.0], [1.0, 0.0]])
    return Mdp(2, 2, gamma, P, R)


def random_mdp(rng, n, m, gamma=None, sparse=False):
    P = rng.standard_exponential((n, m, n))
    if sparse:
        P *= rng.random((n, m, n)) < 0.5
        P[np.arange(n), :, rng.integers(n, size=n)] += 1.0
    P /= P.sum(axis=2, keepdims=True)
    R = rng.uniform(-1, 1, (n, m))
    if gamma is None:
        gamma = float(rng.choice([0.5, 0.9, 0.99]))
    return Mdp(n, m, gamma, P, R)


@pytest.fixture
def m2():
    return make_m2()


@pytest.fixture
def one_state():
    return Mdp(1, 1, 0.5, [[[1.0]]], [[0.0]])


# one line per acceptance criterion, printed at the end of the session
ACCEPTANCE_LINES = []


def record_criterion(number, ok, detail):
    ACCEPTANCE_LINES.append(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
