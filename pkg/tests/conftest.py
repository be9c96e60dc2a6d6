import numpy as np
import pytest

from mfirl.core import MfgSpec


def random_game(rng, n_states=3, n_actions=2, horizon=3, gamma=0.9, deterministic=False,
                mu_dependent=True, point_mass=False):
    """A small random game whose transitions and rewards depend smoothly on the mean field."""
    S, A = n_states, n_actions
    if deterministic:
        targets = rng.integers(0, S, size=(S, A))
        P0 = np.eye(S)[targets]
        P1 = P0
    else:
        P0 = rng.dirichlet(np.ones(S), size=(S, A))
        P1 = rng.dirichlet(np.ones(S), size=(S, A))
    R0 = rng.normal(size=(S, A))
    R1 = rng.normal(size=(S, A, S)) if mu_dependent else np.zeros((S, A, S))
    w = 0.5 if mu_dependent else 0.0

    def transition(mu):
        lam = w * mu[0]
        return (1 - lam) * P0 + lam * P1

    def reward(mu):
        return R0 + R1 @ mu

    if point_mass:
        mu0 = np.zeros(S)
        mu0[rng.integers(S)] = 1.0
    else:
        mu0 = rng.dirichlet(np.ones(S))
    return MfgSpec(tuple(range(S)), tuple(range(A)), transition, mu0, gamma, horizon, reward)


def random_policy(rng, horizon, S, A):
    return rng.dirichlet(np.ones(A), size=(horizon, S))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys

    acceptance = sys.modules.get("test_acceptance")
    if acceptance is None or not acceptance.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(acceptance.RESULTS):
        terminalreporter.write_line(acceptance.RESULTS[number])
