import numpy as np
import pytest

from opeval.mdp import DiscountedMDP, Policy


def make_random_mdp(S, A, gamma, seed, noise=0.0):
    rng = np.random.default_rng(seed)
    P = rng.dirichlet(np.ones(S), size=(S, A))
    R = rng.uniform(size=(S, A))
    return DiscountedMDP(P, R, gamma, np.full(S, 1.0 / S), noise)


def random_policy(mdp, seed):
    rng = np.random.default_rng(seed)
    return Policy(rng.integers(mdp.num_actions, size=mdp.num_states))


def bellman_backup_oracle(mdp, policy, tol=1e-13, max_iter=200_000):
    """Iterate Q <- R + gamma P Q(., pi(.)) until the change is below ``tol``."""
    q = np.zeros((mdp.num_states, mdp.num_actions))
    for _ in range(max_iter):
        v = q[np.arange(mdp.num_states), policy.actions]
        new = mdp.reward_mean + mdp.gamma * mdp.transition @ v
        if np.abs(new - q).max() < tol:
            return new
        q = new
    raise AssertionError("oracle did not converge")


@pytest.fixture
def small_mdp():
    return make_random_mdp(3, 2, 0.9, seed=11)


ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance_report():
    """Record one PASS/FAIL line per acceptance criterion; printed at the end of the run."""

    def report(number, title, ok, detail):
        line = f"criterion {number} [{'PASS' if ok else 'FAIL'}] {title}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
