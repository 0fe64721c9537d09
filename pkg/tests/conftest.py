import numpy as np
import pytest

from rmdp_kit.core_mdp import TabularMdp, random_mdp

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance_log():
    def log(number: int, title: str, passed: bool, detail: str) -> None:
        line = f"criterion {number} [{'PASS' if passed else 'FAIL'}] {title}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
    return log


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)


@pytest.fixture
def mdp7():
    return random_mdp(np.random.default_rng(7), 4, 3, gamma=0.9, cost_max=1.0)


@pytest.fixture
def one_state_two_actions():
    """One state, action 0 costs 0 and action 1 costs 1, gamma 0.9."""
    return TabularMdp(cost=np.array([[[0.0], [1.0]]]), kernel=np.ones((1, 2, 1)), rho=np.ones(1), gamma=0.9)
