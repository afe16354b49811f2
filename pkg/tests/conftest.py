from fractions import Fraction

import pytest
from hypothesis import settings

from ergoloop.agents import FiniteActionAgent
from ergoloop.blocks import fir_filter, lag_controller, pi_controller
from ergoloop.core import ProbabilityFunction
from ergoloop.loop import ClosedLoopSystem

settings.register_profile("default", deadline=None, max_examples=100)
settings.load_profile("default")


def example_agents():
    high = FiniteActionAgent((0, 1), (
        ProbabilityFunction.logistic(0.98, -0.95, 100, 5, lower_bound=0.03),
        ProbabilityFunction.logistic(0.02, 0.95, 100, 5, lower_bound=0.02),
    ))
    low = FiniteActionAgent((0, 1), (
        ProbabilityFunction.logistic(0.02, 0.95, 100, 1, lower_bound=0.02),
        ProbabilityFunction.logistic(0.98, -0.95, 100, 1, lower_bound=0.03),
    ))
    return [high] * 5 + [low] * 5


def example_system(controller="pi"):
    if controller == "pi":
        ctl = pi_controller(Fraction(1, 10), -4)
    else:
        ctl = lag_controller(Fraction(1, 10), Fraction("-4.01"), Fraction("0.99"))
    return ClosedLoopSystem(example_agents(), fir_filter([Fraction(1, 2), Fraction(1, 2)]), ctl, 5)


def example_init(system, xc0=50.0):
    return system.initial_state(agents=[1] * 5 + [0] * 5, controller=[xc0])


@pytest.fixture
def pi_system():
    return example_system("pi")


@pytest.fixture
def lag_system():
    return example_system("lag")


ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
