import numpy as np
import pytest

from asian_uvm import Grid2D, ModelParams, Payoff, SchemeConfig, TimeGrid

MONOTONE = SchemeConfig(theta=1.0, rannacher_steps=0, y_advection=1)


@pytest.fixture
def params():
    return ModelParams(r=0.05, sigma0=0.2, eps=0.0, T=1.0, x0=100.0)


@pytest.fixture
def small_grid(params):
    return Grid2D.for_params(params, 41, 41)


@pytest.fixture
def small_tgrid(params):
    return TimeGrid(params.T, 40)


@pytest.fixture
def butterfly():
    return Payoff.butterfly(90.0, 100.0, 110.0, mollify_width=1.0)


@pytest.fixture
def call():
    return Payoff.call(100.0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, echoed at the end of the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
