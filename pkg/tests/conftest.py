import numpy as np
import pytest

from radiotrack import AntennaConfig, CosineLobePattern, MovementParams, SimScenario, simulate, uniform_times


def square_towers(L=2000.0, A=1e-4, height=10.0):
    """Four antennas on the corners of an ``L`` square, all aimed at its centre."""
    c = L / 2
    towers = []
    for i, (x, y) in enumerate([(0, 0), (L, 0), (0, L), (L, L)]):
        towers.append(AntennaConfig(f"T{i}", (x, y, height), np.arctan2(c - x, c - y), CosineLobePattern(A)))
    return towers


def small_scenario(n=200, seed=0, beta=(0.1, 0.1, 2e-3), L=2000.0, dt=2.0, A=1e-4):
    params = MovementParams.from_arrays(beta, (1.0, 1.0, 0.1))
    return SimScenario(params, [L / 2, 0, L / 2, 0, 30], uniform_times(n, dt), square_towers(L, A), seed=seed)


@pytest.fixture
def towers():
    return square_towers()


@pytest.fixture(scope="session")
def sim_small():
    return simulate(small_scenario())


def pytest_configure(config):
    config.acceptance_lines = {}


def pytest_terminal_summary(terminalreporter, config):
    lines = config.acceptance_lines
    if lines:
        terminalreporter.section("acceptance criteria")
        for number in sorted(lines):
            terminalreporter.write_line(lines[number])
