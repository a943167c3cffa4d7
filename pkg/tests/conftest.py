import numpy as np
import pytest

from optidice import TabularMdp

# Fixed 3-state, 2-action instance used for frozen reference values.
SMALL_T = np.array([
    [[0.7, 0.2, 0.1], [0.0, 0.5, 0.5]],
    [[0.3, 0.3, 0.4], [0.1, 0.0, 0.9]],
    [[0.5, 0.5, 0.0], [0.2, 0.2, 0.6]],
])
SMALL_R = np.array([[0.0, 0.3], [0.5, 0.1], [1.0, 0.2]])
SMALL_P0 = np.array([0.6, 0.4, 0.0])
SMALL_D = np.array([[0.2, 0.1], [0.15, 0.15], [0.25, 0.15]])


@pytest.fixture
def small_mdp():
    return TabularMdp(SMALL_T, SMALL_R, SMALL_P0, 0.9)


@pytest.fixture
def small_d():
    return SMALL_D.copy()


@pytest.fixture
def chain_mdp():
    """Two states: in state 0, action 1 pays 1 and moves to absorbing state 1."""
    T = np.zeros((2, 2, 2))
    T[0, 0, 0] = 1.0
    T[0, 1, 1] = 1.0
    T[1, :, 1] = 1.0
    R = np.array([[0.0, 1.0], [0.0, 0.0]])
    return TabularMdp(T, R, [1.0, 0.0], 0.9)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
