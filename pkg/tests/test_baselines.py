import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from optidice import Dataset, TabularMdp
from optidice.baselines import BaselineConfig, basic_rl, ramdp, spibb, spibb_projection
from optidice.mdp import evaluate_policy, mle_mdp, sample_trajectories, solve_optimal
from optidice.selfcheck import random_mdp


@pytest.fixture
def bandit():
    """One decision state; action 1 looks better but was tried once."""
    T = np.zeros((2, 2, 2))
    T[0, :, 1] = 1.0
    T[1, :, 1] = 1.0
    return TabularMdp(T, np.zeros((2, 2)), [1.0, 0.0], 0.9)


@pytest.fixture
def bandit_data():
    trajs = [[(0, 0, 0.5, 1, True)] for _ in range(100)] + [[(0, 1, 0.6, 1, True)]]
    return Dataset.from_trajectories(trajs, 2, 2)


def test_basic_rl_trusts_the_point_estimate(bandit, bandit_data):
    assert basic_rl(bandit_data, bandit)[0].tolist() == [0.0, 1.0]


def test_ramdp_penalizes_rare_pairs(bandit, bandit_data):
    # penalty 0.3 / sqrt(1) outweighs the 0.1 gap; 0.3 / sqrt(100) does not
    assert ramdp(bandit_data, bandit, kappa=0.3)[0].tolist() == [1.0, 0.0]
    assert ramdp(bandit_data, bandit, kappa=0.003)[0].tolist() == [0.0, 1.0]
    with pytest.raises(ValueError):
        ramdp(bandit_data, bandit, kappa=-1.0)


def test_spibb_keeps_baseline_on_rare_pairs(bandit, bandit_data):
    pi_b = np.array([[0.8, 0.2], [0.5, 0.5]])
    # action 1 has one sample < n_wedge: its baseline mass is frozen
    pi = spibb(bandit_data, bandit, pi_b, n_wedge=5)
    np.testing.assert_allclose(pi[0], [0.8, 0.2])
    pi = spibb(bandit_data, bandit, pi_b, n_wedge=1)
    np.testing.assert_allclose(pi[0], [0.0, 1.0])


def test_projection_by_hand():
    q = np.array([[1.0, 3.0, 2.0]])
    pi_b = np.array([[0.2, 0.3, 0.5]])
    boot = np.array([[True, False, False]])
    np.testing.assert_allclose(spibb_projection(q, pi_b, boot), [[0.2, 0.8, 0.0]])
    boot_all = np.ones((1, 3), dtype=bool)
    np.testing.assert_allclose(spibb_projection(q, pi_b, boot_all), pi_b)


def test_spibb_without_bootstrapping_is_policy_iteration(rng):
    mdp = random_mdp(rng, n_states=6, n_actions=3)
    pi_b = np.full((6, 3), 1 / 3)
    data = sample_trajectories(mdp, pi_b, 200, 40, seed=1)
    model = mle_mdp(data, mdp)
    pi = spibb(data, mdp, pi_b, n_wedge=1)
    sol, _ = solve_optimal(model)
    seen = data.counts_sa.min(axis=1) > 0
    np.testing.assert_allclose(evaluate_policy(model, pi).v[seen], sol.v[seen], atol=1e-8)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n_wedge=st.integers(1, 30))
def test_spibb_improves_on_baseline_in_the_model(seed, n_wedge):
    rng = np.random.default_rng(seed)
    mdp = random_mdp(rng, n_states=5, n_actions=3)
    pi_b = rng.dirichlet(np.ones(3), size=5)
    data = sample_trajectories(mdp, pi_b, 20, 20, seed=rng.integers(1 << 30))
    model = mle_mdp(data, mdp)
    pi = spibb(data, mdp, pi_b, n_wedge)
    assert np.all(evaluate_policy(model, pi).v >= evaluate_policy(model, pi_b).v - 1e-10)
    boot = data.counts_sa < n_wedge
    np.testing.assert_allclose(pi[boot], pi_b[boot])


def test_config_validation():
    assert BaselineConfig().kappa == 0.003
    with pytest.raises(ValueError):
        BaselineConfig(kappa=0.0)
    with pytest.raises(ValueError):
        BaselineConfig(n_wedge=0)
