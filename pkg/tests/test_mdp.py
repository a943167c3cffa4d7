import numpy as np
import pytest

from optidice import Dataset, TabularMdp
from optidice.mdp import (
    behavior_policy_estimate,
    check_policy,
    empirical_distribution,
    evaluate_policy,
    flow_residual,
    greedy_policy,
    mle_mdp,
    sample_trajectories,
    solve_optimal,
    stationary_distribution,
    uniform_policy,
)


def test_validation_rejects_bad_inputs():
    T = np.full((2, 1, 2), 0.5)
    with pytest.raises(ValueError):
        TabularMdp(T * 2, np.zeros((2, 1)), [1, 0], 0.9)
    with pytest.raises(ValueError):
        TabularMdp(T, np.zeros((2, 1)), [0.7, 0.7], 0.9)
    with pytest.raises(ValueError):
        TabularMdp(T, np.zeros((2, 1)), [1, 0], 1.5)
    with pytest.raises(ValueError):
        TabularMdp(T, np.zeros((3, 1)), [1, 0], 0.9)


def test_arrays_are_read_only(small_mdp):
    with pytest.raises(ValueError):
        small_mdp.reward[0, 0] = 5.0


def test_dict_roundtrip(small_mdp):
    back = TabularMdp.from_dict(small_mdp.to_dict())
    np.testing.assert_array_equal(back.transition, small_mdp.transition)
    np.testing.assert_array_equal(back.reward, small_mdp.reward)
    assert back.discount == small_mdp.discount


def test_chain_values(chain_mdp):
    sol, pi = solve_optimal(chain_mdp)
    np.testing.assert_allclose(sol.v, [1.0, 0.0], atol=1e-10)
    np.testing.assert_allclose(sol.q[0], [0.9, 1.0], atol=1e-10)
    np.testing.assert_array_equal(pi, [[0, 1], [1, 0]])
    # uniform: v0 = 0.5 * 0.9 v0 + 0.5  ->  v0 = 1 / 1.1
    v = evaluate_policy(chain_mdp, uniform_policy(2, 2)).v
    np.testing.assert_allclose(v, [1 / 1.1, 0.0], rtol=1e-14)


def test_optimal_value_matches_policy_evaluation(small_mdp):
    sol, pi = solve_optimal(small_mdp)
    np.testing.assert_allclose(evaluate_policy(small_mdp, pi).v, sol.v, atol=1e-9)


def test_greedy_breaks_ties_low():
    np.testing.assert_array_equal(greedy_policy(np.array([[1.0, 1.0, 0.0]])), [[1, 0, 0]])


def test_policy_checks():
    with pytest.raises(ValueError):
        check_policy(np.array([[0.5, 0.6]]), 1, 2)
    with pytest.raises(ValueError):
        check_policy(np.array([[1.0, 0.0]]), 2, 2)


def test_stationary_distribution_is_flow_feasible(small_mdp, rng):
    pi = rng.dirichlet(np.ones(2), size=3)
    d = stationary_distribution(small_mdp, pi)
    assert d.sum() == pytest.approx(1.0)
    assert np.max(np.abs(flow_residual(small_mdp, d))) < 1e-14
    # value identity: (1 - g) p0 . V = E_d[R]
    v = evaluate_policy(small_mdp, pi).v
    assert np.sum(d * small_mdp.reward) == pytest.approx(0.1 * small_mdp.initial_dist @ v, abs=1e-14)


def test_chain_occupancy(chain_mdp):
    d = stationary_distribution(chain_mdp, uniform_policy(2, 2))
    # mu0 = 0.1 + 0.45 mu0 -> 0.1 / 0.55
    mu0 = 0.1 / 0.55
    np.testing.assert_allclose(d, [[mu0 / 2, mu0 / 2], [(1 - mu0) / 2, (1 - mu0) / 2]], rtol=1e-14)


@pytest.fixture
def tiny_dataset():
    trajs = [
        [(0, 1, 1.0, 1, True)],
        [(0, 0, 0.0, 0, False), (0, 1, 1.0, 1, True)],
        [(0, 0, 0.0, 0, False), (0, 0, 0.0, 0, False)],
    ]
    return Dataset.from_trajectories(trajs, 2, 2)


def test_dataset_counts(tiny_dataset):
    assert len(tiny_dataset) == 5
    assert tiny_dataset.n_trajectories == 3
    np.testing.assert_array_equal(tiny_dataset.counts_sa, [[3, 2], [0, 0]])
    assert tiny_dataset.counts_sas[0, 0, 0] == 3
    assert tiny_dataset.trajectories[1][1] == (0, 1, 1.0, 1, True)


def test_dataset_rejects_out_of_range():
    with pytest.raises(ValueError):
        Dataset.from_trajectories([[(0, 2, 0.0, 0, False)]], 2, 2)


def test_empirical_distribution_padding(tiny_dataset):
    d = empirical_distribution(tiny_dataset)
    np.testing.assert_allclose(d, [[0.6, 0.4], [0, 0]])
    padded = empirical_distribution(tiny_dataset, absorbing=[1])
    np.testing.assert_allclose(padded, np.array([[3, 2], [1, 1]]) / 7)
    with pytest.raises(ValueError):
        empirical_distribution(Dataset.empty(2, 2))


def test_mle_model(tiny_dataset, chain_mdp):
    model = mle_mdp(tiny_dataset, chain_mdp)
    np.testing.assert_allclose(model.transition[0, 0], [1, 0])
    np.testing.assert_allclose(model.transition[0, 1], [0, 1])
    # unseen pairs self-loop without reward
    np.testing.assert_allclose(model.transition[1, :, 1], [1, 1])
    np.testing.assert_allclose(model.reward, [[0, 1], [0, 0]])
    np.testing.assert_allclose(behavior_policy_estimate(tiny_dataset), [[0.6, 0.4], [0.5, 0.5]])


def test_sampling_is_deterministic_and_terminates(chain_mdp):
    pi = uniform_policy(2, 2)
    a = sample_trajectories(chain_mdp, pi, 30, 20, terminal_states=[1], seed=3)
    b = sample_trajectories(chain_mdp, pi, 30, 20, terminal_states=[1], seed=3)
    np.testing.assert_array_equal(a.s, b.s)
    np.testing.assert_array_equal(a.a, b.a)
    assert a.n_trajectories == 30
    assert not np.any(a.s == 1)
    for traj in a.trajectories:
        assert traj[-1][4] or len(traj) == 20
        assert all(not step[4] for step in traj[:-1])


def test_sampling_frequencies_match_model(small_mdp):
    pi = np.array([[1.0, 0.0], [0.0, 1.0], [0.5, 0.5]])
    data = sample_trajectories(small_mdp, pi, 2000, 30, seed=0)
    model = mle_mdp(data, small_mdp)
    np.testing.assert_allclose(model.transition[0, 0], small_mdp.transition[0, 0], atol=0.02)
    np.testing.assert_allclose(model.transition[1, 1], small_mdp.transition[1, 1], atol=0.03)
