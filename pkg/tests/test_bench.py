import io
import math

import numpy as np
import pytest

from optidice import bench
from optidice.bench import (
    BenchmarkConfig,
    aggregate,
    bootstrap_ci,
    bootstrap_cvar_pvalue,
    construct_behavior_policy,
    cvar,
    generate_random_mdp,
    goal_values,
    normalized_performance,
    run_benchmark,
    run_single,
    write_runs_csv,
)
from optidice.mdp import evaluate_policy, greedy_policy, solve_optimal, uniform_policy


def test_random_mdp_structure():
    mdp, goal = generate_random_mdp(3)
    assert mdp.n_states == 51 and mdp.n_actions == 4
    assert mdp.discount == 0.95
    assert goal != 0
    sink = 50
    assert mdp.initial_dist[0] == 1.0
    for s in range(50):
        if s == goal:
            np.testing.assert_array_equal(mdp.transition[s, :, sink], 1.0)
            np.testing.assert_array_equal(mdp.reward[s], 1.0)
        else:
            assert np.all(np.count_nonzero(mdp.transition[s], axis=1) <= 4)
            assert np.all(mdp.transition[s, :, sink] == 0)
    assert mdp.reward.sum() == 4.0
    again, goal_again = generate_random_mdp(3)
    np.testing.assert_array_equal(again.transition, mdp.transition)
    assert goal_again == goal


def test_goal_values_match_per_goal_value_iteration():
    rng = np.random.default_rng(0)
    T = rng.dirichlet(np.ones(6), size=(6, 2))
    vals = goal_values(T, 0.9, start=0)
    for g in range(6):
        mdp = bench._attach_goal(T, g, 0.9, 0)
        sol, _ = solve_optimal(mdp)
        assert vals[g] == pytest.approx(sol.v[0], abs=1e-9)


def test_goal_is_hardest_to_reach():
    mdp, goal = generate_random_mdp(11)
    # the goal row is overwritten in the returned MDP, so redraw the raw dynamics
    rng = np.random.default_rng(11)
    T = np.zeros((50, 4, 50))
    for s in range(50):
        for a in range(4):
            succ = rng.choice(50, size=4, replace=False)
            T[s, a, succ] = rng.dirichlet(np.ones(4))
    vals = goal_values(T, 0.95, 0)
    vals[0] = np.inf
    assert goal == int(np.argmin(vals))


@pytest.mark.parametrize("zeta", [0.5, 0.9])
def test_behavior_policy_reaches_target(zeta):
    mdp, _ = generate_random_mdp(5)
    sol, _ = solve_optimal(mdp)
    v_star = evaluate_policy(mdp, greedy_policy(sol.q)).v
    v_unif = evaluate_policy(mdp, uniform_policy(51, 4)).v
    pi = construct_behavior_policy(mdp, zeta, v_star, sol.q, v_unif, seed=1)
    v = evaluate_policy(mdp, pi).v[0]
    assert v <= zeta * v_star[0] + (1 - zeta) * v_unif[0] + 1e-12
    assert np.all(pi > 0)


def test_behavior_policy_zeta_one_is_greedy():
    mdp, _ = generate_random_mdp(6)
    sol, _ = solve_optimal(mdp)
    pi_star = greedy_policy(sol.q)
    v_star = evaluate_policy(mdp, pi_star).v
    v_unif = evaluate_policy(mdp, uniform_policy(51, 4)).v
    pi = construct_behavior_policy(mdp, 1.0, v_star, sol.q, v_unif)
    np.testing.assert_array_equal(np.argmax(pi, axis=1), np.argmax(pi_star, axis=1))
    with pytest.raises(ValueError):
        construct_behavior_policy(mdp, 1.5, v_star, sol.q, v_unif)


def test_normalized_performance():
    assert normalized_performance(0.5, 0.5, 1.0) == 0.0
    assert normalized_performance(1.0, 0.5, 1.0) == 1.0
    assert normalized_performance(0.25, 0.5, 1.0) == -0.5
    assert normalized_performance(0.7, 1.0, 1.0) == 0.0


def test_cvar():
    assert cvar(np.arange(1.0, 21.0)) == 1.0
    x = np.arange(200.0)
    assert cvar(x) == pytest.approx(np.mean(np.arange(10.0)))
    assert cvar([3.0, 1.0, 2.0], level=1.0) == 2.0
    assert cvar(np.arange(21.0)) == pytest.approx(0.5)  # ceil(1.05) = 2
    with pytest.raises(ValueError):
        cvar([])
    with pytest.raises(ValueError):
        cvar([1.0], level=0.0)


def test_bootstrap_helpers():
    rng = np.random.default_rng(0)
    x = rng.normal(size=400)
    lo, hi = bootstrap_ci(x, np.mean, seed=1)
    assert lo < x.mean() < hi
    assert hi - lo == pytest.approx(2 * 1.96 / math.sqrt(400), rel=0.25)
    assert bootstrap_cvar_pvalue(x + 5, x) == 0.0
    assert bootstrap_cvar_pvalue(x, x) == 1.0
    with pytest.raises(ValueError):
        bootstrap_cvar_pvalue(x, x[:-1])


def test_one_record_per_count():
    cfg = BenchmarkConfig(n_runs=1, algorithms=["basic-rl"], traj_counts=(5, 20, 40))
    records = run_single(0, cfg)
    assert [(r.traj_count, r.algorithm) for r in records] == [(5, "basic-rl"), (20, "basic-rl"),
                                                              (40, "basic-rl")]


def test_workers_do_not_change_results():
    cfg = BenchmarkConfig(n_runs=4, traj_counts=(10, 30), seed=3)
    r1, rep1 = run_benchmark(cfg)
    r2, rep2 = run_benchmark(BenchmarkConfig(n_runs=4, traj_counts=(10, 30), seed=3, workers=2))
    assert rep1.to_dict() == rep2.to_dict()
    a, b = io.StringIO(), io.StringIO()
    write_runs_csv(r1, a)
    write_runs_csv(r2, b)
    assert a.getvalue() == b.getvalue()
    assert a.getvalue().splitlines()[0] == "run_id,traj_count,algorithm,normalized_perf,wall_time_s"
    for cell in rep1.cells:
        assert cell.cvar05 <= cell.mean + 1e-12


def test_failed_runs_are_counted_and_excluded(monkeypatch):
    def boom(*args):
        raise RuntimeError("solver exploded")

    monkeypatch.setitem(bench.ALGORITHMS, "ramdp", boom)
    cfg = BenchmarkConfig(n_runs=2, traj_counts=(10,), algorithms=["basic-rl", "ramdp"])
    records, report = run_benchmark(cfg)
    failed = [r for r in records if r.error]
    assert len(failed) == 2 and "exploded" in failed[0].error
    assert report.n_failed == 2
    assert report.cell("ramdp", 10).n_runs == 0
    assert report.cell("basic-rl", 10).n_runs == 2
    assert "ramdp" in report.table()


def test_dataset_is_shared_between_algorithms(monkeypatch):
    seen = []

    def spy(data, template, pi_b, spec, alpha):
        seen.append(data.s.tobytes() + data.a.tobytes())
        return pi_b, True

    monkeypatch.setitem(bench.ALGORITHMS, "basic-rl", spy)
    monkeypatch.setitem(bench.ALGORITHMS, "ramdp", spy)
    run_single(0, BenchmarkConfig(n_runs=1, traj_counts=(15,), algorithms=["basic-rl", "ramdp"]))
    assert len(seen) == 2 and seen[0] == seen[1]


def test_behavior_policy_scores_zero_on_true_mdp(monkeypatch):
    monkeypatch.setitem(bench.ALGORITHMS, "basic-rl",
                        lambda data, template, pi_b, spec, alpha: (pi_b, True))
    records = run_single(2, BenchmarkConfig(n_runs=1, traj_counts=(10,), algorithms=["basic-rl"]))
    assert records[0].normalized_perf == pytest.approx(0.0, abs=1e-12)


def test_config_parsing():
    cfg = BenchmarkConfig.from_dict({"n_runs": 3, "algorithms": ["optidice", {"name": "ramdp",
                                                                            "kappa": 0.01}]})
    assert cfg.algorithms[1].kappa == 0.01
    assert BenchmarkConfig.from_dict(cfg.to_dict()) == cfg
    assert cfg.alpha_for(cfg.algorithms[0], 50) == 1 / 50
    assert BenchmarkConfig(alpha_rule=0.5).alpha_for(cfg.algorithms[0], 50) == 0.5
    for bad in ({"n_runs": 0}, {"zeta": 2.0}, {"algorithms": ["dqn"]}, {"workers": 0},
                {"alpha_rule": "sqrt"}, {"bogus": 1}, {"traj_counts": []}):
        with pytest.raises(ValueError):
            BenchmarkConfig.from_dict(bad)


def test_aggregate_is_pure():
    cfg = BenchmarkConfig(n_runs=3, traj_counts=(10,), algorithms=["basic-rl", "optidice"])
    records, report = run_benchmark(cfg)
    assert aggregate(records, cfg).to_dict() == report.to_dict()
