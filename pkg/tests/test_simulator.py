import math

import numpy as np
import pytest

from softquote.model import ModelParams
from softquote.ode import TimeGrid, policy_evaluation_ode, solve_hard
from softquote.policies import DeterministicPolicy, PolicySpec, baseline, build_policy, hard_feedback
from softquote.simulator import (SimConfig, _PathNoise, _run_strategy, ce_from_samples,
                                 ce_standard_error, run_monte_carlo, simulate_path)

from conftest import zero_intensity


@pytest.fixture(scope="module")
def policies(params):
    return {
        "hard": build_policy(PolicySpec("hard-feedback"), params),
        "proxy": build_policy(PolicySpec("hamiltonian-gibbs"), params),
        "cs": baseline(PolicySpec("constant-spread"), params),
    }


def test_ce_constant_sample():
    assert ce_from_samples(np.full(10, 0.37), 0.1) == pytest.approx(0.37, abs=1e-15)


def test_ce_risk_neutral_limit(rng):
    r = rng.normal(0.5, 0.3, 1000)
    assert abs(ce_from_samples(r, 1e-8) - r.mean()) <= 1e-6


def test_ce_below_mean(rng):
    r = rng.normal(0.5, 0.3, 1000)
    assert ce_from_samples(r, 0.5) <= r.mean()


def test_ce_empty_sample():
    with pytest.raises(ValueError):
        ce_from_samples([], 0.1)


def test_ce_stable_for_large_rewards():
    expected = 1e4 - math.log((math.exp(-0.0) + math.exp(-1.0)) / 2)
    assert ce_from_samples([1e4, 1e4 + 1], 1.0) == pytest.approx(expected, rel=1e-14)
    assert np.isfinite(ce_from_samples([1e4, -1e4], 1.0))


def test_zero_intensity_gives_zero_reward(params):
    p = zero_intensity(params)
    pol = baseline(PolicySpec("constant-spread"), p)
    for i in range(20):
        out = simulate_path(pol, p, SimConfig(n_paths=1), i)
        assert out.reward == 0.0 and out.fills_a == out.fills_b == 0


def test_acceptance_certain_at_lower_quote(params):
    g = TimeGrid(1.0, 10)
    pol = DeterministicPolicy(g, np.full((10, params.dim, 2), params.quote_lo), params)
    cfg = SimConfig(n_paths=1)
    for i in range(50):
        noise = _PathNoise(params, cfg.seed, i, 1e-3)
        out = _run_strategy(pol, noise, params)
        proposals = len(noise.events)
        # every proposal is filled unless the inventory bound masks it
        if proposals <= params.Q:
            assert out.fills_a + out.fills_b == proposals


def test_paths_respect_bounds_and_self_financing(params, policies):
    cfg = SimConfig(n_paths=300, seed=99)
    mc = run_monte_carlo(list(policies.items()), params, cfg, keep_outcomes=True)
    for name, outs in mc.outcomes.items():
        for o in outs:
            assert -params.Q <= o.inventory <= params.Q
            lhs = o.cash + o.inventory * o.midprice
            assert abs(lhs - (o.spread_income + o.inventory_pnl)) <= 1e-10


def test_fill_rate_below_thinning_bound(params, policies):
    mc = run_monte_carlo([("cs", policies["cs"])], params, SimConfig(n_paths=5000))
    r = mc.row("cs")
    assert r.mean_fills_a <= params.max_intensity * params.horizon
    assert r.mean_fills_b <= params.max_intensity * params.horizon
    assert params.max_intensity * params.horizon == pytest.approx(1.47766, abs=1e-5)


def test_duplicate_strategy_gives_identical_rows(params, policies):
    mc = run_monte_carlo([("a", policies["proxy"]), ("b", policies["proxy"])], params, SimConfig(n_paths=200))
    ra, rb = mc.rows
    assert np.array_equal(mc.rewards["a"], mc.rewards["b"])
    assert ra.ce == rb.ce and ra.time_avg_q2 == rb.time_avg_q2


def test_deterministic_given_seed_and_threads(params, policies):
    s = [("hard", policies["hard"]), ("proxy", policies["proxy"])]
    a = run_monte_carlo(s, params, SimConfig(n_paths=100, seed=5))
    b = run_monte_carlo(s, params, SimConfig(n_paths=100, seed=5, threads=3))
    c = run_monte_carlo(s, params, SimConfig(n_paths=100, seed=6))
    assert all(np.array_equal(a.rewards[k], b.rewards[k]) for k in a.rewards)
    assert not np.array_equal(a.rewards["hard"], c.rewards["hard"])


def test_common_random_numbers_reduce_variance(params, policies):
    mc = run_monte_carlo([("hard", policies["hard"]), ("proxy", policies["proxy"])],
                         params, SimConfig(n_paths=2000))
    a, b = mc.rewards["hard"], mc.rewards["proxy"]
    assert np.var(a - b) < np.var(a) + np.var(b)


def test_diagnostic_row_invariants(params, policies):
    mc = run_monte_carlo(list(policies.items()), params, SimConfig(n_paths=500))
    for r in mc.rows:
        assert r.std_reward >= 0
        assert r.ce <= r.mean_reward


def test_hard_policy_matches_ode_value(params, policies):
    mc = run_monte_carlo([("hard", policies["hard"])], params, SimConfig(n_paths=3000, seed=1))
    r = mc.row("hard")
    v = policy_evaluation_ode(policies["hard"], params).initial[params.Q]
    assert abs(r.ce - v) <= 3 * r.ce_se


def test_standard_error_shrinks(rng):
    r = rng.normal(0, 1, 4000)
    assert ce_standard_error(r[:1000], 0.1) > ce_standard_error(r, 0.1)


def test_needs_a_strategy(params):
    with pytest.raises(ValueError):
        run_monte_carlo([], params, SimConfig())
    with pytest.raises(ValueError):
        SimConfig(n_paths=0)


def test_csv_exports(tmp_path, params, policies):
    mc = run_monte_carlo([("cs", policies["cs"])], params, SimConfig(n_paths=5))
    mc.to_csv(tmp_path / "d.csv")
    mc.rewards_to_csv(tmp_path / "r.csv")
    assert (tmp_path / "d.csv").read_text().splitlines()[0] == \
        "strategy,ce,mean_reward,std_reward,sharpe,mean_pnl,time_avg_q2"
    assert len((tmp_path / "r.csv").read_text().splitlines()) == 6
