import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from softquote.bellman import (action_propagators, bellman_operator, bellman_recursion,
                               build_generator, ce_score, ce_scores, dual_objective,
                               matrix_exponential, variational_check)
from softquote.model import ASK, BID, ModelParams, Quote
from softquote.quadrature import ActionGrid2D

from conftest import zero_intensity


def taylor_expm(M, terms=60):
    """Scaled 60-term Taylor series, squared back up."""
    s = max(0, int(math.ceil(math.log2(max(np.abs(M).sum(axis=0).max(), 1e-300)))) + 1)
    A = M / 2.0**s
    E = np.eye(M.shape[0])
    term = np.eye(M.shape[0])
    for k in range(1, terms):
        term = term @ A / k
        E = E + term
    for _ in range(s):
        E = E @ E
    return E


def test_generator_structure(params):
    K = build_generator(Quote(0.3, 0.3), params)
    assert np.count_nonzero(np.triu(K, 2)) == 0 and np.count_nonzero(np.tril(K, -2)) == 0
    assert np.all(np.diag(K, 1) >= 0) and np.all(np.diag(K, -1) >= 0)
    assert K[0, 1] > 0 and K[-1, -2] > 0


def test_generator_diagonal_at_flat_inventory(params):
    K = build_generator(Quote(0.3, 0.3), params)
    assert K[5, 5] == pytest.approx(-2 * 1.5 * math.exp(-0.45), rel=1e-14)


def test_generator_boundary_rows(params):
    K = build_generator(Quote(0.3, 0.3), params)
    # inventory -Q cannot sell again: no ask fill moves it down
    assert K[0, 0] == pytest.approx(0.5 * 0.01 * 0.04 * 25 + 0.1 * 0.005 * 25 - 1.5 * math.exp(-0.45))


def test_generator_risk_neutral_rows_sum_to_zero(params):
    p = params.with_(sigma=0.0, eta=0.0, gamma=1e-8)
    K = build_generator(Quote(0.2, 0.5), p)
    assert np.max(np.abs(K.sum(axis=1))) < 1e-7


def test_expm_trivial_cases():
    assert np.array_equal(matrix_exponential(np.zeros((4, 4))), np.eye(4))
    d = np.array([-3.0, 0.0, 0.5, 2.0])
    assert np.allclose(matrix_exponential(np.diag(d)), np.diag(np.exp(d)), rtol=1e-13, atol=0)


def test_expm_matches_taylor_oracle(rng):
    for _ in range(20):
        M = (np.diag(rng.normal(size=11)) + np.diag(rng.uniform(0, 2, 10), 1)
             + np.diag(rng.uniform(0, 2, 10), -1))
        E = matrix_exponential(M)
        ref = taylor_expm(M)
        assert np.max(np.abs(E - ref)) / np.max(np.abs(ref)) <= 1e-11


def test_expm_generator_matches_taylor(params):
    for h in (0.05, 1.0):
        M = h * build_generator(Quote(0.1, 0.6), params)
        assert np.max(np.abs(matrix_exponential(M) - taylor_expm(M))) <= 1e-11


def test_expm_errors():
    with pytest.raises(FloatingPointError):
        matrix_exponential(np.array([[np.nan]]))
    with pytest.raises(FloatingPointError):
        matrix_exponential(np.array([[1000.0]]))
    with pytest.raises(ValueError):
        matrix_exponential(np.ones((2, 3)))


def test_ce_of_constant_without_dynamics(params):
    p = zero_intensity(params, sigma=0.0, eta=0.0)
    for q in (-5, 0, 3):
        assert ce_score(np.full(p.dim, 1.7), Quote(0.3, 0.3), 0.5, q, p) == pytest.approx(1.7, abs=1e-14)


def test_ce_translation(params, rng):
    phi = rng.uniform(-1, 0, params.dim)
    a = ce_score(phi, Quote(0.2, 0.4), 0.1, 2, params)
    b = ce_score(phi + 3.25, Quote(0.2, 0.4), 0.1, 2, params)
    assert b - a == pytest.approx(3.25, abs=1e-12)


def test_ce_rejects_bad_step(params):
    with pytest.raises(ValueError):
        ce_score(np.zeros(params.dim), Quote(0.3, 0.3), 0.0, 0, params)


def frozen_quote_ce_monte_carlo(params, phi, delta, h, q0, n=1_000_000, seed=7):
    """CE of the one-step reward by direct simulation of the frozen-quote system.

    Returns ``(estimate, standard_error)``.
    """
    Q, g, sig = params.Q, params.gamma, params.sigma
    la = params.side_intensity(ASK, delta[0])
    lb = params.side_intensity(BID, delta[1])
    rng = np.random.default_rng(seed)
    q = np.full(n, q0)
    t = np.zeros(n)
    income = np.zeros(n)
    q2 = np.zeros(n)
    alive = np.ones(n, dtype=bool)
    while alive.any():
        idx = np.nonzero(alive)[0]
        qa = q[idx]
        ra = np.where(qa > -Q, la, 0.0)
        rb = np.where(qa < Q, lb, 0.0)
        rate = ra + rb
        dt = rng.exponential(1.0, idx.size) / np.where(rate > 0, rate, 1.0)
        dt = np.where(rate > 0, dt, np.inf)
        end = t[idx] + dt >= h
        stay = np.minimum(dt, h - t[idx])
        q2[idx] += qa.astype(float) ** 2 * stay
        t[idx] += stay
        jump = ~end
        ask = rng.random(idx.size) * rate < ra
        sell = jump & ask
        buy = jump & ~ask
        income[idx[sell]] += delta[0]
        income[idx[buy]] += delta[1]
        q[idx[sell]] -= 1
        q[idx[buy]] += 1
        alive[idx[end]] = False
    # given the inventory path the Brownian term is Gaussian with variance sig^2 * int q^2
    reward = income + sig * np.sqrt(q2) * rng.standard_normal(n) + phi[q + Q] - params.eta * q2
    z = np.exp(-g * reward)
    return -math.log(z.mean()) / g, z.std() / (math.sqrt(n) * z.mean()) / g


def test_ce_score_monte_carlo_cross_check(params):
    h, delta, q0 = 0.5, Quote(0.2, 0.35), 1
    phi = -0.3 * params.inventories.astype(float) ** 2 / 25
    est, se = frozen_quote_ce_monte_carlo(params, phi, delta, h, q0)
    assert abs(est - ce_score(phi, delta, h, q0, params)) <= 3 * se


def test_bellman_translation_and_nonexpansive(params, grid17, rng):
    E = action_propagators(grid17, 0.05, params)
    for _ in range(10):
        phi = rng.uniform(-1, 1, params.dim)
        psi = rng.uniform(-1, 1, params.dim)
        c = rng.uniform(-5, 5)
        T = bellman_operator(phi, 0.05, 0.02, grid17, params, E)
        assert np.max(np.abs(bellman_operator(phi + c, 0.05, 0.02, grid17, params, E) - T - c)) <= 1e-12
        Tpsi = bellman_operator(psi, 0.05, 0.02, grid17, params, E)
        assert np.max(np.abs(T - Tpsi)) <= np.max(np.abs(phi - psi)) + 1e-12


def test_bellman_monotone(params, grid17, rng):
    E = action_propagators(grid17, 0.05, params)
    for _ in range(10):
        phi = rng.uniform(-1, 1, params.dim)
        psi = phi + rng.uniform(0, 0.5, params.dim)
        assert np.all(bellman_operator(phi, 0.05, 0.02, grid17, params, E)
                      <= bellman_operator(psi, 0.05, 0.02, grid17, params, E) + 1e-14)


def test_feynman_kac_moment_positive(params, grid17, rng):
    E = action_propagators(grid17, 0.2, params)
    u = rng.uniform(0.01, 1, params.dim)
    assert np.all(E @ u > 0)


def test_bellman_rejects_bad_arguments(params, grid17):
    with pytest.raises(ValueError):
        bellman_operator(np.zeros(params.dim), 0.05, 0.0, grid17, params)


def test_recursion_terminal_row_and_step(params, grid17):
    table = bellman_recursion(0.05, 0.02, grid17, params)
    assert table.values[-1, -1] == pytest.approx(-0.5)
    assert np.array_equal(table.values[-1], params.terminal_values())
    step = bellman_operator(table.values[5], 0.05, 0.02, grid17, params, table.propagators)
    assert np.max(np.abs(step - table.values[4])) == 0.0


def test_recursion_sandwich(params, grid17):
    table = bellman_recursion(0.05, 0.02, grid17, params)
    V = table.values
    h = table.h
    # empirical K from the per-step drift, then the sandwich with that K must hold
    K = np.max(np.abs(V[:-1] - V[1:])) / h
    assert K <= 2 * params.max_intensity / params.gamma + np.max(np.abs(params.running_penalty())) * 2
    for n in range(table.grid.n_steps):
        assert np.all(V[n] >= V[n + 1].min() - K * h - 1e-14)
        assert np.all(V[n] <= V[n + 1].max() + K * h + 1e-14)


def test_discrete_value_close_to_hard_value(params, v0):
    g = ActionGrid2D.build(17, params)
    for h, lam in ((0.05, 0.05), (0.025, 0.02)):
        table = bellman_recursion(h, lam, g, params)
        err = np.max(np.abs(table.values[0] - v0.values[0]))
        assert err <= 1.0 * (h + lam * (1 + abs(math.log(lam))))


def test_variational_identity(params, grid17, rng):
    for _ in range(5):
        phi = rng.uniform(-1, 1, params.dim)
        for q in (-5, 0, 4):
            assert variational_check(phi, 0.05, 0.02, q, grid17, params) <= 1e-10


def test_dual_constant_scores(grid17):
    w = grid17.weights.ravel()
    scores = np.full(w.size, 0.4)
    assert dual_objective(scores, w, w, 0.001) == pytest.approx(0.4, abs=1e-15)


def test_dual_strictly_below_for_non_gibbs(params, grid17, rng):
    phi = rng.uniform(-1, 1, params.dim)
    E = action_propagators(grid17, 0.05, params)
    C = ce_scores(phi, E, params)[:, 5]
    w = grid17.weights.ravel()
    temp = 0.05 * 0.02
    lse = C.max() + temp * math.log(np.sum(w * np.exp((C - C.max()) / temp)))
    half = np.where(np.arange(w.size) < w.size // 2, w, 0.0)
    half /= half.sum()
    assert dual_objective(C, half, w, temp) < lse


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=11, max_size=11), st.floats(-100, 100))
def test_bellman_translation_property(phi, c):
    p = ModelParams()
    g = ActionGrid2D.build(5, p)
    phi = np.array(phi)
    T0 = bellman_operator(phi, 0.1, 0.05, g, p)
    T1 = bellman_operator(phi + c, 0.1, 0.05, g, p)
    assert np.max(np.abs(T1 - T0 - c)) <= 1e-12 * max(1.0, abs(c))
