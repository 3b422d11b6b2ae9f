import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from softquote.model import (ASK, BID, ModelParams, Quote, active_sq_distance, hamiltonian,
                             intensity, jump_increments)

from conftest import zero_intensity


def test_intensity_at_zero_offset():
    p = ModelParams(quote_lo=0.0)
    assert intensity(ASK, 0.0, p) == pytest.approx(1.5)


def test_intensity_at_upper_quote(params):
    assert intensity(ASK, 0.70, params) == pytest.approx(1.5 * math.exp(-1.05))
    assert intensity(ASK, 0.70, params) == pytest.approx(0.52491, abs=1e-5)


def test_dominating_rate_is_bid_intensity_at_lower_quote(params):
    val = intensity(BID, 0.01, params)
    assert val == pytest.approx(1.47766, abs=1e-5)
    assert params.max_intensity == pytest.approx(val)


@pytest.mark.parametrize("delta", [0.0, 0.71, -1.0])
def test_intensity_rejects_out_of_range(params, delta):
    with pytest.raises(ValueError):
        intensity(ASK, delta, params)


def test_intensity_rejects_unknown_side(params):
    with pytest.raises(ValueError):
        intensity("mid", 0.3, params)


def test_params_json_round_trip(params):
    text = json.dumps(params.to_dict())
    assert ModelParams.from_json(text) == params
    assert set(params.to_dict()) == {"horizon", "inventory_bound", "sigma", "gamma", "phi", "eta",
                                     "quote_lo", "quote_hi", "alpha_a", "alpha_b", "k_a", "k_b"}


def test_params_reject_unknown_keys_and_bad_values():
    with pytest.raises(ValueError):
        ModelParams.from_dict({"horizon": 1.0, "volatility": 0.2})
    with pytest.raises(ValueError):
        ModelParams(quote_lo=0.7, quote_hi=0.1)
    with pytest.raises(ValueError):
        ModelParams(gamma=0.0)
    with pytest.raises(ValueError):
        ModelParams(inventory_bound=0)


def test_jump_increments_masked_at_bounds(params):
    y = np.linspace(-1, 1, params.dim)
    assert jump_increments(-5, y, Quote(0.3, 0.4), params)[0] == 0.0
    assert jump_increments(5, y, Quote(0.3, 0.4), params)[1] == 0.0


def test_jump_increments_zero_values(params):
    assert jump_increments(0, np.zeros(params.dim), Quote(0.3, 0.4), params) == (0.3, 0.4)


def test_jump_increments_index_validation(params):
    with pytest.raises(IndexError):
        jump_increments(6, np.zeros(params.dim), Quote(0.3, 0.4), params)
    with pytest.raises(ValueError):
        jump_increments(0, np.zeros(3), Quote(0.3, 0.4), params)


def test_hamiltonian_symmetric_value(params):
    d = 0.6454
    expected = 2 * 1.5 / 0.1 * math.exp(-1.5 * d) * (1 - math.exp(-0.1 * d))
    assert hamiltonian(0, np.zeros(params.dim), Quote(d, d), params) == pytest.approx(expected, rel=1e-12)
    assert expected == pytest.approx(0.7124, abs=5e-4)


def test_hamiltonian_lower_bound_ignores_ask(params):
    y = np.zeros(params.dim)
    h1 = hamiltonian(-5, y, Quote(0.1, 0.3), params)
    h2 = hamiltonian(-5, y, Quote(0.6, 0.3), params)
    assert h1 == h2
    only_bid = (params.running_penalty()[0]
                + intensity(BID, 0.3, params) / 0.1 * (1 - math.exp(-0.1 * 0.3)))
    assert h1 == pytest.approx(only_bid, rel=1e-12)


def test_hamiltonian_without_fills_at_flat_inventory(params):
    p = zero_intensity(params)
    assert hamiltonian(0, np.zeros(p.dim), Quote(0.3, 0.3), p) == 0.0


@pytest.mark.parametrize("q,delta,ref,expected", [
    (0, (0.3, 0.5), (0.3, 0.5), 0.0),
    (5, (0.3, 0.1), (0.3, 0.7), 0.0),
    (0, (0.4, 0.2), (0.1, 0.6), 0.25),
])
def test_active_sq_distance(params, q, delta, ref, expected):
    assert active_sq_distance(q, Quote(*delta), Quote(*ref), params) == pytest.approx(expected)


values = st.lists(st.floats(-3, 3), min_size=11, max_size=11).map(np.array)
quotes = st.tuples(st.floats(0.01, 0.70), st.floats(0.01, 0.70))
inventories = st.integers(-5, 5)


@settings(max_examples=200, deadline=None)
@given(values, quotes, inventories, st.floats(-10, 10))
def test_hamiltonian_translation_invariant(y, d, q, c):
    p = ModelParams()
    assert hamiltonian(q, y + c, Quote(*d), p) == pytest.approx(hamiltonian(q, y, Quote(*d), p), abs=1e-10)


@settings(max_examples=200, deadline=None)
@given(values, quotes, inventories)
def test_hamiltonian_upper_bound(y, d, q):
    p = ModelParams()
    assert hamiltonian(q, y, Quote(*d), p) <= 2 * p.max_intensity / p.gamma


@settings(max_examples=100, deadline=None)
@given(values, quotes, quotes, inventories)
def test_hamiltonian_separable(y, d1, d2, q):
    p = ModelParams()
    h = lambda a, b: hamiltonian(q, y, Quote(a, b), p)
    mixed = h(d1[0], d1[1]) - h(d1[0], d2[1]) - h(d2[0], d1[1]) + h(d2[0], d2[1])
    assert abs(mixed) < 1e-12


@settings(max_examples=100, deadline=None)
@given(values, quotes, quotes)
def test_boundary_masking(y, d1, d2):
    p = ModelParams()
    assert hamiltonian(-5, y, Quote(d1[0], d2[1]), p) == hamiltonian(-5, y, Quote(d2[0], d2[1]), p)
    assert hamiltonian(5, y, Quote(d1[0], d1[1]), p) == hamiltonian(5, y, Quote(d1[0], d2[1]), p)


def test_pluggable_intensity_is_used():
    lin = lambda d: 1.0 - np.asarray(d)
    p = ModelParams(intensity_fns=(lin, lin))
    assert not p.is_exponential
    assert intensity(ASK, 0.5, p) == pytest.approx(0.5)
    assert p.max_intensity == pytest.approx(0.99, abs=1e-6)
