from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from secread.coeffs import assemble_sensing_matrix, quantize
from secread.protocol import (
    baseline_cost,
    cost_bounds,
    nonaggregation_cost,
    pary_cost,
    pary_n,
    run_full_round,
    run_plain_round,
)
from secread.topology import Topology, diagnose_links, gen_chain, gen_pary_tree, gen_random_tree, gen_star


def brute_cost(topo, M):
    # every node sends min(subtree size, M) packets
    return sum(min(c + 1, M) for c in topo.descendant_counts().values())


@pytest.mark.parametrize("n, M, cost", [(10, 3, 27), (5, 3, 12)])
def test_chain_cost(n, M, cost):
    d = np.arange(1.0, n + 1)
    assert run_plain_round(gen_chain(n), d, M).cost == cost
    assert cost_bounds(n, M)[1] == cost


def test_star_cost():
    assert run_plain_round(gen_star(4), np.ones(4), 2).cost == 4


@given(st.integers(3, 80), st.integers(0, 1000), st.data())
@settings(max_examples=60, deadline=None)
def test_measurements_and_cost(n, seed, data):
    M = data.draw(st.integers(2, n))
    topo = gen_random_tree(n, seed)
    d = np.random.default_rng(seed).uniform(0, 200, n)
    res = run_plain_round(topo, d, M)
    Phi = assemble_sensing_matrix(topo.meter_ids, M).entries
    np.testing.assert_allclose(res.y, Phi @ d, rtol=1e-12, atol=1e-9)
    assert res.cost == brute_cost(topo, M)
    lo, hi = cost_bounds(n, M)
    assert lo <= res.cost <= hi


def test_quantized_model_exact():
    topo = gen_random_tree(30, 5)
    d = np.random.default_rng(1).uniform(0, 200, 30)
    S = 2**16
    res = run_plain_round(topo, d, 9, scale=S)
    Q = assemble_sensing_matrix(topo.meter_ids, 9).quantized(S)
    e = quantize(d, S)
    assert res.y_int == [sum(q * v for q, v in zip(row, e)) for row in Q]
    ref = run_plain_round(topo, d, 9).y
    assert np.max(np.abs(res.y - ref)) / np.linalg.norm(ref) < 1e-4


def test_full_round():
    topo = gen_chain(4)
    res = run_full_round(topo, [1.0, 2.0, 3.0, 4.0])
    assert res.cost == nonaggregation_cost(topo) == 10
    assert res.raw_received == {1: 1.0, 2: 2.0, 3: 3.0, 4: 4.0}


def test_partial_round():
    cand = Topology({1: 0, 2: 1, 3: 0}, candidates={})
    topo = diagnose_links(cand, [(1, 0)])
    res = run_plain_round(topo, [1.0, 2.0, 3.0], 2)
    assert res.partial and res.missing == (1, 2)


def test_missing_reading():
    with pytest.raises(ValueError):
        run_plain_round(gen_chain(3), {1: 1.0, 2: 2.0}, 2)


def test_cost_bounds_examples():
    assert cost_bounds(10, 3) == (10, 27)
    assert cost_bounds(128, 38) == (128, 128 * 38 - 38 * 37 // 2)
    with pytest.raises(ValueError):
        cost_bounds(10, 1)
    with pytest.raises(ValueError):
        cost_bounds(3, 5)
    assert baseline_cost(128, 38) == 4864


@pytest.mark.parametrize("p", [2, 3])
@pytest.mark.parametrize("L", [1, 2, 3, 4, 5])
@pytest.mark.parametrize("M", [2, 3, 7, 15])
def test_pary_closed_form(p, L, M):
    topo = gen_pary_tree(p, L)
    assert topo.n == pary_n(p, L)
    assert pary_cost(p, L, M) == run_plain_round(topo, np.ones(topo.n), M).cost
