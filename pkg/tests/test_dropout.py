import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from greenrl.dropout import (SampleBatch, drop, drop_mask, dropout_return, fragment_returns,
                             percentile_rank, percentile_reward)
from greenrl.policy import evaluate_return

P_VALUES = (0.6, 0.7, 0.8, 0.9, 1.0)
rewards_st = st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=1, max_size=60)


def nearest_rank(values, p):
    """Independent oracle: sort, then take rank ceil(p n) using exact fractions."""
    from fractions import Fraction
    n = len(values)
    k = math.ceil(Fraction(str(p)) * n)
    return sorted(values)[max(k, 1) - 1]


def _batch(r):
    n = len(r)
    return SampleBatch(np.zeros((n, 2)), np.zeros((n, 1)), np.asarray(r, float), np.zeros((n, 2)),
                       np.zeros(n), np.arange(n), np.zeros(n, int))


def test_percentile_examples():
    r = np.arange(1.0, 11.0)
    assert percentile_reward(r, 0.8) == 8.0
    assert percentile_reward(r, 1.0) == 10.0
    assert percentile_reward(np.full(7, 3.5), 0.6) == 3.5
    assert percentile_rank(10, 0.7) == 7


def test_drop_examples():
    r = np.arange(1.0, 11.0)
    np.random.default_rng(0).shuffle(r)
    kept = drop(_batch(r), 0.8)
    assert sorted(kept.r) == list(range(1, 9))
    assert np.array_equal(drop(r, 1.0), r)
    assert len(drop(np.full(9, 2.0), 0.6)) == 9


def test_drop_keeps_input_order_and_leaves_input():
    b = _batch([5.0, 1.0, 4.0, 2.0, 3.0])
    before = b.r.copy()
    kept = drop(b, 0.6)
    assert list(kept.r) == [1.0, 2.0, 3.0]
    assert list(kept.fragment) == [1, 3, 4]
    assert np.array_equal(b.r, before)


def test_rejections():
    with pytest.raises(ValueError):
        drop([], 0.8)
    with pytest.raises(ValueError):
        percentile_reward([1.0], 0.0)
    with pytest.raises(ValueError):
        percentile_reward([1.0], 1.5)
    with pytest.raises(ValueError):
        drop([1.0, np.nan], 0.5)
    with pytest.raises(ValueError):
        SampleBatch(np.zeros((2, 1)), np.zeros((2, 1)), np.zeros(3), np.zeros((2, 1)),
                    np.zeros(2), np.zeros(2), np.zeros(2))


def test_dropout_return_examples():
    assert dropout_return([[1.0, 1.0, 1.0]], 1.0, 0.0) == 1.0
    assert dropout_return([[2.0, 4.0, 8.0]], 1.0, 0.5) == 6.0
    frags = [[1.0, 2.0], [3.0, 0.0], [-1.0, 5.0], [0.5]]
    plain = np.mean([evaluate_return(f, 0.9) for f in frags])
    assert dropout_return(frags, 1.0, 0.9) == pytest.approx(plain)
    # two worst fragments out of four at p = 0.5
    values = sorted(evaluate_return(f, 0.9) for f in frags)
    assert dropout_return(frags, 0.5, 0.9) == pytest.approx(np.mean(values[:2]))


def test_fragment_returns_from_batch():
    b = _batch([1.0, 2.0, 4.0])
    b.fragment[:] = [7, 7, 3]
    b.step[:] = [0, 1, 0]
    ids, values = fragment_returns(b, 0.5)
    assert list(ids) == [3, 7]
    assert list(values) == [4.0, 2.0]
    assert dropout_return(b, 0.5, 0.5) == 2.0


@given(rewards_st, st.sampled_from(P_VALUES))
def test_percentile_matches_oracle(r, p):
    assert percentile_reward(r, p) == nearest_rank(r, p)


@given(st.lists(st.integers(-10**6, 10**6), min_size=1, max_size=80, unique=True), st.sampled_from(P_VALUES))
def test_cardinality_distinct(r, p):
    assert len(drop(np.array(r, float), p)) == math.ceil(round(p * len(r), 9))


@given(rewards_st, st.sampled_from(P_VALUES), st.sampled_from(P_VALUES))
def test_pessimism_monotonicity_idempotence(r, p, q):
    r = np.array(r)
    kept = drop(r, p)
    assert kept.mean() <= r.mean() + 1e-9 * max(1.0, abs(r).max())
    lo, hi = sorted((p, q))
    small, big = drop_mask(r, lo), drop_mask(r, hi)
    assert np.all(big[small])
    assert np.array_equal(drop(r, 1.0), r)
    # the retained set is closed under re-application at p = 1
    assert np.array_equal(drop(kept, 1.0), kept)
    assert np.all(kept <= percentile_reward(r, p))
