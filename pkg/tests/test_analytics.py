from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import fractional_ranks, pearson, sort_scan_pairing
from simex.analytics import RankList, greedy_pairing, rank_of, spearman_rho
from simex.rng import stream


def test_spearman_examples():
    a = ("M", "R", "E", "F", "B")
    assert spearman_rho(a, a) == 1.0
    assert spearman_rho(a, a[::-1]) == -1.0
    assert abs(spearman_rho(a, ("M", "E", "R", "F", "B")) - 0.9) <= 1e-12


def test_spearman_errors():
    with pytest.raises(ValueError, match="differ"):
        spearman_rho(("a", "b"), ("a", "c"))
    with pytest.raises(ValueError, match="two"):
        spearman_rho(("a",), ("a",))
    with pytest.raises(ValueError, match="unique"):
        RankList(("a", "a"))


def test_rank_of_examples():
    assert rank_of({"a": 1, "b": 2, "c": 3}).ids == ("a", "b", "c")
    tied = rank_of({"a": 1, "b": 1})
    assert tied.ranks == {"a": 1.5, "b": 1.5}
    vals = {"x": 0.3, "y": -2.0, "z": 7.0}
    assert rank_of(vals, ascending=False).ids == rank_of(vals).ids[::-1]
    with pytest.raises(ValueError):
        rank_of({"a": float("nan")})


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(0, 4), min_size=2, max_size=8), st.lists(st.integers(0, 4), min_size=8, max_size=8))
def test_spearman_matches_rank_pearson(xs, ys):
    ys = ys[:len(xs)]
    if len(set(xs)) < 2 or len(set(ys)) < 2:
        return
    ids = [f"i{k}" for k in range(len(xs))]
    a = rank_of(dict(zip(ids, xs)))
    b = rank_of(dict(zip(ids, ys)))
    assert abs(spearman_rho(a, b) - pearson(fractional_ranks(xs), fractional_ranks(ys))) <= 1e-12


@settings(max_examples=100, deadline=None)
@given(st.permutations(list(range(7))))
def test_spearman_self_and_reverse(perm):
    a = RankList(tuple(perm))
    assert spearman_rho(a, a) == 1.0
    assert spearman_rho(a, a.reversed()) == -1.0


def test_greedy_examples():
    r = greedy_pairing([[1, 2], [3, 0]], row_ids=[1, 2], col_ids=[1, 2])
    assert [(i, k) for i, k, _ in r.pairs] == [(2, 2), (1, 1)]
    r = greedy_pairing([[1, 2], [2, 10]], row_ids=[1, 2], col_ids=[1, 2])
    assert {(i, k) for i, k, _ in r.pairs} == {(1, 1), (2, 2)} and r.total == 11
    wide = stream(0, "wide").random((10, 26))
    r = greedy_pairing(wide)
    assert len(r.pairs) == 10 and len(r.unpaired_cols) == 16 and not r.unpaired_rows


def test_greedy_ties_and_errors():
    r = greedy_pairing(np.zeros((3, 3)))
    assert [(i, k) for i, k, _ in r.pairs] == [(0, 0), (1, 1), (2, 2)]
    with pytest.raises(ValueError):
        greedy_pairing([[np.inf]])
    with pytest.raises(ValueError):
        greedy_pairing(np.zeros((0, 3)))


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 8), st.integers(1, 8), st.integers(0, 2 ** 32 - 1), st.booleans())
def test_greedy_matches_sort_scan(n, m, seed, coarse):
    r = stream(seed, "greedy")
    c = r.integers(0, 4, (n, m)).astype(float) if coarse else r.random((n, m))
    res = greedy_pairing(c)
    assert res.pairs == sort_scan_pairing(c)
    costs = [v for _, _, v in res.pairs]
    assert costs == sorted(costs)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 10 ** 6))
def test_greedy_invariant_under_monotone_transform(n, m, seed):
    c = stream(seed, "mono").random((n, m))
    a = greedy_pairing(c)
    b = greedy_pairing(np.exp(3 * c) + 1)
    assert [(i, k) for i, k, _ in a.pairs] == [(i, k) for i, k, _ in b.pairs]
