import numpy as np
import pytest
from hypothesis import given, strategies as st

from eventdart.errors import InsufficientCandidates, ShapeError
from eventdart.matching import (FeatureSet, build_match_forest, format_match_csv, match_sets,
                                two_nearest)
from helpers import match_correctness, rotated_slices


def brute_matches(A, B, ratio):
    out = []
    for i, a in enumerate(A):
        d = np.sqrt(((B - a) ** 2).sum(axis=1))
        order = np.lexsort((np.arange(len(B)), d))
        d1, d2 = d[order[0]], d[order[1]]
        if d2 > 0 and d1 < ratio * d2:
            out.append((i, int(order[0])))
    return out


def test_example():
    A = np.array([[0.0, 0.0], [5.0, 5.0]])
    B = np.array([[0.1, 0.0], [3.0, 0.0], [5.0, 5.2], [5.0, 4.85]])
    pairs = match_sets(A, B, 0.6)
    assert [(p.index_a, p.index_b) for p in pairs] == [(0, 0)]
    assert pairs[0].ratio == pytest.approx(0.1 / 3.0)


def test_zero_second_distance_is_ambiguous():
    A = np.array([[1.0, 1.0]])
    B = np.array([[1.0, 1.0], [1.0, 1.0]])
    assert match_sets(A, B, 1.0) == []


@given(st.integers(0, 2 ** 31 - 1), st.floats(0.1, 1.0))
def test_equals_brute_force(seed, ratio):
    r = np.random.default_rng(seed)
    A, B = r.random((25, 6)), r.random((30, 6))
    got = [(p.index_a, p.index_b) for p in match_sets(A, B, ratio)]
    assert got == brute_matches(A, B, ratio)


@given(st.integers(0, 2 ** 31 - 1))
def test_kept_pairs_satisfy_ratio_strictly(seed):
    r = np.random.default_rng(seed)
    A, B = r.random((40, 5)), r.random((40, 5))
    for p in match_sets(A, B, 0.8):
        assert p.distance_first <= p.distance_second and p.ratio < 0.8


@given(st.integers(0, 2 ** 31 - 1))
def test_monotone_in_ratio(seed):
    r = np.random.default_rng(seed)
    A, B = r.random((40, 5)), r.random((50, 5))
    prev = set()
    for ratio in (0.2, 0.4, 0.6, 0.8, 1.0):
        cur = {(p.index_a, p.index_b) for p in match_sets(A, B, ratio)}
        assert prev <= cur
        prev = cur


def test_two_nearest_tie_break():
    B = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]])
    idx, d = two_nearest(np.zeros((1, 2)), B)
    assert idx.tolist() == [[0, 1]] and np.allclose(d, 1.0)


def test_forest_mode_with_full_budget_is_exact(rng):
    A, B = rng.random((30, 4)), rng.random((40, 4))
    f = build_match_forest(B, 4, seed=0, max_checks=4 * 40)
    assert ([(p.index_a, p.index_b) for p in match_sets(A, B, 0.7, forest=f)]
            == [(p.index_a, p.index_b) for p in match_sets(A, B, 0.7)])


def test_mutual_is_a_subset(rng):
    A, B = rng.random((30, 4)), rng.random((30, 4))
    one = {(p.index_a, p.index_b) for p in match_sets(A, B, 0.9)}
    both = {(p.index_a, p.index_b) for p in match_sets(A, B, 0.9, mutual=True)}
    assert both <= one


def test_errors():
    with pytest.raises(InsufficientCandidates):
        match_sets(np.zeros((2, 3)), np.zeros((1, 3)))
    with pytest.raises(ShapeError):
        match_sets(np.zeros((2, 3)), np.zeros((3, 4)))
    with pytest.raises(ValueError):
        match_sets(np.zeros((2, 3)), np.zeros((3, 3)), ratio=0.0)
    with pytest.raises(ShapeError):
        FeatureSet(np.zeros((2, 3)), np.zeros(2), np.zeros(1), np.zeros(2))
    assert match_sets(np.zeros((0, 3)), np.zeros((3, 3))) == []


def test_csv_layout():
    A = FeatureSet(np.eye(2), np.array([1, 2]), np.array([3, 4]), np.array([10, 11]))
    B = FeatureSet(np.eye(2) * 1.01, np.array([5, 6]), np.array([7, 8]), np.array([20, 21]))
    text = format_match_csv(A, B, match_sets(A, B, 0.6))
    lines = text.splitlines()
    assert lines[0] == "xa,ya,ta,xb,yb,tb,ratio"
    assert lines[1].startswith("1,3,10,5,7,20,")


@pytest.fixture(scope="module")
def slices():
    return rotated_slices()


def test_rotated_slices_are_mostly_correct(slices):
    n, frac = match_correctness(*slices, 0.6)
    assert n > 20 and frac >= 0.8


def test_rotated_kept_count_monotone(slices):
    counts = [match_correctness(*slices, r)[0] for r in (0.4, 0.5, 0.6, 0.7, 0.8, 1.0)]
    assert counts == sorted(counts)
