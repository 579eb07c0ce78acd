import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import brute_force

from masktrack.assign import associate, hungarian, iou_matrix


def test_examples():
    a = hungarian(1 - np.eye(3))
    assert sorted(a.pairs) == [(0, 0), (1, 1), (2, 2)]
    a = hungarian(np.array([[1.0, 2.0], [2.0, 4.0]]))
    assert sorted(a.pairs) == [(0, 1), (1, 0)] and a.total == 4
    a = hungarian(np.array([[5.0, 3.0]]))
    assert a.pairs == [(0, 1)] and a.unmatched_cols == [0] and a.unmatched_rows == []


def test_empty_and_errors():
    assert hungarian(np.zeros((0, 3))).pairs == []
    assert hungarian(np.zeros((0, 3))).unmatched_cols == [0, 1, 2]
    with pytest.raises(ValueError):
        hungarian(np.array([[1.0, np.nan]]))
    with pytest.raises(ValueError):
        hungarian(np.array([[np.inf]]))


@pytest.mark.parametrize("seed", range(300))
def test_brute_force_random(seed):
    rng = np.random.default_rng(seed)
    r, c = rng.integers(1, 7, size=2)
    cost = rng.normal(size=(r, c))
    a = hungarian(cost)
    best, pairs = brute_force(cost)
    assert a.total == best
    assert sorted(a.pairs) == pairs


@pytest.mark.parametrize("seed", range(300))
def test_brute_force_ties(seed):
    rng = np.random.default_rng(10_000 + seed)
    r, c = rng.integers(1, 7, size=2)
    cost = rng.integers(0, 3, size=(r, c)).astype(float)
    a = hungarian(cost)
    best, pairs = brute_force(cost)
    assert a.total == best
    assert sorted(a.pairs) == pairs  # lexicographic tie-break


def test_maximize():
    m = np.array([[0.1, 0.9], [0.8, 0.2]])
    a = hungarian(m, maximize=True)
    assert sorted(a.pairs) == [(0, 1), (1, 0)]
    assert a.total == pytest.approx(1.7)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_row_permutation_equivariance(r, c, seed):
    rng = np.random.default_rng(seed)
    cost = rng.normal(size=(r, c))  # continuous: the optimum is unique
    perm = rng.permutation(r)
    a = hungarian(cost)
    b = hungarian(cost[perm])
    mapped = sorted((int(perm[i]), j) for i, j in b.pairs)
    assert mapped == sorted(a.pairs)


def test_cardinality():
    rng = np.random.default_rng(3)
    for r, c in [(3, 7), (7, 3), (5, 5)]:
        a = hungarian(rng.random((r, c)))
        assert len(a.pairs) == min(r, c)
        assert len({i for i, _ in a.pairs}) == len(a.pairs) == len({j for _, j in a.pairs})
        assert len(a.unmatched_rows) == r - len(a.pairs)
        assert len(a.unmatched_cols) == c - len(a.pairs)


def _box(h, w, y0, y1, x0, x1):
    m = np.zeros((h, w), bool)
    m[y0:y1, x0:x1] = True
    return m


def test_associate_examples():
    h = w = 20
    prop1 = _box(h, w, 0, 10, 0, 10)
    seg0 = _box(h, w, 0, 10, 0, 8)  # IoU 0.8 with prop1
    prop0 = _box(h, w, 12, 20, 10, 20)  # 80 px
    seg1 = _box(h, w, 12, 20, 10, 16)  # 48 px inside prop0: IoU 0.6
    res = associate([seg0, seg1], [prop0, prop1])
    assert [(i, j) for i, j, _ in res.matches] == [(0, 1), (1, 0)]
    assert [v for _, _, v in res.matches] == pytest.approx([0.8, 0.6])

    res = associate([seg0], [])
    assert res.matches == [] and res.unmatched_seg == [0]

    tiny = _box(h, w, 0, 1, 0, 5)  # 5 px of 100: IoU 0.05
    big = _box(h, w, 0, 10, 0, 10)
    res = associate([tiny], [big])
    assert res.matches == [] and res.unmatched_seg == [0] and res.unmatched_prop == [0]


def test_associate_strict_floor():
    a = _box(10, 10, 0, 10, 0, 10)
    b = _box(10, 10, 0, 10, 0, 1)  # IoU exactly 0.1
    assert associate([b], [a]).matches == []
    assert associate([b], [a], iou_floor=0.09).matches[0][2] == 0.1


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.0, 0.9))
def test_associate_never_returns_low_iou(seed, floor):
    rng = np.random.default_rng(seed)
    seg = [rng.random((8, 8)) > 0.6 for _ in range(rng.integers(0, 4))]
    prop = [rng.random((8, 8)) > 0.6 for _ in range(rng.integers(0, 4))]
    res = associate(seg, prop, floor)
    assert all(v > floor for _, _, v in res.matches)
    assert sorted([i for i, _, _ in res.matches] + res.unmatched_seg) == list(range(len(seg)))
    assert sorted([j for _, j, _ in res.matches] + res.unmatched_prop) == list(range(len(prop)))
    if seg and prop:
        np.testing.assert_allclose(iou_matrix(seg, prop)[[i for i, _, _ in res.matches],
                                                          [j for _, j, _ in res.matches]],
                                   [v for _, _, v in res.matches])
