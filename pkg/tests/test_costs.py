import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bovwrecon.costs import (
    AdjacencyCost,
    OffsetSet,
    PositionCost,
    adjacency_bytes,
    adjacency_counts,
    learn_adjacency_cost,
    learn_position_cost,
    position_bytes,
    read_adjacency,
    read_position,
    write_adjacency,
    write_position,
)
from bovwrecon.errors import InvalidInputError
from bovwrecon.pipeline import WordGrid

LR = OffsetSet(((1, 0), (-1, 0)))


def _corpus(rng, n, shape, K):
    return [WordGrid(rng.integers(0, K, size=shape)) for _ in range(n)]


def _loop_counts(corpus, K, offsets):
    counts = np.zeros((K, K, offsets.m), dtype=np.int64)
    for g in corpus:
        h, w = g.shape
        for r in range(h):
            for c in range(w):
                for d, (dx, dy) in enumerate(offsets.offsets):
                    r2, c2 = r + dy, c + dx
                    if 0 <= r2 < h and 0 <= c2 < w:
                        counts[g.labels[r, c], g.labels[r2, c2], d] += 1
    return counts


def test_offset_set_shapes():
    o = OffsetSet.from_m(48)
    assert o.m == 48 and (0, 0) not in o.offsets and len(set(o.offsets)) == 48
    assert max(abs(v) for off in o.offsets for v in off) == 3
    assert OffsetSet.from_m(8).offsets[:3] == ((-1, -1), (0, -1), (1, -1))
    for bad in (7, 0, 47):
        with pytest.raises(InvalidInputError):
            OffsetSet.from_m(bad)
    with pytest.raises(InvalidInputError):
        OffsetSet(((0, 0),))
    with pytest.raises(InvalidInputError):
        OffsetSet(((1, 0), (1, 0)))


def test_empty_corpus_is_pure_smoothing():
    ca = learn_adjacency_cost([], 4, OffsetSet.from_m(8))
    np.testing.assert_allclose(ca.table, math.log(4))
    assert abs(ca.table[0, 0, 0] - 1.3863) < 1e-4
    cp = learn_position_cost([], 4, n_places=169)
    np.testing.assert_allclose(cp.table, math.log(169))
    with pytest.raises(InvalidInputError):
        learn_position_cost([], 4)


def test_hand_traced_adjacency_1x2():
    ca = learn_adjacency_cost([WordGrid(np.array([[0, 1]]))], 2, LR)
    right = LR.index()[(1, 0)]
    np.testing.assert_allclose(ca.table[0, :, right], [1.0986, 0.4055], atol=1e-4)
    np.testing.assert_allclose(ca.table[0, :, right], [math.log(3), math.log(1.5)], atol=1e-12)
    # word 1 is never the left member of a rightward pair
    np.testing.assert_allclose(ca.table[1, :, right], math.log(2), atol=1e-12)


def test_hand_traced_position_1x2():
    cp = learn_position_cost([WordGrid(np.array([[0, 1]]))], 2)
    np.testing.assert_allclose(cp.table[0], [0.4055, 1.0986], atol=1e-4)
    np.testing.assert_allclose(cp.table[1], [1.0986, 0.4055], atol=1e-4)


def test_uniform_word_gives_constant_position_row():
    corpus = [WordGrid(np.array([[0, 1, 1]])), WordGrid(np.array([[1, 0, 1]])), WordGrid(np.array([[1, 1, 0]]))]
    cp = learn_position_cost(corpus, 2)
    np.testing.assert_allclose(cp.table[0], math.log(3), atol=1e-12)


def test_doubling_corpus_matches_count_oracle():
    corpus = [WordGrid(np.array([[0, 1, 1], [1, 0, 0]]))]
    single = adjacency_counts(corpus, 2, LR)
    doubled = learn_adjacency_cost(corpus * 2, 2, LR)
    smoothed = 2 * single + 1.0
    expect = -np.log(smoothed / smoothed.sum(axis=1, keepdims=True))
    np.testing.assert_allclose(doubled.table, expect, atol=1e-12)
    # with many copies the table approaches the unsmoothed empirical distribution
    many = learn_adjacency_cost(corpus * 5000, 2, LR)
    emp = single / single.sum(axis=1, keepdims=True)
    np.testing.assert_allclose(np.exp(-many.table), emp, atol=1e-3)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 4), st.integers(1, 5), st.integers(1, 5), st.integers(1, 4), st.integers(0, 2**32 - 1))
def test_counts_match_loop_oracle(n, h, w, K, seed):
    rng = np.random.default_rng(seed)
    corpus = _corpus(rng, n, (h, w), K)
    offsets = OffsetSet.from_m(8)
    assert np.array_equal(adjacency_counts(corpus, K, offsets), _loop_counts(corpus, K, offsets))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 4), st.integers(1, 5), st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_tables_are_row_stochastic_and_order_free(n, side, K, seed):
    rng = np.random.default_rng(seed)
    corpus = _corpus(rng, n, (side, side), K)
    offs = OffsetSet.from_m(8)
    ca = learn_adjacency_cost(corpus, K, offs)
    cp = learn_position_cost(corpus, K, side * side)
    np.testing.assert_allclose(np.exp(-ca.table).sum(axis=1), 1.0, atol=1e-6)
    np.testing.assert_allclose(np.exp(-cp.table).sum(axis=1), 1.0, atol=1e-6)
    assert ca.table.min() >= 0 and cp.table.min() >= 0
    order = rng.permutation(n)
    shuffled = [corpus[i] for i in order]
    assert adjacency_bytes(learn_adjacency_cost(shuffled, K, offs)) == adjacency_bytes(ca)
    assert ca.table.tobytes() == learn_adjacency_cost(shuffled, K, offs).table.tobytes()
    assert cp.table.tobytes() == learn_position_cost(shuffled, K, side * side).table.tobytes()


def test_monotonicity_in_one_count():
    base = [WordGrid(np.array([[0, 1, 2]]))]
    a = learn_adjacency_cost(base, 3, LR)
    # in the (i=0, rightward) row this adds exactly one count, at j=2
    b = learn_adjacency_cost(base + [WordGrid(np.array([[0, 2, 0]]))], 3, LR)
    right = LR.index()[(1, 0)]
    assert b.table[0, 2, right] < a.table[0, 2, right]
    assert b.table[0, 0, right] > a.table[0, 0, right]
    assert b.table[0, 1, right] > a.table[0, 1, right]


def test_corpus_validation():
    with pytest.raises(InvalidInputError):
        learn_adjacency_cost([WordGrid(np.zeros((2, 2), int)), WordGrid(np.zeros((2, 3), int))], 2, LR)
    with pytest.raises(InvalidInputError):
        learn_position_cost([WordGrid(np.array([[0, 5]]))], 2)
    with pytest.raises(InvalidInputError):
        learn_position_cost([WordGrid(np.array([[0, 1]]))], 2, n_places=3)


def test_cost_files_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    offs = OffsetSet.from_m(8)
    ca = AdjacencyCost(rng.uniform(size=(3, 3, 8)), offs)
    cp = PositionCost(rng.uniform(size=(3, 10)))
    write_adjacency(tmp_path / "a.bvwa", ca)
    write_position(tmp_path / "p.bvwp", cp)
    ca2 = read_adjacency(tmp_path / "a.bvwa")
    cp2 = read_position(tmp_path / "p.bvwp")
    assert ca2.offsets == offs
    assert np.array_equal(ca2.table, ca.table.astype(np.float32))
    assert np.array_equal(cp2.table, cp.table.astype(np.float32))
    data = adjacency_bytes(ca)
    assert data[:4] == b"BVWA" and len(data) == 12 + 16 + 4 * 72
    assert position_bytes(cp)[:4] == b"BVWP"
    (tmp_path / "x").write_bytes(data[:-2])
    with pytest.raises(InvalidInputError):
        read_adjacency(tmp_path / "x")
    with pytest.raises(InvalidInputError):
        read_position(tmp_path / "a.bvwa")
