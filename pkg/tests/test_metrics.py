import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dgrec.metrics import evaluate, ndcg_at_k, random_scorer, rank_items, recall_at_k


class TestRank:
    def test_constant_scores_sorted_ids(self):
        assert rank_items(np.zeros(5)) == [0, 1, 2, 3, 4]

    def test_exclusions(self):
        assert rank_items([0.1, 0.9, 0.5, 0.7], exclude={1, 3}) == [2, 0]

    def test_toy_order(self):
        assert rank_items([0.2, 0.9, 0.2]) == [1, 0, 2]

    def test_mapping_input(self):
        assert rank_items({7: 1.0, 3: 2.0, 5: 1.0}) == [3, 5, 7]


class TestRecall:
    def test_examples(self):
        assert recall_at_k([1, 2, 3, 4], {2, 9}, 2) == 0.5
        assert recall_at_k([5, 6, 7], {5, 6}, 2) == 1.0
        assert recall_at_k([1, 2, 3], {3}, 2) == 0.0

    def test_empty_test(self):
        assert recall_at_k([1, 2], set(), 5) is None

    def test_bad_k(self):
        with pytest.raises(ValueError):
            recall_at_k([1], {1}, 0)


class TestNdcg:
    def test_examples(self):
        assert ndcg_at_k([4, 1, 2], {4}, 3) == 1.0
        assert ndcg_at_k([1, 2, 4], {4}, 3) == pytest.approx(1 / math.log2(4))
        assert ndcg_at_k([1, 2, 4], {4}, 2) == 0.0
        assert ndcg_at_k([], {1}, 5) == 0.0

    def test_two_items_hand_computed(self):
        # hits at ranks 1 and 3: (1 + 1/2) / (1 + 1/log2 3)
        assert ndcg_at_k([0, 1, 2], {0, 2}, 3) == pytest.approx(1.5 / (1 + 1 / math.log2(3)))


@given(st.permutations(list(range(12))), st.sets(st.integers(0, 11), min_size=1, max_size=5), st.integers(1, 12))
def test_moving_a_test_item_up_never_hurts(perm, test, k):
    ranking = list(perm)
    base_r, base_n = recall_at_k(ranking, test, k), ndcg_at_k(ranking, test, k)
    assert 0 <= base_r <= 1 and 0 <= base_n <= 1 + 1e-12
    for pos in range(1, len(ranking)):
        if ranking[pos] in test and ranking[pos - 1] not in test:
            moved = ranking.copy()
            moved[pos - 1], moved[pos] = moved[pos], moved[pos - 1]
            assert recall_at_k(moved, test, k) >= base_r
            assert ndcg_at_k(moved, test, k) >= base_n - 1e-12


@given(st.permutations(list(range(10))), st.sets(st.integers(0, 9), min_size=1, max_size=6))
def test_perfect_ndcg_iff_tests_on_top(perm, test):
    ranking = list(perm)
    on_top = set(ranking[: len(test)]) == test
    assert (ndcg_at_k(ranking, test, 10) == pytest.approx(1.0)) == on_top


def test_evaluate_skips_empty_and_excludes_train():
    scores = {0: np.array([0.9, 0.8, 0.1, 0.0]), 1: np.array([0.0, 0.0, 0.0, 1.0])}
    res = evaluate(lambda u: scores[u], [0, 1], {0: {0}, 1: set()}, {0: [2], 1: []}, k=2)
    assert res.rankings[0] == [1, 2, 3]
    assert list(res.recall) == [0]
    assert res.mean_recall == 1.0
    assert res.mean_ndcg == pytest.approx(1 / math.log2(3))


def test_random_scorer_recall_matches_chance(rng):
    n, k = 50, 10
    res = evaluate(random_scorer(n, rng), range(400), {}, {u: [u % n] for u in range(400)}, k)
    assert res.mean_recall == pytest.approx(k / n, abs=0.06)
