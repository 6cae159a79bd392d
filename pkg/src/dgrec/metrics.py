"""Top-K ranking metrics with binary relevance."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def rank_items(scores, exclude=()) -> list[int]:
    """Item ids sorted by descending score, ties broken by ascending id.

    ``scores`` is indexed by item id (array or mapping item -> score).
    """
    if isinstance(scores, dict):
        ids = np.array(sorted(scores), dtype=np.int64)
        vals = np.array([scores[i] for i in ids], dtype=np.float64)
    else:
        vals = np.asarray(scores, dtype=np.float64)
        ids = np.arange(len(vals))
    keep = ~np.isin(ids, np.fromiter(exclude, dtype=np.int64))
    ids, vals = ids[keep], vals[keep]
    order = np.lexsort((ids, -vals))
    return ids[order].tolist()


def recall_at_k(ranking, test, k: int) -> float | None:
    """|top-k ∩ test| / |test|; ``None`` when the test set is empty."""
    if k < 1:
        raise ValueError("k must be >= 1")
    test = set(test)
    if not test:
        return None
    return len(test.intersection(ranking[:k])) / len(test)


def ndcg_at_k(ranking, test, k: int) -> float | None:
    if k < 1:
        raise ValueError("k must be >= 1")
    test = set(test)
    if not test:
        return None
    dcg = sum(1.0 / np.log2(r + 2) for r, i in enumerate(ranking[:k]) if i in test)
    idcg = sum(1.0 / np.log2(r + 2) for r in range(min(len(test), k)))
    return dcg / idcg


@dataclass
class RankingResult:
    k: int
    rankings: dict = field(default_factory=dict)
    recall: dict = field(default_factory=dict)
    ndcg: dict = field(default_factory=dict)

    @property
    def mean_recall(self) -> float:
        return float(np.mean(list(self.recall.values()))) if self.recall else 0.0

    @property
    def mean_ndcg(self) -> float:
        return float(np.mean(list(self.ndcg.values()))) if self.ndcg else 0.0


def evaluate(score_fn, users, exclusions, tests, k: int = 20) -> RankingResult:
    """Rank all non-excluded items per user and average recall/ndcg.

    ``score_fn(user)`` returns a score per item id. Users with an empty test
    set are skipped.
    """
    res = RankingResult(k)
    for u in users:
        ranking = rank_items(score_fn(u), exclusions.get(u, ()))
        res.rankings[u] = ranking
        r = recall_at_k(ranking, tests.get(u, ()), k)
        if r is None:
            continue
        res.recall[u] = r
        res.ndcg[u] = ndcg_at_k(ranking, tests[u], k)
    return res


def random_scorer(n_items: int, rng: np.random.Generator):
    """Random-recommender baseline: fresh uniform scores per call."""
    return lambda _user: rng.random(n_items)
