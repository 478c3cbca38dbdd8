"""Retrieval metrics: recall at K, rank statistics, AP and MAP.

Tie policy is pessimistic throughout: when a relevant candidate and a
distractor score the same, the distractor is placed first, so reported
numbers never flatter the model. Recall values are percentages (0..100),
ranks are 1-indexed.

Functions accept either RankingResult objects or plain 1-indexed best
ranks where only ranks matter.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


@dataclass
class RankingResult:
    """One query's ranking: candidates ordered by descending score."""

    query_id: str
    candidate_ids: list
    positive_ids: frozenset
    tie_policy: str = field(default="pessimistic")

    def __post_init__(self):
        self.positive_ids = frozenset(self.positive_ids)
        if not self.positive_ids <= set(self.candidate_ids):
            missing = self.positive_ids - set(self.candidate_ids)
            raise ValueError(f"query {self.query_id}: positives missing from "
                             f"candidates: {sorted(missing)[:5]}")

    @classmethod
    def from_scores(cls, query_id, candidate_ids, scores, positive_ids):
        """Order candidates by score, equal-scoring positives last."""
        candidate_ids = list(candidate_ids)
        scores = np.asarray(scores, dtype=np.float64)
        if scores.shape != (len(candidate_ids),):
            raise ValueError("from_scores: one score per candidate required")
        positive_ids = frozenset(positive_ids)
        order = sorted(range(len(candidate_ids)),
                       key=lambda i: (-scores[i], candidate_ids[i] in positive_ids))
        return cls(query_id=query_id,
                   candidate_ids=[candidate_ids[i] for i in order],
                   positive_ids=positive_ids)

    def best_rank(self):
        """1-indexed rank of the highest-ranked positive."""
        for pos, cid in enumerate(self.candidate_ids, 1):
            if cid in self.positive_ids:
                return pos
        raise ValueError(f"query {self.query_id}: no positive in ranking")

    def relevance(self):
        return [1 if cid in self.positive_ids else 0 for cid in self.candidate_ids]


def best_rank_from_scores(scores, positive_indices):
    """Pessimistic best rank straight from a score vector.

    rank of a positive = 1 + (# strictly higher) + (# equal-scoring
    negatives); returns the minimum over the positives. Index-based twin
    of RankingResult.best_rank for hot paths that skip id bookkeeping.
    """
    scores = np.asarray(scores, dtype=np.float64)
    positive_indices = list(positive_indices)
    if not positive_indices:
        raise ValueError("best_rank_from_scores: no positives")
    pos_mask = np.zeros(scores.size, dtype=bool)
    pos_mask[positive_indices] = True
    best = None
    for j in positive_indices:
        s = scores[j]
        rank = 1 + int(np.sum(scores > s)) + int(np.sum((scores == s) & ~pos_mask))
        if best is None or rank < best:
            best = rank
    return best


def _best_ranks(results):
    ranks = [r if isinstance(r, (int, np.integer)) else r.best_rank()
             for r in results]
    if not ranks:
        raise ValueError("no queries")
    return ranks


def recall_at_k(results, k):
    """Percentage of queries whose top-k contains at least one positive.

    >>> round(recall_at_k([1, 4, 12], 1), 1)
    33.3
    >>> round(recall_at_k([1, 4, 12], 10), 1)
    66.7
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    ranks = _best_ranks(results)
    return 100.0 * sum(1 for r in ranks if r <= k) / len(ranks)


def median_rank(results):
    """Lower-middle element of the sorted best ranks (no interpolation).

    >>> median_rank([1, 2, 3, 10])
    2
    """
    ranks = sorted(_best_ranks(results))
    return ranks[(len(ranks) - 1) // 2]


def mean_rank(results):
    return float(np.mean(_best_ranks(results)))


def rank_stats(results):
    """(median rank, mean rank) of the best positive per query."""
    return median_rank(results), mean_rank(results)


def average_precision(result):
    """AP over a full ranked list.

    Accepts a RankingResult or a sequence of 0/1 relevance flags.

    >>> round(average_precision([1, 0, 1]), 4)
    0.8333
    >>> average_precision([0, 1])
    0.5
    """
    relevance = result.relevance() if isinstance(result, RankingResult) else list(result)
    relevance = [int(bool(r)) for r in relevance]
    n_pos = sum(relevance)
    if n_pos == 0:
        raise ValueError("average_precision: no relevant items")
    hits = 0
    total = 0.0
    for k, rel in enumerate(relevance, 1):
        if rel:
            hits += 1
            total += hits / k
    return total / n_pos


def mean_average_precision(results):
    """Unweighted mean AP; candidate sets may differ across queries."""
    values = [average_precision(r) for r in results]
    if not values:
        raise ValueError("no queries")
    return float(np.mean(values))


def ranking_report(results):
    """The standard report block: R@{1,5,10}, median and mean rank."""
    ranks = _best_ranks(results)
    return {
        "r_at": {"1": recall_at_k(ranks, 1),
                 "5": recall_at_k(ranks, 5),
                 "10": recall_at_k(ranks, 10)},
        "med_r": float(median_rank(ranks)),
        "mean_r": mean_rank(ranks),
        "n_queries": len(ranks),
    }


def save_report(path, report):
    """Write a metrics report as stable, sorted JSON."""
    Path(path).write_text(json.dumps(report, indent=1, sort_keys=True) + "\n",
                          encoding="utf-8")
