"""Retrieval metrics against a brute-force oracle and hand-worked cases."""

import json

import numpy as np
import pytest

from visemb.metrics import (
    RankingResult,
    average_precision,
    best_rank_from_scores,
    mean_average_precision,
    mean_rank,
    median_rank,
    rank_stats,
    ranking_report,
    recall_at_k,
    save_report,
)


# ---------------------------------------------------------------- oracle

def oracle_best_rank(scores, positive_indices):
    """Pessimistic best rank by literally sorting the candidate list.

    Sort by descending score; among equal scores put negatives first.
    Rank of the first positive in that order, 1-indexed.
    """
    order = sorted(range(len(scores)),
                   key=lambda i: (-scores[i], i in set(positive_indices)))
    for rank, i in enumerate(order, 1):
        if i in set(positive_indices):
            return rank
    raise AssertionError("no positive")


def oracle_ap(relevance):
    precisions = []
    seen = 0
    for k, rel in enumerate(relevance, 1):
        if rel:
            seen += 1
            precisions.append(seen / k)
    return sum(precisions) / len(precisions)


def oracle_recall_at_k(ranks, k):
    return 100.0 * len([r for r in ranks if r <= k]) / len(ranks)


def oracle_median(ranks):
    ordered = sorted(ranks)
    return ordered[(len(ordered) - 1) // 2]


# ------------------------------------------------------------ hand cases

def test_recall_hand_case():
    ranks = [1, 4, 12]
    assert recall_at_k(ranks, 1) == pytest.approx(100 / 3)
    assert recall_at_k(ranks, 5) == pytest.approx(200 / 3)
    assert recall_at_k(ranks, 10) == pytest.approx(200 / 3)
    assert recall_at_k(ranks, 12) == pytest.approx(100.0)


def test_recall_k_must_be_positive():
    with pytest.raises(ValueError):
        recall_at_k([1, 2], 0)


def test_median_rank_is_lower_middle():
    assert median_rank([1, 2, 3, 10]) == 2
    assert median_rank([1, 2, 5]) == 2
    assert median_rank([7]) == 7


def test_mean_rank_hand_case():
    assert mean_rank([1, 2, 5]) == pytest.approx(8 / 3)


def test_rank_stats_bundles_both():
    med, mean = rank_stats([1, 2, 5])
    assert med == 2
    assert mean == pytest.approx(8 / 3)


def test_ap_hand_cases():
    assert average_precision([1, 0, 1]) == pytest.approx(0.83333333, abs=1e-6)
    assert average_precision([0, 1]) == pytest.approx(0.5)
    assert average_precision([1, 1, 1]) == pytest.approx(1.0)
    assert average_precision([0, 0, 1]) == pytest.approx(1 / 3)


def test_ap_requires_a_relevant_item():
    with pytest.raises(ValueError):
        average_precision([0, 0, 0])


def test_map_is_unweighted_mean():
    got = mean_average_precision([[1, 0, 1], [0, 1]])
    assert got == pytest.approx((5 / 6 + 0.5) / 2)


def test_empty_query_sets_raise():
    with pytest.raises(ValueError):
        mean_rank([])
    with pytest.raises(ValueError):
        mean_average_precision([])


# --------------------------------------------------------- RankingResult

def test_ranking_result_best_rank_and_relevance():
    r = RankingResult("q", ["a", "b", "c", "d"], frozenset({"c"}))
    assert r.best_rank() == 3
    assert r.relevance() == [0, 0, 1, 0]


def test_ranking_result_rejects_unknown_positive():
    with pytest.raises(ValueError, match="positives missing"):
        RankingResult("q", ["a", "b"], frozenset({"z"}))


def test_ranking_result_requires_some_positive_for_best_rank():
    r = RankingResult("q", ["a", "b"], frozenset())
    with pytest.raises(ValueError, match="no positive"):
        r.best_rank()


def test_from_scores_orders_by_descending_score():
    r = RankingResult.from_scores("q", ["a", "b", "c"], [0.1, 0.9, 0.5], {"c"})
    assert r.candidate_ids == ["b", "c", "a"]
    assert r.best_rank() == 2


def test_from_scores_breaks_ties_against_positives():
    # positive "a" and negative "b" score the same; the negative sorts first
    r = RankingResult.from_scores("q", ["a", "b"], [0.7, 0.7], {"a"})
    assert r.candidate_ids == ["b", "a"]
    assert r.best_rank() == 2


def test_from_scores_shape_mismatch():
    with pytest.raises(ValueError):
        RankingResult.from_scores("q", ["a", "b"], [0.1], {"a"})


def test_mixed_ranks_and_results():
    r = RankingResult.from_scores("q", ["a", "b"], [0.2, 0.5], {"a"})
    assert mean_rank([1, r]) == pytest.approx(1.5)


# -------------------------------------------------- best_rank_from_scores

def test_best_rank_from_scores_matches_result_form():
    scores = [0.3, 0.9, 0.9, 0.1]
    assert best_rank_from_scores(scores, [2]) == 2  # tied with index 1? no:
    # index 1 (negative) scores equal to the positive, so it counts ahead
    assert best_rank_from_scores(scores, [1]) == 2
    assert best_rank_from_scores(scores, [0, 3]) == 3


def test_best_rank_from_scores_needs_positives():
    with pytest.raises(ValueError):
        best_rank_from_scores([0.1, 0.2], [])


def test_ties_between_positives_do_not_penalize():
    # two positives tied at the top: equal-scoring *positives* never push
    # the rank down, only equal-scoring negatives do
    assert best_rank_from_scores([0.5, 0.5], [0, 1]) == 1


@pytest.mark.parametrize("seed", range(20))
def test_best_rank_agrees_with_sorting_oracle(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 20))
    # quantized scores force plenty of ties
    scores = rng.integers(0, 4, size=n).astype(np.float64) / 3.0
    n_pos = int(rng.integers(1, n))
    positives = list(rng.choice(n, size=n_pos, replace=False))
    assert best_rank_from_scores(scores, positives) == \
        oracle_best_rank(scores, positives)


# --------------------------------------------------------- random sweeps

@pytest.mark.parametrize("seed", range(30))
def test_metrics_agree_with_oracle_on_random_matrices(seed):
    rng = np.random.default_rng(100 + seed)
    n_q = int(rng.integers(1, 8))
    n_c = int(rng.integers(2, 15))
    scores = np.round(rng.standard_normal((n_q, n_c)), 1)  # ties likely
    results, oracle_ranks, oracle_aps = [], [], []
    for q in range(n_q):
        pos = list(rng.choice(n_c, size=int(rng.integers(1, n_c)), replace=False))
        ids = [f"c{j}" for j in range(n_c)]
        res = RankingResult.from_scores(f"q{q}", ids, scores[q], {f"c{j}" for j in pos})
        results.append(res)
        oracle_ranks.append(oracle_best_rank(scores[q], pos))
        oracle_aps.append(oracle_ap(res.relevance()))
    for k in (1, 3, 10):
        assert recall_at_k(results, k) == pytest.approx(oracle_recall_at_k(oracle_ranks, k))
    assert median_rank(results) == oracle_median(oracle_ranks)
    assert mean_rank(results) == pytest.approx(float(np.mean(oracle_ranks)))
    assert mean_average_precision(results) == pytest.approx(float(np.mean(oracle_aps)))


def test_rank_invariant_under_monotone_score_transforms():
    rng = np.random.default_rng(5)
    scores = rng.standard_normal(12)
    positives = [3, 7]
    base = best_rank_from_scores(scores, positives)
    assert best_rank_from_scores(3.0 * scores + 2.0, positives) == base
    assert best_rank_from_scores(np.tanh(scores), positives) == base


# --------------------------------------------------------------- reports

def test_ranking_report_structure_and_values():
    report = ranking_report([1, 2, 5, 11])
    assert report["r_at"]["1"] == pytest.approx(25.0)
    assert report["r_at"]["5"] == pytest.approx(75.0)
    assert report["r_at"]["10"] == pytest.approx(75.0)
    assert report["med_r"] == 2.0
    assert report["mean_r"] == pytest.approx(19 / 4)
    assert report["n_queries"] == 4


def test_save_report_round_trip_and_stable_keys(tmp_path):
    report = ranking_report([2, 1])
    path = tmp_path / "report.json"
    save_report(path, report)
    text = path.read_text(encoding="utf-8")
    assert json.loads(text) == report
    # keys are emitted sorted so diffs between runs stay readable
    assert text.index('"mean_r"') < text.index('"med_r"') < text.index('"n_queries"')
