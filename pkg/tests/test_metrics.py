"""Metric oracles, computed by hand from the definitions."""

import math

from padrec.metrics import ndcg_at_10, recall_at_10

REL = [f"item{i}" for i in range(10)]


def test_perfect_list_scores_one():
    assert recall_at_10(REL, REL) == 1.0
    assert abs(ndcg_at_10(REL, REL) - 1.0) < 1e-12


def test_single_hit_at_rank_one():
    recs = [REL[0]] + [f"junk{i}" for i in range(9)]
    assert recall_at_10(recs, REL) == 0.1
    # 1/log2(2) over sum_{i=1..10} 1/log2(i+1)
    assert abs(ndcg_at_10(recs, REL) - 0.2201) < 1e-4


def test_idcg_value():
    idcg = sum(1.0 / math.log2(i + 2) for i in range(10))
    assert abs(idcg - 4.5436) < 1e-4
    recs = REL[:1] + [f"junk{i}" for i in range(9)]
    assert abs(ndcg_at_10(recs, REL) - 1.0 / idcg) < 1e-12


def test_hit_at_last_slot():
    recs = [f"junk{i}" for i in range(9)] + [REL[3]]
    want = (1.0 / math.log2(11)) / sum(1.0 / math.log2(i + 2) for i in range(10))
    assert abs(ndcg_at_10(recs, REL) - want) < 1e-12
    assert recall_at_10(recs, REL) == 0.1


def test_duplicates_count_once():
    recs = [REL[0]] * 10
    assert recall_at_10(recs, REL) == 0.1
    one_hit = 1.0 / sum(1.0 / math.log2(i + 2) for i in range(10))
    assert abs(ndcg_at_10(recs, REL) - one_hit) < 1e-12


def test_items_past_cutoff_ignored():
    recs = [f"junk{i}" for i in range(10)] + REL
    assert recall_at_10(recs, REL) == 0.0
    assert ndcg_at_10(recs, REL) == 0.0


def test_short_and_empty_lists():
    assert recall_at_10([REL[0], REL[1]], REL) == 0.2
    assert ndcg_at_10([], REL) == 0.0
    assert recall_at_10([], REL) == 0.0
    assert ndcg_at_10(REL, []) == 0.0


def test_fewer_relevant_than_cutoff():
    rel = REL[:3]
    recs = rel + [f"junk{i}" for i in range(7)]
    assert abs(ndcg_at_10(recs, rel) - 1.0) < 1e-12
    assert recall_at_10(recs, rel) == 1.0
