"""List metrics over recommended items: recall and binary-relevance NDCG,
both cut off at the first ten slots. Items can be any hashable ids; the
pipeline uses code tuples."""

import math

CUTOFF = 10


def _idcg(n_relevant: int) -> float:
    return sum(1.0 / math.log2(i + 2) for i in range(min(n_relevant, CUTOFF)))


def recall_at_10(recommended, relevant) -> float:
    """|top-10 distinct hits| / |relevant|; 0 when nothing is relevant."""
    rel = set(relevant)
    if not rel:
        return 0.0
    return len(set(recommended[:CUTOFF]) & rel) / len(rel)


def ndcg_at_10(recommended, relevant) -> float:
    """Binary gains at first occurrences, discounted by log2(rank+1)."""
    rel = set(relevant)
    if not rel:
        return 0.0
    dcg = 0.0
    seen = set()
    for i, item in enumerate(recommended[:CUTOFF]):
        if item in rel and item not in seen:
            dcg += 1.0 / math.log2(i + 2)
        seen.add(item)
    return dcg / _idcg(len(rel))
