import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dwellrec.metrics import (
    RankedImpression,
    auc,
    evaluate_impressions,
    impression_metrics,
    mean_std,
    mrr,
    ndcg_at_k,
    ranks,
)


# Brute-force references written independently of the library: explicit pair
# loops and explicit sorting with an index tie-break.
def brute_auc(scores, labels):
    good = total = 0.0
    for i, j in itertools.product(range(len(scores)), repeat=2):
        if labels[i] == 1 and labels[j] == 0:
            total += 1
            if scores[i] > scores[j]:
                good += 1
            elif scores[i] == scores[j]:
                good += 0.5
    return good / total


def brute_order(scores):
    return sorted(range(len(scores)), key=lambda i: (-scores[i], i))


def brute_mrr(scores, labels):
    order = brute_order(scores)
    rr = [1.0 / (pos + 1) for pos, i in enumerate(order) if labels[i] == 1]
    return sum(rr) / len(rr)


def brute_ndcg(scores, labels, k):
    order = brute_order(scores)
    dcg = sum(labels[i] / math.log2(pos + 2) for pos, i in enumerate(order[:k]))
    ideal = sorted(labels, reverse=True)
    idcg = sum(ideal[p] / math.log2(p + 2) for p in range(min(k, len(ideal))))
    return dcg / idcg


def random_impressions(n, seed):
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < n:
        size = int(rng.integers(2, 21))
        labels = (rng.random(size) < rng.uniform(0.1, 0.6)).astype(int)
        if labels.sum() in (0, size):
            continue
        # coarse scores so ties are common
        scores = rng.integers(0, 6, size=size).astype(float) if rng.random() < 0.5 else rng.normal(size=size)
        out.append((scores, labels))
    return out


def test_metrics_match_brute_force_on_1000_impressions():
    for scores, labels in random_impressions(1000, seed=0):
        assert auc(scores, labels) == brute_auc(list(scores), list(labels))
        assert mrr(scores, labels) == pytest.approx(brute_mrr(list(scores), list(labels)), abs=1e-15)
        for k in (5, 10):
            assert ndcg_at_k(scores, labels, k) == pytest.approx(brute_ndcg(list(scores), list(labels), k), abs=1e-15)


def test_auc_examples():
    assert auc([0.9, 0.1, 0.2, 0.3, 0.4], [1, 0, 0, 0, 0]) == 1.0
    assert auc([0.5] * 5, [1, 0, 0, 0, 0]) == 0.5
    assert auc([0.9, 0.8, 0.3, 0.1], [1, 0, 1, 0]) == 0.75


def test_mrr_examples():
    assert mrr([0.9, 0.1, 0.2], [1, 0, 0]) == 1.0
    assert mrr([0.1, 0.9, 0.5], [1, 0, 0]) == pytest.approx(1 / 3)
    # clicks ranked 1st and 4th
    assert mrr([0.9, 0.5, 0.7, 0.4, 0.1], [1, 0, 0, 1, 0]) == pytest.approx(0.625)


def test_ndcg_examples():
    assert ndcg_at_k([0.9, 0.1, 0.2], [1, 0, 0], 5) == 1.0
    scores = [0.1, 0.9, 0.8, 0.7, 0.6, 0.5]
    assert ndcg_at_k(scores, [1, 0, 0, 0, 0, 0], 5) == 0.0
    got = ndcg_at_k([0.9, 0.8, 0.7, 0.1], [0, 1, 1, 0], 5)
    want = (1 / math.log2(3) + 1 / math.log2(4)) / (1 + 1 / math.log2(3))
    assert got == pytest.approx(want)
    assert round(got, 4) == 0.6934


def test_tie_break_uses_input_order():
    np.testing.assert_array_equal(ranks([1.0, 2.0, 1.0, 2.0]), [3, 1, 4, 2])


def test_invalid_impressions_raise_and_are_excluded():
    with pytest.raises(ValueError):
        auc([0.1, 0.2], [0, 0])
    with pytest.raises(ValueError):
        mrr([0.1, 0.2], [1, 1])
    out = evaluate_impressions(
        [
            RankedImpression(np.array([0.9, 0.1]), np.array([1, 0])),
            RankedImpression(np.array([0.9, 0.1]), np.array([0, 0])),
            RankedImpression(np.array([0.9, 0.1]), np.array([1, 1])),
        ]
    )
    assert out["impressions"] == 1 and out["excluded"] == 2
    assert out["auc"] == 1.0


def test_mean_std():
    assert mean_std([1.0]) == (1.0, None)
    m, s = mean_std([1.0, 2.0, 3.0])
    assert m == 2.0 and s == pytest.approx(1.0)


impressions = st.integers(2, 20).flatmap(
    lambda n: st.tuples(
        st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=n, max_size=n),
        st.lists(st.integers(0, 1), min_size=n, max_size=n).filter(lambda l: 0 < sum(l) < len(l)),
    )
)


@settings(max_examples=200, deadline=None)
@given(impressions)
def test_metrics_lie_in_unit_interval(imp):
    scores, labels = imp
    m = impression_metrics(scores, labels)
    for v in m.values():
        assert 0.0 <= v <= 1.0
    assert m["mrr"] > 0


@settings(max_examples=200, deadline=None)
@given(impressions)
def test_metrics_invariant_under_increasing_transform(imp):
    scores, labels = imp
    s = np.asarray(scores)
    transformed = np.tanh(s / 500.0) * 3.0 + 7.0
    # a transform that collapses distinct floats would create new ties; skip those draws
    if len(np.unique(transformed)) != len(np.unique(s)):
        return
    assert impression_metrics(s, labels) == impression_metrics(transformed, labels)
