"""Per-impression ranking metrics and their macro averages.

Conventions: AUC counts score ties as half a correct pair; rankings sort by
descending score with ties broken by input order; MRR averages the reciprocal
ranks of all clicked items in an impression.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np


@dataclass
class RankedImpression:
    scores: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=float)
        self.labels = np.asarray(self.labels, dtype=int)
        if self.scores.shape != self.labels.shape or self.scores.ndim != 1:
            raise ValueError("scores and labels must be 1-d and of equal length")

    @property
    def valid(self) -> bool:
        n_pos = int(self.labels.sum())
        return 0 < n_pos < len(self.labels)


def _check(labels: np.ndarray) -> None:
    n_pos = int(labels.sum())
    if n_pos == 0 or n_pos == len(labels):
        raise ValueError("impression needs at least one clicked and one non-clicked item")


def auc(scores, labels) -> float:
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels).astype(bool)
    _check(labels)
    pos = scores[labels][:, None]
    neg = scores[~labels][None, :]
    return float(((pos > neg).sum() + 0.5 * (pos == neg).sum()) / (pos.size * neg.size))


def ranks(scores) -> np.ndarray:
    """1-based rank of each item under descending score, ties by input order."""
    order = np.argsort(-np.asarray(scores, dtype=float), kind="stable")
    r = np.empty(len(order), dtype=int)
    r[order] = np.arange(1, len(order) + 1)
    return r


def mrr(scores, labels) -> float:
    labels = np.asarray(labels).astype(bool)
    _check(labels)
    return float(np.mean(1.0 / ranks(scores)[labels]))


def ndcg_at_k(scores, labels, k: int) -> float:
    labels = np.asarray(labels).astype(bool)
    _check(labels)
    r = ranks(scores)[labels]
    dcg = np.sum(1.0 / np.log2(r[r <= k] + 1))
    ideal = np.sum(1.0 / np.log2(np.arange(1, min(k, labels.sum()) + 1) + 1))
    return float(dcg / ideal)


METRIC_NAMES = ("auc", "mrr", "ndcg5", "ndcg10")


def impression_metrics(scores, labels) -> dict[str, float]:
    return {
        "auc": auc(scores, labels),
        "mrr": mrr(scores, labels),
        "ndcg5": ndcg_at_k(scores, labels, 5),
        "ndcg10": ndcg_at_k(scores, labels, 10),
    }


def evaluate_impressions(impressions: Iterable[RankedImpression]) -> dict[str, float]:
    """Macro-average over valid impressions; invalid ones are counted in ``excluded``."""
    rows, excluded = [], 0
    for imp in impressions:
        if not imp.valid:
            excluded += 1
            continue
        rows.append(impression_metrics(imp.scores, imp.labels))
    out = {name: float(np.mean([r[name] for r in rows])) if rows else float("nan") for name in METRIC_NAMES}
    out["impressions"] = len(rows)
    out["excluded"] = excluded
    return out


def mean_std(values: Sequence[float]) -> tuple[float, float | None]:
    """Mean and sample standard deviation (None for a single value)."""
    arr = np.asarray(values, dtype=float)
    return float(arr.mean()), (float(arr.std(ddof=1)) if len(arr) >= 2 else None)
