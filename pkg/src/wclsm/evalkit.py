"""Ranking and classification metrics.

DCG uses linear gain (the label itself) and discount 1/log2(1 + rank).
AUC-ROC gives ties half credit; AUC-PR is the step-curve area with tied
scores entering the sweep together.
"""

from __future__ import annotations

import json
import math
from collections import defaultdict
from typing import Iterable, Sequence

import numpy as np
from scipy.stats import rankdata

NDCG_CUTOFFS = (1, 3, 5, 10)


def _binary(labels) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.float64)
    if np.any(labels < 0):
        raise ValueError("labels must be non-negative")
    return labels > 0


def auc_roc(scores: Sequence[float], labels: Sequence[float]) -> float:
    """P(random positive outscores random negative), ties count one half.

    Computed from the rank sum of the positives (Mann-Whitney U).
    """
    scores = np.asarray(scores, dtype=np.float64)
    pos = _binary(labels)
    n_pos = int(pos.sum())
    n_neg = pos.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC-ROC needs at least one positive and one negative")
    ranks = rankdata(scores, method="average")
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def auc_pr(scores: Sequence[float], labels: Sequence[float]) -> float:
    """Area under the precision-recall step curve (average precision)."""
    scores = np.asarray(scores, dtype=np.float64)
    pos = _binary(labels)
    n_pos = int(pos.sum())
    if n_pos == 0:
        raise ValueError("AUC-PR needs at least one positive")
    order = np.argsort(-scores, kind="stable")
    s_sorted = scores[order]
    tp = np.cumsum(pos[order])
    # last index of each tied-score group
    ends = np.flatnonzero(np.r_[s_sorted[1:] != s_sorted[:-1], True])
    tp = tp[ends].astype(np.float64)
    retrieved = ends + 1.0
    precision = tp / retrieved
    recall = tp / n_pos
    d_recall = np.diff(np.r_[0.0, recall])
    return float(np.sum(d_recall * precision))


def rank_labels(scores: Sequence[float], labels: Sequence[float]) -> np.ndarray:
    """Labels reordered by descending score; ties keep input order."""
    order = np.argsort(-np.asarray(scores, dtype=np.float64), kind="stable")
    return np.asarray(labels, dtype=np.float64)[order]


def dcg_at_k(ranked_labels: Sequence[float], k: int) -> float:
    if k < 1:
        raise ValueError("k must be >= 1")
    y = np.asarray(ranked_labels, dtype=np.float64)[:k]
    # correctly rounded sum, so appending zero gains never lowers the value
    return math.fsum(y / np.log2(np.arange(2, y.size + 2)))


def ndcg_at_k(ranked_labels: Sequence[float], k: int) -> float:
    """DCG@k over the DCG@k of the label-sorted ordering.

    Raises ``ValueError`` when every label is zero (undefined).
    """
    ideal = dcg_at_k(np.sort(np.asarray(ranked_labels, dtype=np.float64))[::-1], k)
    if ideal <= 0:
        raise ValueError("NDCG undefined: all labels are zero")
    return dcg_at_k(ranked_labels, k) / ideal


def mean_ndcg(groups: Iterable[tuple[Sequence[float], Sequence[float]]],
              cutoffs: Sequence[int] = NDCG_CUTOFFS) -> tuple[dict[int, float], int, int]:
    """Macro-averaged NDCG over ``(scores, labels)`` groups.

    Returns ``(means, n_used, n_skipped)``; all-zero-label groups are skipped.
    """
    sums = {k: 0.0 for k in cutoffs}
    used = skipped = 0
    for scores, labels in groups:
        ranked = rank_labels(scores, labels)
        if not np.any(ranked > 0):
            skipped += 1
            continue
        used += 1
        for k in cutoffs:
            sums[k] += ndcg_at_k(ranked, k)
    means = {k: (sums[k] / used if used else float("nan")) for k in cutoffs}
    return means, used, skipped


def metric_report(query_ids: Sequence, scores: Sequence[float], labels: Sequence[float],
                  cutoffs: Sequence[int] = NDCG_CUTOFFS) -> dict:
    """Pooled AUCs plus per-query macro NDCG, in the JSON report layout."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    by_query: dict = defaultdict(list)
    for i, q in enumerate(query_ids):
        by_query[q].append(i)
    groups = ((scores[ix], labels[ix]) for ix in by_query.values())
    ndcg, used, skipped = mean_ndcg(groups, cutoffs)
    pos = labels > 0
    report = {
        "auc_roc": auc_roc(scores, labels) if 0 < pos.sum() < pos.size else None,
        "auc_pr": auc_pr(scores, labels) if pos.any() else None,
        "ndcg": {str(k): v for k, v in ndcg.items()},
        "n_queries": used,
        "n_skipped_zero_label": skipped,
    }
    return report


def dumps_report(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True)
