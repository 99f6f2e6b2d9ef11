"""Loss functions and gradient shaping for weighted semantic-model training.

Scores are cosine similarities between query and document vectors. For
one query the positive document competes with J sampled negatives under a
softmax; each training point's negative log-posterior is multiplied by
its weight y(Q, D+). With unclicked negatives (label 0) the same weighted
loss falls out of three views: DCG-swap lambda gradients at rank one,
cost-sensitive learning with cost y(D+) - y(D-), and the weighted pairwise
surrogate bound on 1 - NDCG.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.special import expit, log_expit, logsumexp

from . import model as M
from .text import HashedSequence


def softmax_posterior(s_pos: float, s_negs: Sequence[float], gamma: float = 1.0) -> float:
    """P(D+|Q) = exp(g s+) / (exp(g s+) + sum exp(g s-))."""
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    z = gamma * np.concatenate([[s_pos], np.asarray(s_negs, dtype=np.float64)])
    return float(np.exp(z[0] - logsumexp(z)))


def pairwise_loss(s_pos, s_neg):
    """log(1 + exp(s- - s+)), evaluated stably."""
    return -log_expit(np.subtract(s_pos, s_neg))


def lambda_scale(y_pos: float, rank_j: int) -> float:
    """|dDCG| for swapping a positive at rank j with a zero-label negative."""
    if rank_j < 1:
        raise ValueError("rank must be >= 1")
    return float(y_pos / np.log2(1.0 + rank_j))


def lambda_gradient(s_pos, s_neg, delta_dcg):
    """Multiplier on (ds-/dparams - ds+/dparams): |dDCG| * sigmoid(s- - s+)."""
    return delta_dcg * expit(np.subtract(s_neg, s_pos))


def cost_sensitive_weight(y_pos: float, y_neg: float = 0.0) -> float:
    if y_pos < 0 or y_neg < 0:
        raise ValueError("labels must be non-negative")
    return y_pos - y_neg


# -- batched scoring ---------------------------------------------------------

@dataclass
class TrainingExample:
    query: HashedSequence
    positive_doc: HashedSequence
    negatives: list[HashedSequence]
    weight: float = 1.0

    def __post_init__(self):
        if len(self.negatives) < 1:
            raise ValueError("need at least one negative document")
        if not np.isfinite(self.weight) or self.weight < 0:
            raise ValueError(f"weight must be finite and non-negative, got {self.weight}")


@dataclass
class LossReport:
    loss: float
    posterior: np.ndarray   # (B,)
    s_pos: np.ndarray       # (B,)
    s_neg: np.ndarray       # (B, J)
    grad_scores: np.ndarray  # (B, 1+J) dLoss/dscore, positive first
    weights: np.ndarray | None = None
    degenerate: int = 0


def score_loss(scores: np.ndarray, weights: np.ndarray, gamma: float = 1.0,
               mode: str = "eq1_weighted") -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-example losses, posteriors and dLoss/dscores.

    ``scores`` is ``(B, 1+J)`` with the positive in column 0.

    ``eq1_weighted`` is the weighted softmax negative log-likelihood.
    ``rank_aware_lambda`` uses pairwise logistic terms between the positive
    and each negative, scaled by y / log2(1 + j) where j is the positive's
    rank among its candidates under the current scores.
    """
    scores = np.asarray(scores, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if np.any(weights < 0) or not np.all(np.isfinite(weights)):
        raise ValueError("weights must be finite and non-negative")
    z = gamma * scores
    logp = z - logsumexp(z, axis=1, keepdims=True)
    posterior = np.exp(logp[:, 0])
    if mode == "eq1_weighted":
        losses = -weights * logp[:, 0]
        g = np.exp(logp)
        g[:, 0] -= 1.0
        grad = gamma * weights[:, None] * g
    elif mode == "rank_aware_lambda":
        # rank of the positive: 1 + number of negatives scoring strictly higher
        rank = 1 + np.sum(scores[:, 1:] > scores[:, :1], axis=1)
        delta = weights / np.log2(1.0 + rank)
        diff = z[:, :1] - z[:, 1:]
        losses = delta * np.sum(-log_expit(diff), axis=1)
        lam = delta[:, None] * expit(-diff)
        grad = np.zeros_like(scores)
        grad[:, 1:] = gamma * lam
        grad[:, 0] = -gamma * lam.sum(axis=1)
    else:
        raise ValueError(f"unknown gradient mode {mode!r}")
    # zero-weight rows contribute exactly nothing
    zero = weights == 0
    losses = np.where(zero, 0.0, losses)
    grad[zero] = 0.0
    return losses, posterior, grad


def _flatten_batch(examples: Sequence[TrainingExample]):
    seqs, q_idx, d_idx = [], [], []
    for ex in examples:
        q_idx.append(len(seqs))
        seqs.append(ex.query)
        row = [len(seqs)]
        seqs.append(ex.positive_doc)
        for neg in ex.negatives:
            row.append(len(seqs))
            seqs.append(neg)
        d_idx.append(row)
    J = {len(r) for r in d_idx}
    if len(J) != 1:
        raise ValueError("every example must carry the same number of negatives")
    return seqs, np.array(q_idx), np.array(d_idx)


def batch_loss_and_grad(params: M.ModelParams, examples: Sequence[TrainingExample],
                        gamma: float = 1.0, mode: str = "eq1_weighted",
                        need_grad: bool = True) -> tuple[LossReport, M.ModelParams | None]:
    """Summed loss over the batch and its exact parameter gradient."""
    seqs, q_idx, d_idx = _flatten_batch(examples)
    weights = np.array([ex.weight for ex in examples], dtype=np.float64)
    vecs, cache = M.encode(params, seqs)
    report, d_vecs = score_vectors(vecs, q_idx, d_idx, weights, gamma, mode)
    grads = M.backward_batch(params, cache, d_vecs) if need_grad else None
    return report, grads


def score_vectors(vecs: np.ndarray, q_idx: np.ndarray, d_idx: np.ndarray,
                  weights: np.ndarray, gamma: float, mode: str) -> tuple[LossReport, np.ndarray]:
    """Loss report plus dLoss/d(vector) for every row of ``vecs``.

    ``q_idx[i]`` is the query row of example i, ``d_idx[i]`` its candidate
    rows (positive first). Rows may be shared between examples.
    """
    B, C = d_idx.shape
    qv = np.repeat(vecs[q_idx], C, axis=0)
    dv = vecs[d_idx.ravel()]
    cos = M.cosine_rows(qv, dv)
    norms = np.linalg.norm(vecs, axis=1)
    degenerate = int(np.sum(norms < M.NORM_EPS))
    scores = cos.reshape(B, C)
    losses, posterior, g_scores = score_loss(scores, weights, gamma, mode)
    gq, gd = M.cosine_rows_grad(qv, dv, g_scores.ravel())
    d_vecs = np.zeros_like(vecs)
    np.add.at(d_vecs, np.repeat(q_idx, C), gq)
    np.add.at(d_vecs, d_idx.ravel(), gd)
    report = LossReport(loss=float(losses.sum()), posterior=posterior, s_pos=scores[:, 0],
                        s_neg=scores[:, 1:], grad_scores=g_scores, weights=weights,
                        degenerate=degenerate)
    return report, d_vecs


def weighted_nll(params: M.ModelParams, examples: Sequence[TrainingExample],
                 gamma: float = 1.0) -> LossReport:
    """Sum over the batch of -y(Q,D+) log P(D+|Q)."""
    report, _ = batch_loss_and_grad(params, examples, gamma, need_grad=False)
    return report


def cost_sensitive_nll(params: M.ModelParams, examples: Sequence[TrainingExample],
                       labels_pos: Sequence[float], labels_neg: Sequence[float] | None = None,
                       gamma: float = 1.0) -> LossReport:
    """Sum of -C(Q,D+) log P(D+|Q) with C = y(D+) - y(D-)."""
    if labels_neg is None:
        labels_neg = [0.0] * len(labels_pos)
    costs = [cost_sensitive_weight(p, n) for p, n in zip(labels_pos, labels_neg)]
    reweighted = [TrainingExample(ex.query, ex.positive_doc, ex.negatives, c)
                  for ex, c in zip(examples, costs)]
    return weighted_nll(params, reweighted, gamma)


# -- ranking-measure bound -----------------------------------------------------

def linear_gain(y):
    return np.asarray(y, dtype=np.float64)


def log_discount(i):
    return 1.0 / np.log2(1.0 + np.asarray(i, dtype=np.float64))


def logistic_surrogate(z):
    """phi(z) = log(1 + exp(-z))."""
    return -log_expit(z)


@dataclass
class BoundCheck:
    lhs: float
    rhs_unweighted: float
    rhs_weighted: float
    holds_unweighted: bool
    holds_weighted: bool


def ndcg_bound_check(labels: Sequence[float], scores: Sequence[float],
                     gain: Callable = linear_gain, discount: Callable = log_discount,
                     phi: Callable = logistic_surrogate) -> BoundCheck:
    """Compare 1 - NDCG against the pairwise surrogate bounds.

    Unweighted: beta1 / Nn * sum over pairs (s, i) with l(i) < l(s) of
    phi(f(s) - f(i)), where beta1 = G(max label) D(1). Weighted: the pair
    term for a higher-labelled document s is multiplied by G(l(s)) D(1)
    instead of beta1.
    """
    labels = np.asarray(labels, dtype=np.float64)
    scores = np.asarray(scores, dtype=np.float64)
    if labels.shape != scores.shape or labels.ndim != 1:
        raise ValueError("labels and scores must be 1-d and equally long")
    n = labels.size
    positions = np.arange(1, n + 1)
    ideal = float(np.sum(gain(np.sort(labels)[::-1]) * discount(positions)))
    if ideal <= 0:
        raise ValueError("ideal DCG is zero (no positive labels)")
    order = np.argsort(-scores, kind="stable")
    dcg = float(np.sum(gain(labels[order]) * discount(positions)))
    lhs = 1.0 - dcg / ideal

    d1 = float(discount(1))
    beta1 = float(gain(labels.max())) * d1
    higher = labels[:, None] > labels[None, :]
    pair_phi = phi(scores[:, None] - scores[None, :])
    per_s = np.where(higher, pair_phi, 0.0).sum(axis=1)
    # same operation order for both bounds, so equal weights give equal sums
    rhs_u = float(np.sum(np.full(n, beta1) * per_s)) / ideal
    rhs_w = float(np.sum(gain(labels) * d1 * per_s)) / ideal
    return BoundCheck(lhs, rhs_u, rhs_w, lhs <= rhs_u, lhs <= rhs_w)
