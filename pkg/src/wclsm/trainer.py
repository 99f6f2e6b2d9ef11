"""Mini-batch SGD for the semantic encoder under three data regimes.

* curated     clicked pairs whose CTR exceeds a threshold, weight 1
* unweighted  every clicked pair, weight 1
* weighted    every clicked pair, weight from a click-log strategy

Negatives for a training pair are the positive documents of other pairs in
the same mini-batch (or, optionally, of the whole training set).
"""

from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import model as M
from .objective import score_vectors
from .seeding import derive_seed, rng_for
from .text import DEFAULT_MAX_WORDS, HashedSequence, TrigramVocabulary, hash_text
from .weighting import ClickRecord, CoPurchaseGraph, get_strategy, weight_jaccard

logger = logging.getLogger(__name__)

REGIMES = ("curated", "unweighted", "weighted")


class NumericalError(RuntimeError):
    """Training produced a non-finite loss."""


class EmptyDatasetError(ValueError):
    pass


@dataclass(frozen=True)
class TrainingPair:
    query: str
    doc: str
    weight: float = 1.0


@dataclass(frozen=True)
class Regime:
    kind: str = "weighted"
    strategy: str = "ctr"
    ctr_threshold: float | None = None  # curated only; None = global mean CTR

    def __post_init__(self):
        if self.kind not in REGIMES:
            raise ValueError(f"unknown regime {self.kind!r}; choose from {REGIMES}")


def market_average_ctr(records: Sequence[ClickRecord]) -> float:
    return sum(r.clicks for r in records) / sum(r.impressions for r in records)


def build_regime_dataset(records: Sequence[ClickRecord], regime: Regime) -> list[TrainingPair]:
    """Training pairs for a regime; only clicked pairs are ever kept."""
    if not records:
        raise EmptyDatasetError("click log is empty")
    if regime.kind == "curated":
        thr = regime.ctr_threshold
        if thr is None:
            thr = market_average_ctr(records)
        pairs = [TrainingPair(r.query_id, r.doc_id, 1.0)
                 for r in records if r.clicks > 0 and r.ctr > thr]
        if not pairs:
            raise EmptyDatasetError(f"no pair has CTR above the curation threshold {thr:.6g}")
        return pairs
    if regime.kind == "unweighted":
        return [TrainingPair(r.query_id, r.doc_id, 1.0) for r in records if r.clicks > 0]
    weights = get_strategy(regime.strategy)(records)
    return [TrainingPair(r.query_id, r.doc_id, float(w))
            for r, w in zip(records, weights) if r.clicks > 0]


def copurchase_pairs(graph: CoPurchaseGraph, titles: dict[str, str],
                     weighted: bool = True) -> list[TrainingPair]:
    """One pair per co-purchase edge (both directions), Jaccard-weighted or 1."""
    pairs = []
    for a, b in graph.edges():
        w = weight_jaccard(graph, a, b) if weighted else 1.0
        pairs.append(TrainingPair(titles[a], titles[b], w))
        pairs.append(TrainingPair(titles[b], titles[a], w))
    return pairs


def sample_negatives(doc_ids: Sequence, J: int, rng: np.random.Generator,
                     pool: Sequence | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Draw J distinct negative documents per example.

    Negatives come from the distinct values of ``doc_ids`` (in-batch) or of
    ``pool`` when given, never equal to the example's own document. Returns
    ``(neg, ok)``: ``neg[i]`` indexes into the candidate list returned as
    ``pool`` order (first-occurrence order of distinct ids), and ``ok[i]`` is
    False for examples that cannot get J negatives (their row is -1).
    """
    candidates = list(dict.fromkeys(doc_ids if pool is None else pool))
    pos_of = {d: i for i, d in enumerate(candidates)}
    n = len(candidates)
    neg = np.full((len(doc_ids), J), -1, dtype=np.int64)
    ok = np.zeros(len(doc_ids), dtype=bool)
    for i, d in enumerate(doc_ids):
        own = pos_of.get(d)
        avail = n - (own is not None)
        if avail < J:
            continue
        draw = rng.choice(avail, size=J, replace=False)
        if own is not None:
            draw = draw + (draw >= own)
        neg[i] = draw
        ok[i] = True
    n_bad = int((~ok).sum())
    if n_bad:
        logger.warning("skipped %d example(s): fewer than %d distinct negatives available",
                       n_bad, J)
    return neg, ok


@dataclass
class TrainConfig:
    batch_size: int = 1024
    negatives: int = 4
    lr: float = 0.1
    lr_decay: float = 0.5
    epochs: int = 10
    seed: int = 0
    gamma: float = 1.0
    mode: str = "eq1_weighted"           # or "rank_aware_lambda"
    reduction: str = "sum"               # "mean" or "weight_mean"
    negative_pool: str = "in_batch"      # or "global"
    window: int = 3
    conv_dim: int = 300
    sem_dim: int = 128
    max_words: int = DEFAULT_MAX_WORDS
    workers: int = 1

    def __post_init__(self):
        if self.batch_size <= self.negatives:
            raise ValueError("batch_size must exceed the number of negatives")
        if self.negatives < 1:
            raise ValueError("need at least one negative")
        if self.lr < 0:
            raise ValueError("learning rate must be non-negative")
        if self.reduction not in ("sum", "mean", "weight_mean"):
            raise ValueError("reduction must be 'sum', 'mean' or 'weight_mean'")
        if self.negative_pool not in ("in_batch", "global"):
            raise ValueError("negative_pool must be 'in_batch' or 'global'")
        if self.mode not in ("eq1_weighted", "rank_aware_lambda"):
            raise ValueError(f"unknown gradient mode {self.mode!r}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainLog:
    epochs: list[dict] = field(default_factory=list)
    best_epoch: int | None = None

    def append(self, record: dict) -> None:
        if self.epochs and record["epoch"] <= self.epochs[-1]["epoch"]:
            raise ValueError("epochs must be recorded in increasing order")
        self.epochs.append(record)

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.epochs)


class _Encoder:
    """Caches hashed texts and runs (optionally threaded) batched passes."""

    def __init__(self, vocab: TrigramVocabulary, window: int, max_words: int, workers: int):
        self.vocab, self.window, self.max_words = vocab, window, max_words
        self.workers = max(1, workers)
        self._cache: dict[str, HashedSequence] = {}
        self._pool = ThreadPoolExecutor(self.workers) if self.workers > 1 else None

    def hashed(self, text: str) -> HashedSequence:
        h = self._cache.get(text)
        if h is None:
            h = self._cache[text] = hash_text(text, self.vocab, self.window, self.max_words)
        return h

    def _chunks(self, n: int) -> list[slice]:
        bounds = np.linspace(0, n, min(self.workers, n) + 1).astype(int)
        return [slice(a, b) for a, b in zip(bounds[:-1], bounds[1:])]

    def encode(self, params: M.ModelParams, texts: Sequence[str]):
        seqs = [self.hashed(t) for t in texts]
        if self._pool is None:
            vecs, cache = M.encode(params, seqs)
            return vecs, [(slice(0, len(seqs)), cache)]
        parts = self._chunks(len(seqs))
        results = list(self._pool.map(lambda s: M.encode(params, seqs[s]), parts))
        return np.vstack([r[0] for r in results]), [(s, r[1]) for s, r in zip(parts, results)]

    def backward(self, params: M.ModelParams, caches, d_vecs: np.ndarray) -> M.ModelParams:
        if self._pool is None:
            (s, cache), = caches
            return M.backward_batch(params, cache, d_vecs[s])
        grads = list(self._pool.map(lambda sc: M.backward_batch(params, sc[1], d_vecs[sc[0]]),
                                    caches))
        total = grads[0]
        for g in grads[1:]:
            total = total.axpy(1.0, g)
        return total

    def close(self):
        if self._pool is not None:
            self._pool.shutdown()


def batch_gradient(params: M.ModelParams, enc: _Encoder, pairs: Sequence[TrainingPair],
                   config: TrainConfig, rng: np.random.Generator,
                   pool: Sequence[str] | None = None):
    """Loss report, gradient and number of used examples for one mini-batch."""
    docs = [p.doc for p in pairs]
    neg, ok = sample_negatives(docs, config.negatives, rng, pool)
    candidates = list(dict.fromkeys(docs if pool is None else pool))
    idx = np.flatnonzero(ok)
    if idx.size == 0:
        return None, None, 0
    queries = list(dict.fromkeys(pairs[i].query for i in idx))
    used_docs = list(dict.fromkeys([pairs[i].doc for i in idx]
                                   + [candidates[j] for j in np.unique(neg[idx])]))
    texts = queries + used_docs
    row = {("q", t): i for i, t in enumerate(queries)}
    row.update({("d", t): len(queries) + i for i, t in enumerate(used_docs)})
    q_idx = np.array([row["q", pairs[i].query] for i in idx])
    d_idx = np.array([[row["d", pairs[i].doc]] + [row["d", candidates[j]] for j in neg[i]]
                      for i in idx])
    weights = np.array([pairs[i].weight for i in idx], dtype=np.float64)

    vecs, caches = enc.encode(params, texts)
    report, d_vecs = score_vectors(vecs, q_idx, d_idx, weights, config.gamma, config.mode)
    grads = enc.backward(params, caches, d_vecs)
    return report, grads, idx.size


def _reduction_scale(reduction: str, batch, used: int, report) -> float:
    if reduction == "sum":
        return 1.0
    if reduction == "mean":
        return 1.0 / used
    total = float(np.sum(report.weights))
    return 1.0 / total if total > 0 else 0.0


def train(config: TrainConfig, dataset: Sequence[TrainingPair], vocab: TrigramVocabulary,
          validate: Callable[[M.ModelParams], float] | None = None,
          init: M.ModelParams | None = None) -> tuple[M.ModelParams, TrainLog]:
    """Run ``config.epochs`` passes of shuffled mini-batch SGD.

    ``validate(params)`` (higher is better, e.g. AUC) enables best-epoch
    selection; otherwise the final parameters are returned. The learning
    rate is multiplied by ``lr_decay`` after any epoch whose loss did not
    improve on the best so far.
    """
    if not dataset:
        raise EmptyDatasetError("training set is empty")
    hyper = M.Hyper(vocab_size=vocab.size, window=config.window, conv_dim=config.conv_dim,
                    sem_dim=config.sem_dim)
    params = init if init is not None else M.init_params(hyper, derive_seed(config.seed, "init"))
    shuffle_rng = rng_for(config.seed, "shuffle")
    neg_rng = rng_for(config.seed, "negatives")
    enc = _Encoder(vocab, config.window, config.max_words, config.workers)
    pool = list(dict.fromkeys(p.doc for p in dataset)) if config.negative_pool == "global" else None
    log = TrainLog()
    lr = config.lr
    best_loss = np.inf
    best_score, best_params = -np.inf, params
    try:
        for epoch in range(1, config.epochs + 1):
            t0 = time.perf_counter()
            order = shuffle_rng.permutation(len(dataset))
            epoch_loss, n_used, n_skipped = 0.0, 0, 0
            for b, start in enumerate(range(0, len(order), config.batch_size)):
                batch = [dataset[i] for i in order[start:start + config.batch_size]]
                report, grads, used = batch_gradient(params, enc, batch, config, neg_rng, pool)
                n_skipped += len(batch) - used
                if used == 0:
                    continue
                if not np.isfinite(report.loss):
                    raise NumericalError(
                        f"non-finite loss at epoch {epoch}, batch {b} (lr={lr:g})")
                scale = _reduction_scale(config.reduction, batch, used, report)
                with np.errstate(over="ignore", invalid="ignore"):
                    params = params.axpy(-lr * scale, grads)
                if not params.is_finite():
                    raise NumericalError(
                        f"parameters became non-finite at epoch {epoch}, batch {b} (lr={lr:g})")
                epoch_loss += report.loss
                n_used += used
            record = {"epoch": epoch, "loss": epoch_loss, "lr": lr, "n_examples": n_used,
                      "n_skipped": n_skipped, "param_norm": params.norm(),
                      "wall_time": time.perf_counter() - t0}
            if validate is not None:
                score = float(validate(params))
                record["validation"] = score
                if score > best_score:
                    best_score, best_params, log.best_epoch = score, params, epoch
            log.append(record)
            logger.info("epoch %d loss %.6g lr %.4g", epoch, epoch_loss, lr)
            if epoch_loss < best_loss:
                best_loss = epoch_loss
            else:
                lr *= config.lr_decay
    finally:
        enc.close()
    return (best_params if validate is not None else params), log


def dataset_texts(dataset: Sequence[TrainingPair]) -> list[str]:
    return list(dict.fromkeys(t for p in dataset for t in (p.query, p.doc)))
