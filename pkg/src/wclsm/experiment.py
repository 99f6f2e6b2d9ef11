"""Curated vs unweighted vs weighted training on a synthetic click log.

Queries are split 80/20; models train on the clicked pairs of the training
queries and are scored on the held-out queries' candidate documents, with
the generator's true CTRs as graded relevance labels.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import model as M
from .datakit import SplitSpec, SyntheticLog, SyntheticLogSpec, generate_synthetic_log, split_disjoint
from .evalkit import metric_report
from .text import TrigramVocabulary, hash_text
from .trainer import Regime, TrainConfig, TrainingPair, build_regime_dataset, dataset_texts, train

logger = logging.getLogger(__name__)

DEFAULT_REGIMES = {
    "curated": Regime("curated"),
    "unweighted": Regime("unweighted"),
    "weighted-ctr": Regime("weighted", "ctr"),
}

# Desk-scale model and optimiser settings shared by every regime. The step is
# normalised by the batch's total weight so that down-weighting does not
# silently shrink the learning rate of the weighted regime.
EXPERIMENT_CONFIG = TrainConfig(batch_size=1024, negatives=4, lr=1.0, epochs=10,
                                gamma=10.0, reduction="weight_mean", conv_dim=64, sem_dim=32)

# Long-tail log for the regime comparison. Frequent queries are shown more
# candidate ads (three extra per doubling of visits), so head queries carry
# more accidental clicks on irrelevant ads, which are heavily impressed and
# so have low CTR.
EXPERIMENT_SPEC = SyntheticLogSpec(n_queries=10_000, alpha=2.0, noise_rate=0.3,
                                   candidate_growth=3.0, seed=0)


def score_pairs(params: M.ModelParams, vocab: TrigramVocabulary,
                pairs: Sequence[tuple[str, str]], window: int = 3) -> np.ndarray:
    """Cosine score for each (query, doc) text pair."""
    texts = list(dict.fromkeys(t for p in pairs for t in p))
    vecs, _ = M.encode(params, [hash_text(t, vocab, window) for t in texts])
    row = {t: i for i, t in enumerate(texts)}
    q = vecs[[row[a] for a, _ in pairs]]
    d = vecs[[row[b] for _, b in pairs]]
    return M.cosine_rows(q, d)


def evaluate(params: M.ModelParams, vocab: TrigramVocabulary,
             labeled: Sequence[tuple[str, str, float]], window: int = 3) -> dict:
    scores = score_pairs(params, vocab, [(q, d) for q, d, _ in labeled], window)
    return metric_report([q for q, _, _ in labeled], scores, [y for _, _, y in labeled])


@dataclass
class RegimeResult:
    regime: str
    seed: int
    report: dict
    n_train_pairs: int
    seconds: float


@dataclass
class Comparison:
    results: list[RegimeResult] = field(default_factory=list)

    def ndcg(self, regime: str, k: int = 1) -> list[float]:
        return [r.report["ndcg"][str(k)] for r in self.results if r.regime == regime]

    def mean_ndcg(self, regime: str, k: int = 1) -> float:
        return float(np.mean(self.ndcg(regime, k)))

    def table(self) -> str:
        regimes = list(dict.fromkeys(r.regime for r in self.results))
        lines = [f"{'regime':<14}" + "".join(f"{'NDCG@' + str(k):>10}" for k in (1, 3, 5, 10))
                 + f"{'AUC-ROC':>10}"]
        for name in regimes:
            rows = [r for r in self.results if r.regime == name]
            cells = [np.mean([r.report["ndcg"][str(k)] for r in rows]) for k in (1, 3, 5, 10)]
            auc = np.mean([r.report["auc_roc"] for r in rows])
            lines.append(f"{name:<14}" + "".join(f"{c:>10.4f}" for c in cells) + f"{auc:>10.4f}")
        return "\n".join(lines)


def split_log(log: SyntheticLog, seed: int, train_fraction: float = 0.8):
    """Query-disjoint split of click records and truth rows."""
    queries = sorted(log.query_topics)
    split = split_disjoint([(q, q) for q in queries], SplitSpec(train_fraction, key="first"), seed)
    train_q = {q for q, _ in split.train}
    train_records = [r for r in log.records if r.query_id in train_q]
    eval_truth = [row for row in log.truth if row[0] not in train_q]
    return train_records, eval_truth


def compare_regimes(spec: SyntheticLogSpec = EXPERIMENT_SPEC,
                    seeds: Sequence[int] = (0, 1, 2),
                    config: TrainConfig = EXPERIMENT_CONFIG,
                    regimes: dict[str, Regime] | None = None) -> Comparison:
    """Train every regime under every seed with identical budgets."""
    regimes = regimes or DEFAULT_REGIMES
    log = generate_synthetic_log(spec)
    train_records, eval_truth = split_log(log, spec.seed)
    # restrict evaluation to queries with at least two candidates
    per_q: dict[str, int] = {}
    for q, _, _ in eval_truth:
        per_q[q] = per_q.get(q, 0) + 1
    eval_truth = [row for row in eval_truth if per_q[row[0]] >= 2]

    datasets = {name: build_regime_dataset(train_records, reg) for name, reg in regimes.items()}
    all_pairs: list[TrainingPair] = [p for ds in datasets.values() for p in ds]
    vocab = TrigramVocabulary.build(dataset_texts(all_pairs))
    out = Comparison()
    for seed in seeds:
        for name, ds in datasets.items():
            t0 = time.perf_counter()
            params, _ = train(replace(config, seed=seed), ds, vocab)
            report = evaluate(params, vocab, eval_truth, config.window)
            out.results.append(RegimeResult(name, seed, report, len(ds), time.perf_counter() - t0))
            logger.info("%s seed %d: NDCG@1 %.4f (%d pairs, %.1fs)", name, seed,
                        report["ndcg"]["1"], len(ds), out.results[-1].seconds)
    return out
