"""Per-pair training weights from click logs and co-purchase graphs.

Strategies map a whole click log to one weight per record:

* ``ctr``      clicks / impressions of the pair itself
* ``nclicks``  clicks of the pair / total clicks of its query
* ``constant`` 1 for every record (the unweighted baseline)

:func:`audit_principles` checks a strategy against four properties on a
synthetic log whose true click rates are known: weights comparable across
queries (P1), no query-popularity bias (P2), no document-popularity bias
(P3) and monotone growth with clicks (P4).
"""

from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ClickRecord:
    query_id: str
    doc_id: str
    impressions: int
    clicks: int

    def __post_init__(self):
        if self.impressions < 1:
            raise ValueError(f"record {self.query_id!r}/{self.doc_id!r} has no impressions")
        if not 0 <= self.clicks <= self.impressions:
            raise ValueError(f"record {self.query_id!r}/{self.doc_id!r}: clicks "
                             f"{self.clicks} not within [0, {self.impressions}]")

    @property
    def ctr(self) -> float:
        return self.clicks / self.impressions


def weight_ctr(rec: ClickRecord, prior_ctr: float = 0.0, prior_impressions: float = 0.0,
               floor: float = 0.0) -> float:
    """Click-through rate of one pair.

    ``prior_impressions > 0`` shrinks the estimate toward ``prior_ctr`` as if
    that many extra impressions had been seen at the prior rate; ``floor``
    clips the result from below. Both are off by default.
    """
    if rec.impressions < 1:
        raise ValueError("zero impressions")
    w = (rec.clicks + prior_impressions * prior_ctr) / (rec.impressions + prior_impressions)
    return max(w, floor)


def weight_nclicks(records: Sequence[ClickRecord]) -> tuple[np.ndarray, bool]:
    """Clicks normalised by the query's total clicks.

    Returns ``(weights, no_clicks)``. A query without any click gets all-zero
    weights and ``no_clicks=True``.
    """
    clicks = np.array([r.clicks for r in records], dtype=np.float64)
    total = clicks.sum()
    if total == 0:
        return np.zeros_like(clicks), True
    return clicks / total, False


def _group_by(records: Sequence[ClickRecord], key: str) -> dict[str, list[int]]:
    groups: dict[str, list[int]] = defaultdict(list)
    for i, r in enumerate(records):
        groups[getattr(r, key)].append(i)
    return groups


def ctr_strategy(records: Sequence[ClickRecord], **kw) -> np.ndarray:
    return np.array([weight_ctr(r, **kw) for r in records], dtype=np.float64)


def nclicks_strategy(records: Sequence[ClickRecord]) -> np.ndarray:
    ids: dict[str, int] = {}
    group = np.array([ids.setdefault(r.query_id, len(ids)) for r in records], dtype=np.int64)
    clicks = np.array([r.clicks for r in records], dtype=np.float64)
    totals = np.bincount(group, weights=clicks)
    n_flagged = int(np.sum(totals == 0))
    if n_flagged:
        logger.debug("nclicks: %d queries without clicks got zero weights", n_flagged)
    denom = totals[group]
    return np.divide(clicks, denom, out=np.zeros_like(clicks), where=denom > 0)


def constant_strategy(records: Sequence[ClickRecord]) -> np.ndarray:
    return np.ones(len(records))


STRATEGIES: dict[str, Callable[[Sequence[ClickRecord]], np.ndarray]] = {
    "ctr": ctr_strategy,
    "nclicks": nclicks_strategy,
    "constant": constant_strategy,
}


def get_strategy(strategy) -> Callable[[Sequence[ClickRecord]], np.ndarray]:
    if callable(strategy):
        return strategy
    try:
        return STRATEGIES[strategy]
    except KeyError:
        raise ValueError(f"unknown weighting strategy {strategy!r}; "
                         f"choose from {sorted(STRATEGIES)}") from None


# -- co-purchase graphs ------------------------------------------------------

@dataclass(frozen=True)
class CoPurchaseGraph:
    adjacency: Mapping[str, frozenset]

    def __post_init__(self):
        for p, nbrs in self.adjacency.items():
            if p in nbrs:
                raise ValueError(f"self-loop on product {p!r}")
            for q in nbrs:
                if p not in self.adjacency.get(q, ()):
                    raise ValueError(f"asymmetric edge {p!r} -> {q!r}")

    @classmethod
    def from_edges(cls, edges: Iterable[tuple[str, str]],
                   products: Iterable[str] = ()) -> "CoPurchaseGraph":
        adj: dict[str, set] = {p: set() for p in products}
        for a, b in edges:
            if a == b:
                raise ValueError(f"self-loop on product {a!r}")
            adj.setdefault(a, set()).add(b)
            adj.setdefault(b, set()).add(a)
        return cls({p: frozenset(n) for p, n in adj.items()})

    def neighbors(self, p: str) -> frozenset:
        try:
            return self.adjacency[p]
        except KeyError:
            raise KeyError(f"unknown product id {p!r}") from None

    def edges(self) -> list[tuple[str, str]]:
        return sorted((a, b) for a, nb in self.adjacency.items() for b in nb if a < b)


def weight_jaccard(g: CoPurchaseGraph, p_i: str, p_j: str) -> float:
    """|Nr(i) & Nr(j)| / |Nr(i) | Nr(j)|, zero when both are isolated."""
    a, b = g.neighbors(p_i), g.neighbors(p_j)
    union = len(a | b)
    return len(a & b) / union if union else 0.0


# -- weighted pair files -------------------------------------------------------

def write_weighted_pairs(path, rows: Iterable[tuple[str, str, float]]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for q, d, w in rows:
            fh.write(f"{q}\t{d}\t{w:.6f}\n")


def read_weighted_pairs(path) -> list[tuple[str, str, float]]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ValueError(f"{path}:{lineno}: expected query<TAB>doc<TAB>weight")
            rows.append((parts[0], parts[1], float(parts[2])))
    return rows


# -- principle audit -----------------------------------------------------------

PRINCIPLES = ("P1", "P2", "P3", "P4")


@dataclass
class PrincipleReport:
    strategy: str
    passed: dict[str, bool]
    statistics: dict[str, float]
    details: dict = field(default_factory=dict)

    def row(self) -> str:
        return " ".join("Y" if self.passed[p] else "N" for p in PRINCIPLES)


def _terciles(values: np.ndarray) -> np.ndarray:
    """Bucket ids 0/1/2 by tercile; raises if everything lands in one bucket."""
    cuts = np.quantile(values, [1 / 3, 2 / 3])
    buckets = np.searchsorted(cuts, values, side="right")
    if np.unique(buckets).size < 2:
        raise ValueError("degenerate log: all entities fall in one frequency bucket")
    return buckets


def _bucket_spread(weights: np.ndarray, buckets: np.ndarray) -> tuple[float, list[float]]:
    means = [float(weights[buckets == b].mean()) for b in np.unique(buckets)]
    return max(means) - min(means), means


def audit_principles(strategy, spec=None, eps_bias: float = 0.05, n_probes: int = 50,
                     log=None) -> PrincipleReport:
    """Check a weighting strategy against the four guiding principles.

    ``spec`` is a :class:`wclsm.datakit.SyntheticLogSpec` (defaults to
    :data:`wclsm.datakit.AUDIT_SPEC`); a pre-generated ``log`` may be passed
    instead. Bucket means are taken over every logged record, clicked or not.
    """
    from . import datakit

    name = strategy if isinstance(strategy, str) else getattr(strategy, "__name__", "custom")
    fn = get_strategy(strategy)
    if log is None:
        log = datakit.generate_synthetic_log(spec or datakit.AUDIT_SPEC)
    records = list(log.records)
    rng = np.random.default_rng(log.spec.seed + 1)
    weights = fn(records)

    by_query = _group_by(records, "query_id")
    by_doc = _group_by(records, "doc_id")
    q_clicks = {q: sum(records[i].clicks for i in ix) for q, ix in by_query.items()}

    # P1: identical (clicks, impressions) under two different queries
    clicked = [q for q, c in q_clicks.items() if c > 0]
    if len(clicked) < 2:
        raise ValueError("degenerate log: fewer than two clicked queries")
    probes, pairs = [], []
    order = rng.permutation(len(clicked))
    for k in range(0, min(2 * n_probes, len(order) - 1), 2):
        qa, qb = clicked[order[k]], clicked[order[k + 1]]
        if q_clicks[qa] == q_clicks[qb]:
            continue
        base = len(records) + len(probes)
        probes.append(ClickRecord(qa, f"__probe_{k}_a", 10, 3))
        probes.append(ClickRecord(qb, f"__probe_{k}_b", 10, 3))
        pairs.append((base, base + 1))
    w_aug = fn(records + probes)
    p1_gap = max(abs(w_aug[a] - w_aug[b]) for a, b in pairs)

    # P2 / P3: bucket means by impression terciles
    imp = np.array([r.impressions for r in records], dtype=np.float64)
    q_imp = {q: imp[ix].sum() for q, ix in by_query.items()}
    d_imp = {d: imp[ix].sum() for d, ix in by_doc.items()}
    q_keys = list(by_query)
    d_keys = list(by_doc)
    q_bucket = dict(zip(q_keys, _terciles(np.array([q_imp[q] for q in q_keys]))))
    d_bucket = dict(zip(d_keys, _terciles(np.array([d_imp[d] for d in d_keys]))))
    p2_gap, p2_means = _bucket_spread(weights, np.array([q_bucket[r.query_id] for r in records]))
    p3_gap, p3_means = _bucket_spread(weights, np.array([d_bucket[r.doc_id] for r in records]))

    # P4: sweep one record's clicks 0..I with everything else fixed
    candidates = [i for i, r in enumerate(records)
                  if r.impressions >= 2 and q_clicks[r.query_id] - r.clicks > 0]
    if not candidates:
        raise ValueError("degenerate log: no record suitable for the click sweep")
    chosen = rng.choice(len(candidates), size=min(n_probes, len(candidates)), replace=False)
    p4_min_step = np.inf
    for c in chosen:
        i = candidates[c]
        r = records[i]
        sweep = []
        levels = np.unique(np.linspace(0, r.impressions, min(r.impressions + 1, 11)).astype(int))
        for clicks in levels:
            recs = records[:]
            recs[i] = ClickRecord(r.query_id, r.doc_id, r.impressions, clicks)
            sweep.append(fn(recs)[i])
        p4_min_step = min(p4_min_step, float(np.min(np.diff(sweep))))

    passed = {
        "P1": p1_gap <= 1e-12,
        "P2": p2_gap < eps_bias,
        "P3": p3_gap < eps_bias,
        "P4": p4_min_step > 0,
    }
    stats = {"P1": float(p1_gap), "P2": p2_gap, "P3": p3_gap, "P4": p4_min_step}
    details = {"query_bucket_means": p2_means, "doc_bucket_means": p3_means,
               "n_records": len(records), "n_p1_probes": len(pairs),
               "n_p4_probes": len(chosen)}
    return PrincipleReport(name, passed, stats, details)


def format_principle_table(reports: Sequence[PrincipleReport]) -> str:
    width = max(len("Weighing Strategy"), *(len(r.strategy) for r in reports))
    lines = [f"{'Weighing Strategy':<{width}}  " + "  ".join(f"{p:>3}" for p in PRINCIPLES)]
    for r in reports:
        marks = "  ".join(f"{'Y' if r.passed[p] else 'N':>3}" for p in PRINCIPLES)
        lines.append(f"{r.strategy:<{width}}  {marks}")
    return "\n".join(lines)
