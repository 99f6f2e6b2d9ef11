"""Click-log and co-purchase ingestion, entity-disjoint splits, and a
synthetic long-tail click-log generator.

File formats (UTF-8, tab separated, no header):

* ``clicklog.tsv``  query, doc, impressions, clicks
* ``truth.tsv``     query, doc, true_ctr      (synthetic logs only)
* ``products.tsv``  id, title
* ``edges.tsv``     id, id
"""

from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from typing import Callable, Hashable, Iterable, NamedTuple, Sequence

import numpy as np

from .text import normalize_and_tokenize
from .weighting import ClickRecord, CoPurchaseGraph

logger = logging.getLogger(__name__)

MAX_MALFORMED_FRACTION = 0.01


class DataError(Exception):
    """Input data violates its format or invariants."""

    def __init__(self, message: str, report: Sequence = ()):
        super().__init__(message)
        self.report = list(report)


def normalize_text(text: str) -> str:
    return " ".join(normalize_and_tokenize(text))


# -- click logs ---------------------------------------------------------------

@dataclass
class ClickLogFile:
    records: list[ClickRecord]
    errors: list[tuple[int, str]] = field(default_factory=list)

    def texts(self) -> list[str]:
        seen = dict.fromkeys(t for r in self.records for t in (r.query_id, r.doc_id))
        return list(seen)


def write_click_log(path, records: Iterable[ClickRecord]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in records:
            fh.write(f"{r.query_id}\t{r.doc_id}\t{r.impressions}\t{r.clicks}\n")


def _parse_click_row(line: str) -> ClickRecord:
    parts = line.split("\t")
    if len(parts) != 4:
        raise ValueError(f"expected 4 columns, found {len(parts)}")
    q, d = normalize_text(parts[0]), normalize_text(parts[1])
    if not q or not d:
        raise ValueError("empty text after normalization")
    try:
        imp, clk = int(parts[2]), int(parts[3])
    except ValueError:
        raise ValueError("impressions and clicks must be integers") from None
    return ClickRecord(q, d, imp, clk)


def read_click_log(path, max_malformed: float = MAX_MALFORMED_FRACTION) -> ClickLogFile:
    """Parse a click log; repeated (query, doc) rows are summed.

    Malformed rows are collected in ``errors`` as ``(line number, reason)``.
    More than ``max_malformed`` of them raises :class:`DataError`.
    """
    merged: dict[tuple[str, str], list[int]] = {}
    errors: list[tuple[int, str]] = []
    n_rows = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            n_rows += 1
            try:
                rec = _parse_click_row(line)
            except ValueError as exc:
                errors.append((lineno, str(exc)))
                continue
            acc = merged.setdefault((rec.query_id, rec.doc_id), [0, 0])
            acc[0] += rec.impressions
            acc[1] += rec.clicks
    if n_rows and len(errors) / n_rows > max_malformed:
        raise DataError(f"{path}: {len(errors)} of {n_rows} rows malformed", errors)
    records = [ClickRecord(q, d, i, c) for (q, d), (i, c) in merged.items()]
    return ClickLogFile(records, errors)


def write_truth(path, rows: Iterable[tuple[str, str, float]]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for q, d, ctr in rows:
            fh.write(f"{q}\t{d}\t{ctr:.6f}\n")


def read_labeled_pairs(path) -> list[tuple[str, str, float]]:
    """Read ``query, doc, label`` rows (truth tables, labelled eval sets)."""
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise DataError(f"{path}:{lineno}: expected 3 columns", [(lineno, line)])
            try:
                label = float(parts[2])
            except ValueError:
                raise DataError(f"{path}:{lineno}: label is not a number",
                                [(lineno, line)]) from None
            if not np.isfinite(label) or label < 0:
                raise DataError(f"{path}:{lineno}: label must be finite and >= 0",
                                [(lineno, line)])
            rows.append((normalize_text(parts[0]), normalize_text(parts[1]), label))
    return rows


# -- synthetic long-tail generator ---------------------------------------------

@dataclass(frozen=True)
class SyntheticLogSpec:
    """Knobs of the synthetic click log.

    Query visit counts follow a discrete power law P(f) ~ f^-alpha for
    f >= ``min_query_freq``. Each visit shows ``slots_per_visit`` of the
    query's candidate documents, chosen in proportion to document
    popularity. Relevant candidates share latent topics with the query and
    have true CTR ``base_ctr * |topics_q & topics_d| / |topics_q | topics_d|``.
    A ``noise_rate`` share of candidates are topic-disjoint noise pairs: true
    CTR 0, but clicked by accident at ``noise_click_rate``.

    A query seen f times gets ``candidate_growth * log2(f)`` extra candidates
    on top of the uniform ``candidates_per_query`` draw. Topics are drawn
    with probability proportional to rank^-``topic_popularity_exponent``.
    """

    n_queries: int = 10_000
    alpha: float = 2.0
    n_docs: int = 2_000
    n_topics: int = 40
    terms_per_topic: int = 6
    n_filler: int = 30
    candidates_per_query: tuple[int, int] = (2, 6)
    noise_rate: float = 0.3
    noise_click_rate: float = 0.03
    base_ctr: float = 0.3
    slots_per_visit: int = 2
    min_query_freq: int = 1
    max_query_freq: int = 100_000
    doc_popularity_exponent: float = 1.0
    topic_popularity_exponent: float = 0.0
    candidate_growth: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.alpha <= 1:
            raise ValueError("alpha must exceed 1")
        if not 0 <= self.noise_rate < 1:
            raise ValueError("noise_rate must be in [0, 1)")
        if not 0 <= self.noise_click_rate <= 1 or not 0 < self.base_ctr <= 1:
            raise ValueError("click rates must be probabilities")
        lo, hi = self.candidates_per_query
        if not 1 <= lo <= hi:
            raise ValueError("candidates_per_query must satisfy 1 <= lo <= hi")
        if self.n_topics < 2 or self.n_queries < 1 or self.n_docs < 2:
            raise ValueError("need at least 2 topics, 1 query and 2 documents")
        if not 1 <= self.min_query_freq <= self.max_query_freq:
            raise ValueError("query frequency bounds are inconsistent")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["candidates_per_query"] = list(self.candidates_per_query)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticLogSpec":
        d = dict(d)
        if "candidates_per_query" in d:
            d["candidates_per_query"] = tuple(d["candidates_per_query"])
        return cls(**d)


# Log used by the weighting audit: every query is seen often enough that it
# collects clicks, so per-query normalisation is well defined everywhere.
AUDIT_SPEC = SyntheticLogSpec(n_queries=3_000, min_query_freq=20, seed=2024)


@dataclass
class SyntheticLog:
    spec: SyntheticLogSpec
    records: list[ClickRecord]
    truth: list[tuple[str, str, float]]
    query_topics: dict[str, frozenset]
    doc_topics: dict[str, frozenset]
    query_freq: dict[str, int]
    topic_terms: list[list[str]]
    filler_terms: list[str]

    def true_ctr(self) -> dict[tuple[str, str], float]:
        return {(q, d): c for q, d, c in self.truth}

    def write(self, log_path, truth_path) -> None:
        write_click_log(log_path, self.records)
        write_truth(truth_path, self.truth)


_ONSETS = ["b", "c", "d", "f", "g", "h", "j", "k", "l", "m", "n", "p", "r", "s", "t",
           "v", "w", "z", "br", "ch", "dr", "gr", "kl", "pl", "sh", "st", "tr", "th"]
_VOWELS = ["a", "e", "i", "o", "u", "ai", "ea", "io", "ou"]
_CODAS = ["", "", "n", "r", "s", "x", "l", "k", "m"]


def _make_words(rng: np.random.Generator, n: int, taken: set) -> list[str]:
    words = []
    while len(words) < n:
        syl = rng.integers(2, 4)
        w = "".join(_ONSETS[rng.integers(len(_ONSETS))] + _VOWELS[rng.integers(len(_VOWELS))]
                    for _ in range(syl)) + _CODAS[rng.integers(len(_CODAS))]
        if w not in taken:
            taken.add(w)
            words.append(w)
    return words


def _n_topics(rng) -> int:
    return int(rng.choice([1, 2, 3], p=[0.5, 0.35, 0.15]))


def _power_law_counts(rng, n: int, alpha: float, lo: int, hi: int) -> np.ndarray:
    u = 1.0 - rng.random(n)  # (0, 1]
    f = np.floor(lo * u ** (-1.0 / (alpha - 1.0)))
    return np.minimum(f, hi).astype(np.int64)


def generate_synthetic_log(spec: SyntheticLogSpec) -> SyntheticLog:
    """Deterministic (per seed) long-tail click log with a hidden truth table."""
    rng = np.random.default_rng(spec.seed)
    taken: set = set()
    topic_terms = [_make_words(rng, spec.terms_per_topic, taken) for _ in range(spec.n_topics)]
    filler = _make_words(rng, spec.n_filler, taken)

    def compose(topics, per_topic: tuple[int, int], n_fill: tuple[int, int]) -> str:
        words = []
        for t in topics:
            k = rng.integers(per_topic[0], per_topic[1] + 1)
            words.extend(rng.choice(topic_terms[t], size=k, replace=False))
        k = rng.integers(n_fill[0], n_fill[1] + 1)
        words.extend(rng.choice(filler, size=k, replace=False))
        rng.shuffle(words)
        return " ".join(words)

    topic_p = np.arange(1, spec.n_topics + 1, dtype=np.float64) ** -spec.topic_popularity_exponent
    topic_p /= topic_p.sum()

    def draw_topics() -> frozenset:
        return frozenset(int(t) for t in rng.choice(spec.n_topics, _n_topics(rng), replace=False,
                                                     p=topic_p))

    docs: list[str] = []
    doc_topics: dict[str, frozenset] = {}
    while len(docs) < spec.n_docs:
        topics = draw_topics()
        title = compose(sorted(topics), (2, 2), (1, 2))
        if title not in doc_topics:
            doc_topics[title] = topics
            docs.append(title)
    docs_by_topic: dict[int, list[int]] = defaultdict(list)
    for i, d in enumerate(docs):
        for t in doc_topics[d]:
            docs_by_topic[t].append(i)
    popularity = np.arange(1, spec.n_docs + 1, dtype=np.float64) ** -spec.doc_popularity_exponent
    popularity = popularity[rng.permutation(spec.n_docs)]

    queries: list[str] = []
    query_topics: dict[str, frozenset] = {}
    while len(queries) < spec.n_queries:
        topics = draw_topics()
        text = compose(sorted(topics), (1, 2), (0, 1))
        if text not in query_topics:
            query_topics[text] = topics
            queries.append(text)
    freqs = _power_law_counts(rng, spec.n_queries, spec.alpha, spec.min_query_freq,
                              spec.max_query_freq)

    records: list[ClickRecord] = []
    truth: list[tuple[str, str, float]] = []
    lo, hi = spec.candidates_per_query
    for q, f in zip(queries, freqs):
        qt = query_topics[q]
        n_cand = int(rng.integers(lo, hi + 1)) + int(round(spec.candidate_growth * np.log2(f)))
        n_noise = min(int(rng.binomial(n_cand, spec.noise_rate)), n_cand - 1)
        related = sorted({i for t in qt for i in docs_by_topic[t]})
        n_rel = min(n_cand - n_noise, len(related))
        rel = list(rng.choice(related, size=n_rel, replace=False)) if n_rel else []
        noise: list[int] = []
        while len(noise) < n_noise:
            i = int(rng.integers(spec.n_docs))
            if not (doc_topics[docs[i]] & qt) and i not in noise:
                noise.append(i)
        cand = [int(i) for i in rel] + noise
        ctr = np.array([spec.base_ctr * len(doc_topics[docs[i]] & qt) / len(doc_topics[docs[i]] | qt)
                        for i in rel] + [0.0] * len(noise))
        click_p = np.where(ctr > 0, ctr, spec.noise_click_rate)
        share = popularity[cand] / popularity[cand].sum()
        imps = rng.multinomial(int(f) * spec.slots_per_visit, share)
        clicks = rng.binomial(imps, click_p)
        for i, I, c, p in zip(cand, imps, clicks, ctr):
            truth.append((q, docs[i], float(p)))
            if I > 0:
                records.append(ClickRecord(q, docs[i], int(I), int(c)))

    return SyntheticLog(spec, records, truth, query_topics, doc_topics,
                        dict(zip(queries, (int(f) for f in freqs))), topic_terms, filler)


def click_histogram(records: Iterable[ClickRecord]) -> tuple[np.ndarray, np.ndarray]:
    """(click count, number of queries with that many clicks) for clicked queries."""
    per_query: dict[str, int] = defaultdict(int)
    for r in records:
        per_query[r.query_id] += r.clicks
    counts = np.array([c for c in per_query.values() if c > 0])
    values, n = np.unique(counts, return_counts=True)
    return values, n


def loglog_slope(values: np.ndarray, counts: np.ndarray, n_bins: int = 15,
                 min_count: int = 5) -> float:
    """Slope of log(density) on log(value) over logarithmic bins.

    ``values``/``counts`` are a histogram such as :func:`click_histogram`
    returns. Bins holding fewer than ``min_count`` observations are ignored.
    """
    values, counts = np.asarray(values), np.asarray(counts)
    edges = np.unique(np.floor(np.logspace(0, np.log10(values.max() + 1), n_bins)).astype(int))
    binned = np.array([counts[(values >= a) & (values < b)].sum()
                       for a, b in zip(edges[:-1], edges[1:])])
    density = binned / np.diff(edges)
    mid = np.sqrt(edges[:-1] * edges[1:])
    ok = binned >= min_count
    if ok.sum() < 2:
        raise ValueError("too few populated bins to fit a slope")
    return float(np.polyfit(np.log(mid[ok]), np.log(density[ok]), 1)[0])


def generate_synthetic_copurchase(spec: SyntheticLogSpec, edges_per_product: int = 6,
                                  cross_topic_rate: float = 0.1):
    """Products with topic-driven co-purchase edges, for Jaccard experiments.

    Returns ``(titles, graph, product_topics)``; product ids are ``p00000``...
    """
    log = generate_synthetic_log(SyntheticLogSpec(**{**spec.to_dict(), "n_queries": 1,
                                                     "candidates_per_query": (1, 1)}))
    rng = np.random.default_rng(spec.seed + 17)
    titles = {f"p{i:05d}": t for i, t in enumerate(log.doc_topics)}
    ids = list(titles)
    topics = {pid: log.doc_topics[titles[pid]] for pid in ids}
    by_topic: dict[int, list[str]] = defaultdict(list)
    for pid in ids:
        for t in topics[pid]:
            by_topic[t].append(pid)
    edges = set()
    for pid in ids:
        for _ in range(edges_per_product // 2):
            if rng.random() < cross_topic_rate:
                other = ids[rng.integers(len(ids))]
            else:
                t = sorted(topics[pid])[rng.integers(len(topics[pid]))]
                pool = by_topic[t]
                other = pool[rng.integers(len(pool))]
            if other != pid:
                edges.add((min(pid, other), max(pid, other)))
    graph = CoPurchaseGraph.from_edges(sorted(edges), products=ids)
    return titles, graph, topics


# -- splits --------------------------------------------------------------------

@dataclass(frozen=True)
class SplitSpec:
    """``key='both'`` partitions entities at both pair ends; ``'first'`` only
    the first element (e.g. queries), so no pair is ever dropped."""

    train_fraction: float = 0.8
    key: str = "both"

    def __post_init__(self):
        if not 0 < self.train_fraction < 1:
            raise ValueError("train_fraction must be in (0, 1)")
        if self.key not in ("both", "first"):
            raise ValueError("key must be 'both' or 'first'")


class Split(NamedTuple):
    train: list
    eval: list
    n_dropped: int


def split_disjoint(pairs: Sequence, spec: SplitSpec = SplitSpec(), seed: int = 0,
                   endpoints: Callable[[object], tuple[Hashable, Hashable]] = lambda p: (p[0], p[1]),
                   ) -> Split:
    """Entity-disjoint train/eval split of pairs.

    Entities are shuffled and the first ``round(train_fraction * n)`` go to
    train. With ``key='both'`` a pair whose ends straddle the partition is
    dropped and counted.
    """
    if not pairs:
        raise ValueError("nothing to split")
    ends = [endpoints(p) for p in pairs]
    if spec.key == "both":
        entities = sorted({e for ab in ends for e in ab}, key=str)
    else:
        entities = sorted({ab[0] for ab in ends}, key=str)
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(entities))
    n_train = int(round(spec.train_fraction * len(entities)))
    train_set = {entities[i] for i in perm[:n_train]}
    train, evl, dropped = [], [], 0
    for p, (a, b) in zip(pairs, ends):
        if spec.key == "first":
            (train if a in train_set else evl).append(p)
        elif a in train_set and b in train_set:
            train.append(p)
        elif a not in train_set and b not in train_set:
            evl.append(p)
        else:
            dropped += 1
    if not evl:
        raise ValueError("evaluation side is empty after the split")
    return Split(train, evl, dropped)


# -- co-purchase files -----------------------------------------------------------

def read_copurchase(products_path, edges_path) -> tuple[CoPurchaseGraph, dict[str, str], list]:
    """Load products and co-purchase edges.

    Returns ``(graph, titles, report)``; self-loop and malformed edge rows are
    skipped and listed in ``report``. Edges naming unknown products abort.
    """
    titles: dict[str, str] = {}
    with open(products_path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            pid, sep, title = line.partition("\t")
            if not sep:
                raise DataError(f"{products_path}:{lineno}: expected id<TAB>title")
            titles[pid] = normalize_text(title)
    report, dangling, edges = [], [], []
    with open(edges_path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                report.append((lineno, "expected 2 columns"))
                continue
            a, b = parts
            if a == b:
                report.append((lineno, f"self-loop on {a}"))
                continue
            missing = [x for x in (a, b) if x not in titles]
            if missing:
                dangling.append((lineno, f"unknown product id(s) {', '.join(missing)}"))
                continue
            edges.append((a, b))
    if dangling:
        raise DataError(f"{edges_path}: {len(dangling)} edges reference unknown products",
                        dangling)
    return CoPurchaseGraph.from_edges(edges, products=titles), titles, report


def write_copurchase(products_path, edges_path, titles: dict[str, str],
                     graph: CoPurchaseGraph) -> None:
    with open(products_path, "w", encoding="utf-8", newline="\n") as fh:
        for pid, title in titles.items():
            fh.write(f"{pid}\t{title}\n")
    with open(edges_path, "w", encoding="utf-8", newline="\n") as fh:
        for a, b in graph.edges():
            fh.write(f"{a}\t{b}\n")
