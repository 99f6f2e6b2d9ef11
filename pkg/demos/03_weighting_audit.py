"""Click-based pair weights and the four-principle audit."""

from wclsm import weighting as W
from wclsm.datakit import SyntheticLogSpec, click_histogram, generate_synthetic_log, loglog_slope

# A synthetic log: power-law query traffic, topic-driven relevance, accidental clicks.
log = generate_synthetic_log(SyntheticLogSpec(n_queries=2_000, seed=3))
print(len(log.records), "records;", log.records[0])

# Query visit counts follow the configured power law.
values, counts = click_histogram(log.records)
print("log-log slope %.2f" % loglog_slope(values, counts))

# Per-record weights under each strategy.
recs = log.records[:5]
for name in ("ctr", "nclicks", "constant"):
    print(name, W.get_strategy(name)(recs).round(3))

# The audit probes each strategy on a dedicated log; CTR satisfies all four.
reports = [W.audit_principles(name) for name in ("ctr", "nclicks", "constant")]
print(W.format_principle_table(reports))

# Co-purchase pairs are weighted by neighbourhood overlap instead.
g = W.CoPurchaseGraph.from_edges([("a", "b"), ("a", "c"), ("b", "c"), ("c", "d")])
print(W.weight_jaccard(g, "a", "b"), W.weight_jaccard(g, "a", "d"))
