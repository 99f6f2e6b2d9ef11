"""Train on a small synthetic log, index the documents, retrieve and trace neurons."""

import logging

from wclsm.datakit import SyntheticLogSpec, generate_synthetic_log
from wclsm.experiment import evaluate, split_log
from wclsm.retrieval import build_index, retrieve_topk, trace_neurons
from wclsm.text import TrigramVocabulary
from wclsm.trainer import Regime, TrainConfig, build_regime_dataset, dataset_texts, train

logging.basicConfig(level=logging.INFO, format="%(message)s")

log = generate_synthetic_log(SyntheticLogSpec(n_queries=3_000, seed=5))
train_records, eval_truth = split_log(log, seed=5)
pairs = build_regime_dataset(train_records, Regime("weighted", "ctr"))
vocab = TrigramVocabulary.build(dataset_texts(pairs))

config = TrainConfig(lr=1.0, epochs=5, gamma=10.0, reduction="weight_mean",
                     conv_dim=64, sem_dim=32, seed=0)
params, tlog = train(config, pairs, vocab)
print("final epoch:", tlog.epochs[-1])
print("held-out:", evaluate(params, vocab, eval_truth)["ndcg"])

# Exact cosine retrieval over every document title.
docs = sorted(log.doc_topics)
index = build_index(params, vocab, [(f"d{i}", t) for i, t in enumerate(docs)])
query = eval_truth[0][0]
print("query:", query)
for doc_id, score in retrieve_topk(index, params, vocab, query, k=5):
    print(f"  {score:+.3f}  {docs[int(doc_id[1:])]}")

# Which words win the strongest max-pool neurons?
for a in trace_neurons(params, vocab, query, n=5):
    print(f"  neuron {a.neuron:3d}  {a.activation:+.3f}  {a.word}")
