"""Command-line entry point: synth, weigh, train, eval, index, retrieve, trace, audit, replay.

Every artifact-producing command writes ``<out>.manifest.json`` next to its
primary output. ``replay`` re-runs a manifest's configuration and checks
that the outputs hash identically.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from dataclasses import asdict, fields
from pathlib import Path
from typing import Callable

import numpy as np

from . import __version__
from . import datakit as D
from . import model as M
from . import weighting as W
from .evalkit import dumps_report
from .experiment import evaluate
from .retrieval import FingerprintMismatch, SemanticIndex, build_index, retrieve_topk, trace_neurons
from .text import TrigramVocabulary
from .trainer import (EmptyDatasetError, NumericalError, Regime, TrainConfig, TrainingPair,
                      build_regime_dataset, dataset_texts, train)

logger = logging.getLogger("wclsm")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}\n{self.format_usage()}")


# -- helpers -------------------------------------------------------------------

def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_text_atomic(path, text: str) -> None:
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    os.replace(tmp, path)


def write_manifest(command: str, argv: list[str] | None, config: dict, inputs: list[str],
                   outputs: list[str], wall_time: float, diagnostics: list[str] = ()) -> str:
    """Manifest for ``outputs[0]``; ``diagnostics`` are produced but not hashed."""
    manifest = {
        "command": command,
        "argv": argv,
        "config": config,
        "seed": config.get("seed"),
        "version": __version__,
        "inputs": {p: sha256_file(p) for p in inputs},
        "outputs": {p: sha256_file(p) for p in outputs},
        "diagnostics": list(diagnostics),
        "wall_time": wall_time,
    }
    path = f"{outputs[0]}.manifest.json"
    _write_text_atomic(path, json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _load_vocab_from_header(header: dict, path) -> TrigramVocabulary:
    if "vocab" not in header:
        raise D.DataError(f"{path}: checkpoint carries no vocabulary")
    return TrigramVocabulary.from_trigrams(header["vocab"])


def _load_model(path):
    params, header = M.load_checkpoint(path)
    return params, _load_vocab_from_header(header, path)


def _sniff_columns(path) -> int:
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                return len(line.rstrip("\r\n").split("\t"))
    return 0


# -- commands ------------------------------------------------------------------
# Each command is (defaults, runner). A runner takes the effective config and
# returns (inputs, outputs, diagnostics); outputs[0] anchors the manifest.

SPEC_FIELDS = {f.name for f in fields(D.SyntheticLogSpec)}


def _synth_defaults() -> dict:
    spec = D.SyntheticLogSpec().to_dict()
    spec.pop("seed")
    return {"kind": "clicks", "spec": spec, "seed": 0, "out": None, "truth": None,
            "edges": None}


def run_synth(cfg: dict) -> tuple[list, list, list]:
    if not cfg["out"]:
        raise UsageError("synth: --out is required")
    spec = D.SyntheticLogSpec.from_dict({**cfg["spec"], "seed": cfg["seed"]})
    out = Path(cfg["out"])
    if cfg["kind"] == "copurchase":
        edges = cfg["edges"] or str(out.with_name("edges.tsv"))
        titles, graph, _ = D.generate_synthetic_copurchase(spec)
        D.write_copurchase(out, edges, titles, graph)
        return [], [str(out), edges], []
    truth = cfg["truth"] or str(out.with_name("truth.tsv"))
    log = D.generate_synthetic_log(spec)
    log.write(out, truth)
    logger.info("wrote %d click records to %s and truth to %s", len(log.records), out, truth)
    return [], [str(out), truth], []


def _weigh_defaults() -> dict:
    return {"strategy": "ctr", "in": None, "edges": None, "out": None}


def run_weigh(cfg: dict) -> tuple[list, list, list]:
    if not cfg["in"] or not cfg["out"]:
        raise UsageError("weigh: --in and --out are required")
    if cfg["strategy"] == "jaccard":
        if not cfg["edges"]:
            raise UsageError("weigh --strategy jaccard needs --in products.tsv --edges edges.tsv")
        graph, titles, report = D.read_copurchase(cfg["in"], cfg["edges"])
        for lineno, why in report:
            logger.warning("%s:%d skipped: %s", cfg["edges"], lineno, why)
        rows = []
        for a, b in graph.edges():
            w = W.weight_jaccard(graph, a, b)
            rows += [(titles[a], titles[b], w), (titles[b], titles[a], w)]
        W.write_weighted_pairs(cfg["out"], rows)
        return [cfg["in"], cfg["edges"]], [cfg["out"]], []
    log = _read_log(cfg["in"])
    weights = W.get_strategy(cfg["strategy"])(log.records)
    W.write_weighted_pairs(cfg["out"], ((r.query_id, r.doc_id, float(w))
                                        for r, w in zip(log.records, weights)))
    return [cfg["in"]], [cfg["out"]], []


def _read_log(path) -> D.ClickLogFile:
    log = D.read_click_log(path)
    for lineno, why in log.errors:
        logger.warning("%s:%d skipped: %s", path, lineno, why)
    return log


def _train_defaults() -> dict:
    tc = asdict(TrainConfig())
    return {**tc, "data": None, "regime": "weighted", "strategy": "ctr",
            "ctr_threshold": None, "out": None, "log": None}


TRAIN_KEYS = {f.name for f in fields(TrainConfig)}


def _training_pairs(cfg: dict) -> list[TrainingPair]:
    path = cfg["data"]
    ncol = _sniff_columns(path)
    if ncol == 4:
        if cfg["strategy"] == "jaccard":
            raise UsageError("the jaccard strategy needs a weighted pairs file from "
                             "'weigh --strategy jaccard'")
        regime = Regime(cfg["regime"], cfg["strategy"], cfg["ctr_threshold"])
        return build_regime_dataset(_read_log(path).records, regime)
    if ncol == 3:
        if cfg["regime"] == "curated":
            raise UsageError("the curated regime needs a 4-column click log")
        rows = W.read_weighted_pairs(path)
        rows = [(D.normalize_text(q), D.normalize_text(d), w) for q, d, w in rows]
        if cfg["regime"] == "unweighted":
            return [TrainingPair(q, d, 1.0) for q, d, _ in rows]
        return [TrainingPair(q, d, w) for q, d, w in rows]
    raise D.DataError(f"{path}: expected a 4-column click log or a 3-column pairs file")


def run_train(cfg: dict) -> tuple[list, list, list]:
    if not cfg["data"] or not cfg["out"]:
        raise UsageError("train: --data and --out are required")
    try:
        config = TrainConfig(**{k: cfg[k] for k in TRAIN_KEYS})
        Regime(cfg["regime"], cfg["strategy"], cfg["ctr_threshold"])
    except (TypeError, ValueError) as exc:
        raise UsageError(f"train: {exc}") from None
    dataset = _training_pairs(cfg)
    vocab = TrigramVocabulary.build(dataset_texts(dataset))
    logger.info("training on %d pairs, %d trigrams", len(dataset), vocab.size)
    params, tlog = train(config, dataset, vocab)
    M.save_checkpoint(cfg["out"], params, vocab.trigrams,
                      extra={"train_config": config.to_dict(), "regime": cfg["regime"],
                             "strategy": cfg["strategy"]})
    log_path = cfg["log"] or f"{cfg['out']}.log.jsonl"
    _write_text_atomic(log_path, tlog.to_jsonl())
    # the training log carries wall times, so it is not part of the replay hash
    return [cfg["data"]], [cfg["out"]], [log_path]


def _eval_defaults() -> dict:
    return {"ckpt": None, "pairs": None, "out": None}


def run_eval(cfg: dict) -> tuple[list, list, list]:
    if not cfg["ckpt"] or not cfg["pairs"]:
        raise UsageError("eval: --ckpt and --pairs are required")
    params, vocab = _load_model(cfg["ckpt"])
    labeled = D.read_labeled_pairs(cfg["pairs"])
    if not labeled:
        raise D.DataError(f"{cfg['pairs']}: no labelled pairs")
    text = dumps_report(evaluate(params, vocab, labeled, params.hyper.window)) + "\n"
    sys.stdout.write(text)
    if cfg["out"]:
        _write_text_atomic(cfg["out"], text)
        return [cfg["ckpt"], cfg["pairs"]], [cfg["out"]], []
    return [cfg["ckpt"], cfg["pairs"]], [], []


def _index_defaults() -> dict:
    return {"ckpt": None, "corpus": None, "out": None}


def _read_corpus(path) -> list[tuple[str, str]]:
    corpus = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            doc_id, sep, text = line.partition("\t")
            if not sep:
                raise D.DataError(f"{path}:{lineno}: expected id<TAB>text")
            corpus.append((doc_id, text))
    return corpus


def run_index(cfg: dict) -> tuple[list, list, list]:
    if not cfg["ckpt"] or not cfg["corpus"] or not cfg["out"]:
        raise UsageError("index: --ckpt, --corpus and --out are required")
    params, vocab = _load_model(cfg["ckpt"])
    corpus = _read_corpus(cfg["corpus"])
    if not corpus:
        raise D.DataError(f"{cfg['corpus']}: corpus is empty")
    build_index(params, vocab, corpus).save(cfg["out"])
    return [cfg["ckpt"], cfg["corpus"]], [cfg["out"]], []


def _retrieve_defaults() -> dict:
    return {"index": None, "ckpt": None, "query": None, "k": 10}


def run_retrieve(cfg: dict) -> tuple[list, list, list]:
    if not cfg["index"] or not cfg["ckpt"] or cfg["query"] is None:
        raise UsageError("retrieve: --index, --ckpt and --query are required")
    if cfg["k"] < 1:
        raise UsageError("retrieve: -k must be >= 1")
    params, vocab = _load_model(cfg["ckpt"])
    index = SemanticIndex.load(cfg["index"])
    for doc_id, score in retrieve_topk(index, params, vocab, cfg["query"], cfg["k"]):
        sys.stdout.write(f"{doc_id}\t{score:.6f}\n")
    return [], [], []


def _trace_defaults() -> dict:
    return {"ckpt": None, "text": None, "n": 10}


def run_trace(cfg: dict) -> tuple[list, list, list]:
    if not cfg["ckpt"] or cfg["text"] is None:
        raise UsageError("trace: --ckpt and --text are required")
    if cfg["n"] < 1:
        raise UsageError("trace: -n must be >= 1")
    params, vocab = _load_model(cfg["ckpt"])
    sys.stdout.write("neuron\tactivation\tposition\tword\n")
    for a in trace_neurons(params, vocab, cfg["text"], cfg["n"]):
        sys.stdout.write(f"{a.neuron}\t{a.activation:.6f}\t{a.position}\t{a.word}\n")
    return [], [], []


def _audit_defaults() -> dict:
    return {"strategy": ["ctr", "nclicks"], "spec": None, "eps_bias": 0.05}


def run_audit(cfg: dict) -> tuple[list, list, list]:
    spec = D.AUDIT_SPEC
    inputs = []
    if cfg["spec"]:
        with open(cfg["spec"], encoding="utf-8") as fh:
            try:
                spec = D.SyntheticLogSpec.from_dict({**D.AUDIT_SPEC.to_dict(), **json.load(fh)})
            except (TypeError, ValueError) as exc:
                raise D.DataError(f"{cfg['spec']}: invalid log spec: {exc}") from None
        inputs.append(cfg["spec"])
    log = D.generate_synthetic_log(spec)
    reports = [W.audit_principles(s, spec, eps_bias=cfg["eps_bias"], log=log)
               for s in cfg["strategy"]]
    sys.stdout.write(W.format_principle_table(reports) + "\n")
    return inputs, [], []


COMMANDS: dict[str, tuple[Callable[[], dict], Callable[[dict], tuple]]] = {
    "synth": (_synth_defaults, run_synth),
    "weigh": (_weigh_defaults, run_weigh),
    "train": (_train_defaults, run_train),
    "eval": (_eval_defaults, run_eval),
    "index": (_index_defaults, run_index),
    "retrieve": (_retrieve_defaults, run_retrieve),
    "trace": (_trace_defaults, run_trace),
    "audit": (_audit_defaults, run_audit),
}


# -- argument parsing ----------------------------------------------------------

def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="JSON", help="config file; flags override it")
    p.add_argument("--show-config", action="store_true",
                   help="print the effective configuration and exit")


def build_parser() -> argparse.ArgumentParser:
    S = argparse.SUPPRESS
    parser = _Parser(prog="wclsm", description="Weighted convolutional semantic matching.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic click log (or co-purchase graph)")
    _common(p)
    p.add_argument("--kind", choices=["clicks", "copurchase"], default=S)
    p.add_argument("--queries", dest="n_queries", type=int, default=S)
    p.add_argument("--alpha", type=float, default=S)
    p.add_argument("--docs", dest="n_docs", type=int, default=S)
    p.add_argument("--topics", dest="n_topics", type=int, default=S)
    p.add_argument("--noise-rate", type=float, default=S)
    p.add_argument("--base-ctr", type=float, default=S)
    p.add_argument("--candidate-growth", type=float, default=S)
    p.add_argument("--spec", metavar="JSON", default=S, help="log spec file")
    p.add_argument("--seed", type=int, default=S)
    p.add_argument("--out", default=S)
    p.add_argument("--truth", default=S, help="truth table path (default: truth.tsv beside --out)")
    p.add_argument("--edges", default=S, help="edge file for --kind copurchase")

    p = sub.add_parser("weigh", help="attach per-pair weights")
    _common(p)
    p.add_argument("--strategy", choices=sorted(W.STRATEGIES) + ["jaccard"], default=S)
    p.add_argument("--in", dest="in", default=S, help="click log, or products.tsv for jaccard")
    p.add_argument("--edges", default=S)
    p.add_argument("--out", default=S)

    p = sub.add_parser("train", help="train the encoder")
    _common(p)
    p.add_argument("--data", default=S, help="4-column click log or 3-column pairs file")
    p.add_argument("--regime", choices=["curated", "unweighted", "weighted"], default=S)
    p.add_argument("--strategy", choices=sorted(W.STRATEGIES) + ["jaccard"], default=S)
    p.add_argument("--ctr-threshold", type=float, default=S)
    p.add_argument("--batch-size", type=int, default=S)
    p.add_argument("--negatives", type=int, default=S)
    p.add_argument("--lr", type=float, default=S)
    p.add_argument("--lr-decay", type=float, default=S)
    p.add_argument("--epochs", type=int, default=S)
    p.add_argument("--gamma", type=float, default=S)
    p.add_argument("--mode", choices=["eq1_weighted", "rank_aware_lambda"], default=S)
    p.add_argument("--reduction", choices=["sum", "mean", "weight_mean"], default=S)
    p.add_argument("--negative-pool", choices=["in_batch", "global"], default=S)
    p.add_argument("--window", type=int, default=S)
    p.add_argument("--conv-dim", type=int, default=S)
    p.add_argument("--sem-dim", type=int, default=S)
    p.add_argument("--max-words", type=int, default=S)
    p.add_argument("--workers", type=int, default=S)
    p.add_argument("--seed", type=int, default=S)
    p.add_argument("--out", default=S)
    p.add_argument("--log", default=S, help="training log path (default: <out>.log.jsonl)")

    p = sub.add_parser("eval", help="metric report on labelled pairs")
    _common(p)
    p.add_argument("--ckpt", default=S)
    p.add_argument("--pairs", default=S)
    p.add_argument("--out", default=S, help="also write the report here")

    p = sub.add_parser("index", help="encode a corpus into a semantic index")
    _common(p)
    p.add_argument("--ckpt", default=S)
    p.add_argument("--corpus", default=S, help="id<TAB>text file")
    p.add_argument("--out", default=S)

    p = sub.add_parser("retrieve", help="exact top-k retrieval")
    _common(p)
    p.add_argument("--index", default=S)
    p.add_argument("--ckpt", default=S)
    p.add_argument("--query", default=S)
    p.add_argument("-k", type=int, default=S)

    p = sub.add_parser("trace", help="map the most active max-pool neurons to words")
    _common(p)
    p.add_argument("--ckpt", default=S)
    p.add_argument("--text", default=S)
    p.add_argument("-n", type=int, default=S)

    p = sub.add_parser("audit", help="check weighting strategies against the principles")
    _common(p)
    p.add_argument("--strategy", action="append", choices=sorted(W.STRATEGIES), default=S)
    p.add_argument("--spec", default=S, help="log spec JSON (fields override the audit log)")
    p.add_argument("--eps-bias", type=float, default=S)

    p = sub.add_parser("replay", help="re-run a manifest and verify output hashes")
    p.add_argument("manifest")
    p.add_argument("--out-dir", help="write outputs here instead of their recorded paths")
    return parser


def _effective_config(command: str, ns: argparse.Namespace) -> dict:
    defaults_fn, _ = COMMANDS[command]
    cfg = defaults_fn()
    if ns.config:
        try:
            with open(ns.config, encoding="utf-8") as fh:
                file_cfg = json.load(fh)
        except json.JSONDecodeError as exc:
            raise D.DataError(f"{ns.config}: {exc}") from None
        _merge(cfg, file_cfg, command)
    flags = {k: v for k, v in vars(ns).items()
             if k not in ("command", "config", "show_config", "verbose")}
    if command == "synth":
        spec_file = flags.pop("spec", None)
        if spec_file:
            with open(spec_file, encoding="utf-8") as fh:
                cfg["spec"].update(json.load(fh))
        for k in list(flags):
            if k in SPEC_FIELDS and k != "seed":
                cfg["spec"][k] = flags.pop(k)
    _merge(cfg, flags, command)
    return cfg


def _merge(cfg: dict, new: dict, command: str) -> None:
    for k, v in new.items():
        if k not in cfg:
            raise UsageError(f"{command}: unknown config key {k!r}")
        if isinstance(cfg[k], dict) and isinstance(v, dict):
            unknown = set(v) - set(cfg[k])
            if unknown:
                raise UsageError(f"{command}: unknown config key(s) {sorted(unknown)}")
            cfg[k].update(v)
        else:
            cfg[k] = v


def execute(command: str, cfg: dict, argv: list[str] | None) -> str | None:
    """Run a command with a resolved config; returns the manifest path, if any."""
    _, runner = COMMANDS[command]
    t0 = time.perf_counter()
    inputs, outputs, diagnostics = runner(cfg)
    if outputs:
        return write_manifest(command, argv, cfg, inputs, outputs,
                              time.perf_counter() - t0, diagnostics)
    return None


def replay(manifest_path, out_dir=None) -> bool:
    """Re-run a manifest; True when every recorded output hashes identically."""
    with open(manifest_path, encoding="utf-8") as fh:
        manifest = json.load(fh)
    command, cfg = manifest["command"], dict(manifest["config"])
    if command not in COMMANDS:
        raise D.DataError(f"{manifest_path}: unknown command {command!r}")
    for path, digest in manifest["inputs"].items():
        if sha256_file(path) != digest:
            raise D.DataError(f"{path}: input changed since the manifest was written")
    recorded = list(manifest["outputs"])
    mapping = {p: p for p in recorded}
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        mapping = {p: os.path.join(out_dir, os.path.basename(p)) for p in recorded}
        for key in ("out", "truth", "edges", "log"):
            v = cfg.get(key)
            if isinstance(v, str):
                cfg[key] = mapping.get(v, os.path.join(out_dir, os.path.basename(v)))
        if command == "synth" and cfg.get("truth") is None and cfg.get("kind") == "clicks":
            cfg["truth"] = mapping[recorded[1]]
        if command == "synth" and cfg.get("edges") is None and cfg.get("kind") == "copurchase":
            cfg["edges"] = mapping[recorded[1]]
    execute(command, cfg, ["replay", os.fspath(manifest_path)])
    ok = True
    for path, digest in manifest["outputs"].items():
        new = sha256_file(mapping[path])
        same = new == digest
        ok &= same
        sys.stdout.write(f"{'identical' if same else 'DIFFERS'}\t{mapping[path]}\n")
    return ok


def run(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        ns = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        if ns.command is None:
            raise UsageError(build_parser().format_usage())
        if ns.command == "replay":
            return EXIT_OK if replay(ns.manifest, ns.out_dir) else EXIT_DATA
        cfg = _effective_config(ns.command, ns)
        if ns.show_config:
            sys.stdout.write(json.dumps(cfg, indent=2, sort_keys=True) + "\n")
            return EXIT_OK
        execute(ns.command, cfg, argv)
        return EXIT_OK
    except UsageError as exc:
        sys.stderr.write(f"{exc}\n")
        return EXIT_USAGE
    except NumericalError as exc:
        sys.stderr.write(f"numerical failure: {exc}\n")
        return EXIT_NUMERICAL
    except (D.DataError, EmptyDatasetError, FingerprintMismatch, OSError, ValueError,
            KeyError) as exc:
        sys.stderr.write(f"data error: {exc}\n")
        if isinstance(exc, D.DataError):
            for item in exc.report[:20]:
                sys.stderr.write(f"  {item}\n")
        return EXIT_DATA


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
