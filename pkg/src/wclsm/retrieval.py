"""Exact cosine retrieval over encoded documents, and max-pool neuron tracing."""

from __future__ import annotations

import json
import os
import struct
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import model as M
from .text import DEFAULT_MAX_WORDS, TrigramVocabulary, hash_text

INDEX_MAGIC = b"WCLSMIX\x00"
INDEX_VERSION = 1


class FingerprintMismatch(ValueError):
    pass


@dataclass(frozen=True)
class SemanticIndex:
    """Document ids, their semantic vectors (one row each) and the encoder fingerprint."""

    doc_ids: tuple[str, ...]
    matrix: np.ndarray
    fingerprint: str

    def __post_init__(self):
        if self.matrix.ndim != 2 or self.matrix.shape[0] != len(self.doc_ids):
            raise ValueError(f"matrix has shape {self.matrix.shape} for {len(self.doc_ids)} ids")
        if len(set(self.doc_ids)) != len(self.doc_ids):
            raise ValueError("duplicate document ids")

    def __len__(self) -> int:
        return len(self.doc_ids)

    def save(self, path) -> None:
        ids = json.dumps(list(self.doc_ids), ensure_ascii=False).encode("utf-8")
        header = {"format_version": INDEX_VERSION, "doc_count": len(self.doc_ids),
                  "sem_dim": int(self.matrix.shape[1]), "fingerprint": self.fingerprint,
                  "dtype": "<f4", "id_table_bytes": len(ids)}
        blob = json.dumps(header, sort_keys=True).encode("utf-8")
        tmp = f"{os.fspath(path)}.tmp"
        with open(tmp, "wb") as fh:
            fh.write(INDEX_MAGIC)
            fh.write(struct.pack("<I", len(blob)))
            fh.write(blob)
            fh.write(np.ascontiguousarray(self.matrix, dtype="<f4").tobytes())
            fh.write(ids)
        os.replace(tmp, path)

    @classmethod
    def load(cls, path) -> "SemanticIndex":
        with open(path, "rb") as fh:
            raw = fh.read()
        if not raw.startswith(INDEX_MAGIC):
            raise ValueError(f"{path}: not an index file (bad magic)")
        pos = len(INDEX_MAGIC)
        (hlen,) = struct.unpack_from("<I", raw, pos)
        pos += 4
        header = json.loads(raw[pos:pos + hlen].decode("utf-8"))
        pos += hlen
        if header.get("format_version") != INDEX_VERSION:
            raise ValueError(f"{path}: unsupported index version {header.get('format_version')}")
        n, d = header["doc_count"], header["sem_dim"]
        matrix = np.frombuffer(raw, dtype="<f4", count=n * d, offset=pos).reshape(n, d)
        pos += 4 * n * d
        ids = json.loads(raw[pos:pos + header["id_table_bytes"]].decode("utf-8"))
        if pos + header["id_table_bytes"] != len(raw):
            raise ValueError(f"{path}: trailing bytes after id table")
        return cls(tuple(ids), matrix.astype(np.float64), header["fingerprint"])


def encode_texts(params: M.ModelParams, vocab: TrigramVocabulary, texts: Sequence[str],
                 max_words: int | None = DEFAULT_MAX_WORDS) -> np.ndarray:
    seqs = [hash_text(t, vocab, params.hyper.window, max_words) for t in texts]
    vecs, _ = M.encode(params, seqs)
    return vecs


def build_index(params: M.ModelParams, vocab: TrigramVocabulary,
                corpus: Sequence[tuple[str, str]],
                max_words: int | None = DEFAULT_MAX_WORDS) -> SemanticIndex:
    """Encode ``(doc_id, text)`` pairs into an index.

    Rows are computed independently of each other, so re-encoding one
    document alone reproduces its row bit for bit.
    """
    if not corpus:
        raise ValueError("cannot index an empty corpus")
    if vocab.size != params.hyper.vocab_size:
        raise ValueError(f"vocabulary has {vocab.size} trigrams, model expects "
                         f"{params.hyper.vocab_size}")
    ids = tuple(str(i) for i, _ in corpus)
    matrix = encode_texts(params, vocab, [t for _, t in corpus], max_words)
    return SemanticIndex(ids, matrix, params.fingerprint())


def rank_by_score(ids: Sequence[str], scores: np.ndarray) -> np.ndarray:
    """Order indices by descending score, ties by ascending id."""
    id_rank = np.argsort(np.argsort(np.asarray(ids, dtype=object), kind="stable"), kind="stable")
    return np.lexsort((id_rank, -np.asarray(scores)))


def retrieve_topk(index: SemanticIndex, params: M.ModelParams, vocab: TrigramVocabulary,
                  query: str, k: int = 10,
                  max_words: int | None = DEFAULT_MAX_WORDS) -> list[tuple[str, float]]:
    """Exact top-k by cosine. ``k`` larger than the index returns everything."""
    if k < 1:
        raise ValueError("k must be >= 1")
    fp = params.fingerprint()
    if fp != index.fingerprint:
        raise FingerprintMismatch(f"index was built with checkpoint {index.fingerprint[:12]}, "
                                  f"serving checkpoint is {fp[:12]}")
    q = encode_texts(params, vocab, [query], max_words)
    scores = M.cosine_rows(np.broadcast_to(q, index.matrix.shape), index.matrix)
    order = rank_by_score(index.doc_ids, scores)[:k]
    return [(index.doc_ids[i], float(scores[i])) for i in order]


@dataclass(frozen=True)
class NeuronActivation:
    neuron: int
    activation: float
    position: int
    word: str


def trace_neurons(params: M.ModelParams, vocab: TrigramVocabulary, text: str, n: int = 10,
                  max_words: int | None = DEFAULT_MAX_WORDS) -> list[NeuronActivation]:
    """The ``n`` max-pool neurons with the largest |activation|, mapped to words.

    Each neuron is attributed to the centre word of the window that won its
    max-pool. tanh activations can be negative, hence the absolute value.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    conv_dim = params.hyper.conv_dim
    if n > conv_dim:
        warnings.warn(f"n={n} exceeds conv_dim={conv_dim}; clipping", stacklevel=2)
        n = conv_dim
    seq = hash_text(text, vocab, params.hyper.window, max_words)
    _, trace = M.forward(params, seq)
    pooled = trace.pooled
    order = np.lexsort((np.arange(conv_dim), -np.abs(pooled)))[:n]
    out = []
    for j in order:
        pos = int(trace.argmax[j])
        word = seq.tokens[pos] if seq.tokens else ""
        out.append(NeuronActivation(int(j), float(pooled[j]), pos, word))
    return out
