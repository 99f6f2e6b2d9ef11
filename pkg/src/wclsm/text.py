"""Letter-trigram word hashing and contextual window construction.

Text is whitespace tokenized, lowercased and stripped to alphanumerics.
Each word is wrapped in ``#`` boundary markers and broken into letter
trigrams; a word becomes a sparse count vector over a corpus-built
trigram vocabulary, and every word position yields one window vector made
of the word vectors around it (zero vectors past the sequence edges).
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np
import scipy.sparse as sp

BOUNDARY = "#"
DEFAULT_WINDOW = 3
DEFAULT_MAX_WORDS = 20


def normalize_and_tokenize(text: str) -> list[str]:
    """Split on whitespace, lowercase, keep alphanumeric characters only.

    Tokens that become empty after stripping are dropped. No stemming.

    >>> normalize_and_tokenize("gt500 super-snake!!")
    ['gt500', 'supersnake']
    """
    tokens = []
    for raw in text.split():
        tok = "".join(ch for ch in raw.lower() if ch.isalnum())
        if tok:
            tokens.append(tok)
    return tokens


def word_to_trigrams(word: str) -> list[str]:
    """Letter trigrams of ``#word#`` in order; a word of length L gives L."""
    if not word:
        raise ValueError("word must be non-empty")
    marked = f"{BOUNDARY}{word}{BOUNDARY}"
    return [marked[i:i + 3] for i in range(len(marked) - 2)]


@dataclass(frozen=True)
class TrigramVocabulary:
    """Bijection between letter trigrams and ``[0, size)``."""

    index: Mapping[str, int]
    trigrams: tuple[str, ...] = field(init=False, repr=False)

    def __post_init__(self):
        inv = sorted(self.index.items(), key=lambda kv: kv[1])
        if [i for _, i in inv] != list(range(len(inv))):
            raise ValueError("vocabulary indices must be exactly 0..size-1")
        object.__setattr__(self, "trigrams", tuple(t for t, _ in inv))

    @property
    def size(self) -> int:
        return len(self.trigrams)

    def __len__(self) -> int:
        return self.size

    def __contains__(self, trigram: str) -> bool:
        return trigram in self.index

    @classmethod
    def from_trigrams(cls, trigrams: Iterable[str]) -> "TrigramVocabulary":
        return cls({t: i for i, t in enumerate(trigrams)})

    @classmethod
    def build(cls, texts: Iterable[str]) -> "TrigramVocabulary":
        """Collect every trigram seen in ``texts``; indices follow sorted order."""
        seen = set()
        for text in texts:
            for tok in normalize_and_tokenize(text):
                seen.update(word_to_trigrams(tok))
        return cls.from_trigrams(sorted(seen))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for i, tri in enumerate(self.trigrams):
                fh.write(f"{tri}\t{i}\n")

    @classmethod
    def load(cls, path) -> "TrigramVocabulary":
        index = {}
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.rstrip("\n")
                if not line:
                    continue
                tri, _, idx = line.partition("\t")
                if not idx:
                    raise ValueError(f"{path}:{lineno}: expected trigram<TAB>index")
                index[tri] = int(idx)
        return cls(index)


@dataclass(frozen=True)
class HashedSequence:
    """Sparse word vectors and the per-position window matrix.

    ``windows`` is a CSR matrix of shape ``(n_positions, window * vocab_size)``;
    row ``t`` concatenates the word vectors at ``t - window//2 .. t + window//2``.
    """

    tokens: tuple[str, ...]
    word_vectors: sp.csr_matrix
    windows: sp.csr_matrix
    window: int
    vocab_size: int

    @property
    def n_positions(self) -> int:
        return self.windows.shape[0]


def word_vector_counts(word: str, vocab: TrigramVocabulary) -> Counter:
    return Counter(vocab.index[t] for t in word_to_trigrams(word) if t in vocab.index)


def hash_sequence(tokens: Iterable[str], vocab: TrigramVocabulary,
                  window: int = DEFAULT_WINDOW,
                  max_words: int | None = DEFAULT_MAX_WORDS) -> HashedSequence:
    """Map a token sequence to its sparse contextual window representation.

    Out-of-vocabulary trigrams are dropped. Sequences longer than
    ``max_words`` are truncated. An empty sequence still produces a single
    all-zero window so max-pooling stays defined.
    """
    if window < 1 or window % 2 == 0:
        raise ValueError(f"window must be a positive odd integer, got {window}")
    if vocab.size == 0:
        raise ValueError("vocabulary is empty")
    tokens = tuple(tokens)
    if max_words is not None:
        tokens = tokens[:max_words]
    V = vocab.size
    n_words = len(tokens)

    counts = [word_vector_counts(w, vocab) for w in tokens]
    indptr = [0]
    indices: list[int] = []
    data: list[float] = []
    for cnt in counts:
        for idx in sorted(cnt):
            indices.append(idx)
            data.append(float(cnt[idx]))
        indptr.append(len(indices))
    word_vectors = sp.csr_matrix(
        (np.array(data, dtype=np.float64), np.array(indices, dtype=np.int64),
         np.array(indptr, dtype=np.int64)), shape=(n_words, V))

    half = window // 2
    w_indptr = [0]
    w_indices: list[int] = []
    w_data: list[float] = []
    for t in range(max(1, n_words)):
        for slot in range(window):
            pos = t - half + slot
            if 0 <= pos < n_words:
                cnt = counts[pos]
                for idx in sorted(cnt):
                    w_indices.append(slot * V + idx)
                    w_data.append(float(cnt[idx]))
        w_indptr.append(len(w_indices))
    windows = sp.csr_matrix(
        (np.array(w_data, dtype=np.float64), np.array(w_indices, dtype=np.int64),
         np.array(w_indptr, dtype=np.int64)), shape=(max(1, n_words), window * V))
    return HashedSequence(tokens, word_vectors, windows, window, V)


def hash_text(text: str, vocab: TrigramVocabulary, window: int = DEFAULT_WINDOW,
              max_words: int | None = DEFAULT_MAX_WORDS) -> HashedSequence:
    return hash_sequence(normalize_and_tokenize(text), vocab, window, max_words)
