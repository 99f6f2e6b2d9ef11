"""Letter-trigram word hashing and the sparse window matrix fed to the convolution."""

import numpy as np

from wclsm.text import TrigramVocabulary, hash_text, normalize_and_tokenize, word_to_trigrams

# Every word is wrapped in boundary marks before slicing into trigrams.
print(word_to_trigrams("shoes"))          # ['#sh', 'sho', 'hoe', 'oes', 'es#']

# Case, punctuation and repeated whitespace are normalised away first.
print(normalize_and_tokenize("  Running SHOES, for men!  "))

# A vocabulary is a bijection between trigrams and column indices.
corpus = ["running shoes for men", "cheap flights to paris", "organic dog food"]
vocab = TrigramVocabulary.build(corpus)
print(vocab.size, "trigrams")

# hash_text turns a text into one sparse row per word position; each row
# concatenates the word vectors of a 3-word window, zero-padded at the edges.
seq = hash_text("running shoes", vocab)
print(seq.tokens, seq.windows.shape)
dense = seq.windows.toarray()
print("non-zeros per window:", (dense != 0).sum(axis=1))

# Unknown trigrams are dropped, so an unseen word contributes an empty vector.
print(hash_text("zzzz shoes", vocab).word_vectors.getnnz(axis=1))

# The slot layout: columns [0, V) hold the left word, [V, 2V) the centre word.
V = vocab.size
centre = dense[0, V:2 * V]
print(sorted(vocab.trigrams[i] for i in np.flatnonzero(centre)))
