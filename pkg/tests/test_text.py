import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wclsm.text import (TrigramVocabulary, hash_sequence, hash_text, normalize_and_tokenize,
                        word_to_trigrams)


class TestTokenize:
    @pytest.mark.parametrize("text, expected", [
        ("Comfort Control HARNESS", ["comfort", "control", "harness"]),
        ("gt500 super-snake!!", ["gt500", "supersnake"]),
        ("", []),
        ("  --  !! ", []),
        ("tab\tand\nnewline", ["tab", "and", "newline"]),
    ])
    def test_examples(self, text, expected):
        assert normalize_and_tokenize(text) == expected

    @given(st.text())
    @settings(max_examples=300)
    def test_idempotent(self, text):
        toks = normalize_and_tokenize(text)
        assert normalize_and_tokenize(" ".join(toks)) == toks

    @given(st.text())
    def test_token_invariants(self, text):
        for tok in normalize_and_tokenize(text):
            assert tok
            assert tok == tok.lower()
            assert all(ch.isalnum() for ch in tok)


class TestTrigrams:
    def test_cat(self):
        assert word_to_trigrams("cat") == ["#ca", "cat", "at#"]

    def test_single_letter(self):
        assert word_to_trigrams("a") == ["#a#"]

    @given(st.text(alphabet="abcdefgh0123", min_size=1, max_size=30))
    def test_length_equals_word_length(self, word):
        assert len(word_to_trigrams(word)) == len(word)

    def test_mustang(self):
        assert len(word_to_trigrams("mustang")) == 7

    def test_empty_word_rejected(self):
        with pytest.raises(ValueError):
            word_to_trigrams("")


class TestVocabulary:
    def test_bijection_and_sorted(self):
        v = TrigramVocabulary.build(["the cat sat", "a dog"])
        assert list(v.trigrams) == sorted(v.trigrams)
        assert sorted(v.index.values()) == list(range(v.size))

    def test_deterministic(self):
        a = TrigramVocabulary.build(["b a", "c"])
        b = TrigramVocabulary.build(["c", "b a", "c"])
        assert a.trigrams == b.trigrams

    def test_bad_indices_rejected(self):
        with pytest.raises(ValueError):
            TrigramVocabulary({"abc": 0, "bcd": 2})

    def test_save_load_roundtrip(self, tmp_path):
        v = TrigramVocabulary.build(["hello world", "gt500"])
        v.save(tmp_path / "v.tsv")
        lines = (tmp_path / "v.tsv").read_text().splitlines()
        assert lines[0] == f"{v.trigrams[0]}\t0"
        assert TrigramVocabulary.load(tmp_path / "v.tsv").trigrams == v.trigrams


class TestHashSequence:
    def test_single_word_padding(self):
        v = TrigramVocabulary.build(["cat"])
        h = hash_text("cat", v, window=3)
        assert h.n_positions == 1
        row = h.windows.toarray()[0]
        V = v.size
        assert np.all(row[:V] == 0) and np.all(row[2 * V:] == 0)
        np.testing.assert_array_equal(row[V:2 * V], h.word_vectors.toarray()[0])

    def test_identical_words(self):
        v = TrigramVocabulary.build(["aa"])
        h = hash_text("aa aa", v)
        wv = h.word_vectors.toarray()
        np.testing.assert_array_equal(wv[0], wv[1])

    def test_count_preservation(self):
        v = TrigramVocabulary.build(["cat"])
        assert hash_text("cat", v).word_vectors.sum() == 3

    def test_multiplicity(self):
        # "#aaaa#" has trigrams #aa, aaa, aaa, aa#
        v = TrigramVocabulary.build(["aaaa"])
        wv = hash_text("aaaa", v).word_vectors.toarray()[0]
        assert wv[v.index["aaa"]] == 2

    @given(st.lists(st.text(alphabet="abcxyz9", min_size=1, max_size=8), min_size=1, max_size=6))
    def test_entry_sum_equals_length(self, words):
        v = TrigramVocabulary.build([" ".join(words)])
        h = hash_sequence(words, v, max_words=None)
        np.testing.assert_array_equal(np.asarray(h.word_vectors.sum(axis=1)).ravel(),
                                      [len(w) for w in words])

    def test_window_layout(self):
        v = TrigramVocabulary.build(["ab cd ef gh"])
        h = hash_text("ab cd ef gh", v)
        wv = h.word_vectors.toarray()
        W = h.windows.toarray()
        V = v.size
        assert W.shape == (4, 3 * V)
        for t in range(4):
            for slot in range(3):
                pos = t - 1 + slot
                expect = wv[pos] if 0 <= pos < 4 else np.zeros(V)
                np.testing.assert_array_equal(W[t, slot * V:(slot + 1) * V], expect)

    def test_position_equivariance(self):
        # swapping words far enough apart swaps the windows centred on them
        words = ["aa", "bb", "cc", "dd", "ee", "ff", "gg"]
        v = TrigramVocabulary.build([" ".join(words)])
        h1 = hash_sequence(words, v).windows.toarray()
        sw = list(words)
        sw[0], sw[1], sw[2], sw[4], sw[5], sw[6] = words[4], words[5], words[6], words[0], words[1], words[2]
        h2 = hash_sequence(sw, v).windows.toarray()
        np.testing.assert_array_equal(h1[1], h2[5])
        np.testing.assert_array_equal(h1[5], h2[1])

    def test_unknown_trigrams_dropped(self):
        v = TrigramVocabulary.build(["cat"])
        h = hash_text("cat zebra", v)
        assert h.windows.indices.max() < 3 * v.size
        assert h.word_vectors.toarray()[1].sum() == 0

    def test_empty_text_gives_one_zero_window(self):
        v = TrigramVocabulary.build(["cat"])
        h = hash_text("!!", v)
        assert h.n_positions == 1 and h.windows.nnz == 0

    def test_truncation(self):
        v = TrigramVocabulary.build(["w"])
        assert hash_text(" ".join(["w"] * 30), v, max_words=20).n_positions == 20

    @pytest.mark.parametrize("window", [0, 2, 4, -1])
    def test_even_or_nonpositive_window_rejected(self, window):
        v = TrigramVocabulary.build(["cat"])
        with pytest.raises(ValueError):
            hash_text("cat", v, window=window)

    def test_empty_vocab_rejected(self):
        with pytest.raises(ValueError):
            hash_text("cat", TrigramVocabulary.from_trigrams([]))
