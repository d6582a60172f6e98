import numpy as np
import pytest

from unisum import corpus
from unisum.corpus import (PAD, RESERVED, START, STOP, UNK, Article, Vocab,
                           build_vocab, deindex, index_article, load_labels,
                           load_pairs, pair_from_text, reference_ids,
                           save_labels, save_pairs, segment, tokenize,
                           truncate)
from unisum.errors import ConfigError, DataError


class TestTokenize:
    def test_lowercase_and_terminal_detach(self):
        assert tokenize("McDonald's says it.") == ["mcdonald's", "says", "it", "."]

    def test_empty(self):
        assert tokenize("") == []

    def test_whitespace_collapse(self):
        assert tokenize("a  b") == ["a", "b"]

    def test_detaches_leading_and_trailing_punctuation(self):
        assert tokenize('"stop!"') == ['"', "stop", "!", '"']

    def test_keeps_internal_punctuation(self):
        assert tokenize("3.5 u.s.") == ["3.5", "u.s", "."]


class TestSegment:
    def test_two_terminated_sentences(self):
        art = segment(["a", ".", "b", "?"])
        assert art.sentence_spans == [(0, 2), (2, 4)]

    def test_unterminated_fragment_is_last_sentence(self):
        art = segment(["a", "b"])
        assert art.sentence_spans == [(0, 2)]

    def test_bare_terminator_forms_own_sentence(self):
        art = segment(["x", ".", "."])
        assert art.sentence_spans == [(0, 2), (2, 3)]

    def test_word_to_sentence_covers_all_words(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            tokens = []
            for _ in range(int(rng.integers(1, 20))):
                tokens.append("w" if rng.random() < 0.7 else ".")
            art = segment(tokens)
            spans = art.sentence_spans
            assert spans[0][0] == 0
            assert spans[-1][1] == len(tokens)
            for (a, b), (c, _) in zip(spans, spans[1:]):
                assert b == c
            for m in range(len(tokens)):
                n = art.word_to_sentence[m]
                lo, hi = spans[n]
                assert lo <= m < hi

    def test_empty_tokens_rejected(self):
        with pytest.raises(DataError):
            segment([])


class TestTruncate:
    def test_sentence_count_cap(self):
        art = segment(tokenize("a . b . c . d ."))
        cut = truncate(art, max_sentences=2, max_sentence_tokens=50,
                       max_total_tokens=400)
        assert cut.num_sentences == 2
        assert cut.tokens == ["a", ".", "b", "."]

    def test_sentence_token_cap(self):
        art = segment(tokenize("p q r s t ."))
        cut = truncate(art, max_sentences=50, max_sentence_tokens=3,
                       max_total_tokens=400)
        assert cut.tokens == ["p", "q", "r"]

    def test_total_token_cap(self):
        art = segment(tokenize("a b . c d . e f ."))
        cut = truncate(art, max_sentences=50, max_sentence_tokens=50,
                       max_total_tokens=4)
        assert cut.tokens == ["a", "b", ".", "c"]
        assert cut.num_sentences == 2

    def test_no_caps_is_identity(self):
        art = segment(tokenize("a b . c ."))
        cut = truncate(art, 50, 50, 400)
        assert cut.tokens == art.tokens
        assert cut.sentence_spans == art.sentence_spans


class TestVocab:
    def test_contains_reserved_and_corpus_words(self):
        vocab = build_vocab([["a", "a", "b"]], 6)
        assert vocab.size == 6
        for i, word in enumerate(RESERVED):
            assert vocab.id_to_word[i] == word
        assert vocab.lookup("a") == 4
        assert vocab.lookup("b") == 5

    def test_lexicographic_tie_break(self):
        vocab = build_vocab([["b", "a"]], 5)
        assert vocab.lookup("a") == 4
        assert vocab.lookup("b") == UNK

    def test_frequency_order_wins_over_spelling(self):
        vocab = build_vocab([["z", "z", "a"]], 5)
        assert vocab.lookup("z") == 4

    def test_too_small_size_rejected(self):
        with pytest.raises(ConfigError):
            build_vocab([["a"]], len(RESERVED))

    def test_determinism(self):
        seqs = [["a", "b", "c"], ["b", "c", "d"]]
        v1 = build_vocab(seqs, 7)
        v2 = build_vocab(seqs, 7)
        assert v1.word_to_id == v2.word_to_id

    def test_round_trip_through_file(self, tmp_path):
        vocab = build_vocab([["a", "a", "b"]], 6)
        path = tmp_path / "vocab.tsv"
        corpus.save_vocab(vocab, path)
        loaded = corpus.load_vocab(path)
        assert loaded.word_to_id == vocab.word_to_id
        assert loaded.counts == vocab.counts


class TestIndexing:
    def setup_method(self):
        self.vocab = build_vocab([["a", "b", "."]], 7)

    def test_all_in_vocab(self):
        art = segment(["a", "b", "."])
        idx = index_article(art, self.vocab)
        assert idx.oov_list == []
        assert np.array_equal(idx.base_ids, idx.extended_ids)

    def test_single_oov_gets_first_extended_id(self):
        art = segment(["a", "zyx", "."])
        idx = index_article(art, self.vocab)
        assert idx.oov_list == ["zyx"]
        assert idx.base_ids[1] == UNK
        assert idx.extended_ids[1] == self.vocab.size

    def test_repeated_oov_shares_id(self):
        art = segment(["zyx", "b", "zyx", "."])
        idx = index_article(art, self.vocab)
        assert idx.oov_list == ["zyx"]
        assert idx.extended_ids[0] == idx.extended_ids[2] == self.vocab.size

    def test_deindex_round_trip(self):
        art = segment(["a", "zyx", "qq", "zyx", "."])
        idx = index_article(art, self.vocab)
        assert deindex(idx.extended_ids, self.vocab, idx.oov_list) == art.tokens

    def test_reference_ids_use_article_oov_ids(self):
        art = segment(["a", "zyx", "."])
        idx = index_article(art, self.vocab)
        ids = reference_ids(["zyx", "b", "unseen"], self.vocab, idx.oov_list)
        assert list(ids) == [self.vocab.size, self.vocab.lookup("b"), UNK]


class TestPairsIO:
    def test_round_trip(self, tmp_path):
        path = tmp_path / "pairs.jsonl"
        save_pairs([("A b. C d.", "b d")], path)
        pairs = load_pairs(path)
        assert len(pairs) == 1
        assert pairs[0].article.tokens == ["a", "b", ".", "c", "d", "."]
        assert pairs[0].reference == ["b", "d"]

    def test_missing_fields_rejected(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"article": "a"}\n')
        with pytest.raises(DataError):
            load_pairs(path)

    def test_invalid_json_rejected(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text("not json\n")
        with pytest.raises(DataError):
            load_pairs(path)

    def test_empty_summary_rejected(self):
        with pytest.raises(DataError):
            pair_from_text("a .", "")


class TestLabelsIO:
    def test_round_trip(self, tmp_path):
        path = tmp_path / "labels.jsonl"
        save_labels([[0, 1], [1, 0, 0]], path)
        assert load_labels(path) == [[0, 1], [1, 0, 0]]

    def test_non_binary_rejected(self, tmp_path):
        path = tmp_path / "labels.jsonl"
        path.write_text('{"labels": [0, 2]}\n')
        with pytest.raises(DataError):
            load_labels(path)


class TestReservedIds:
    def test_fixed_assignments(self):
        assert (PAD, UNK, START, STOP) == (0, 1, 2, 3)
