"""Text data model: tokenization, sentence segmentation, vocabulary, and
OOV-extended indexing.

Corpus files are JSON lines, one {"article": ..., "summary": ...} object per
line. Vocabulary files are "word<TAB>count" lines in descending frequency.
"""

import json
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError

PAD, UNK, START, STOP = 0, 1, 2, 3
RESERVED = ("<pad>", "<unk>", "<start>", "<stop>")
_EDGE_PUNCT = set(".,!?;:\"'()[]{}")
_TERMINALS = {".", "!", "?"}


def tokenize(text):
    """Lowercase and split on whitespace, detaching edge punctuation."""
    tokens = []
    for raw in text.lower().split():
        head = []
        tail = []
        while raw and raw[0] in _EDGE_PUNCT:
            head.append(raw[0])
            raw = raw[1:]
        while raw and raw[-1] in _EDGE_PUNCT:
            tail.append(raw[-1])
            raw = raw[:-1]
        tokens.extend(head)
        if raw:
            tokens.append(raw)
        tokens.extend(reversed(tail))
    return tokens


@dataclass
class Article:
    """A tokenized document with sentence spans and the word->sentence map."""

    tokens: list
    sentence_spans: list
    word_to_sentence: np.ndarray

    @property
    def num_tokens(self):
        return len(self.tokens)

    @property
    def num_sentences(self):
        return len(self.sentence_spans)

    def sentence_tokens(self, n):
        lo, hi = self.sentence_spans[n]
        return self.tokens[lo:hi]

    def validate(self):
        pos = 0
        for n, (lo, hi) in enumerate(self.sentence_spans):
            if lo != pos or hi <= lo:
                raise DataError(f"bad span {n}: [{lo},{hi}) at position {pos}")
            pos = hi
        if pos != len(self.tokens):
            raise DataError(f"spans cover [0,{pos}) but article has {len(self.tokens)} tokens")
        for m, n in enumerate(self.word_to_sentence):
            lo, hi = self.sentence_spans[n]
            if not lo <= m < hi:
                raise DataError(f"word {m} mapped to sentence {n} outside its span")


def segment(tokens):
    """Split a token sequence into sentences at terminal punctuation tokens."""
    if not tokens:
        raise DataError("cannot segment an empty token sequence")
    spans = []
    start = 0
    for i, tok in enumerate(tokens):
        if tok in _TERMINALS:
            spans.append((start, i + 1))
            start = i + 1
    if start < len(tokens):
        spans.append((start, len(tokens)))
    word_to_sentence = np.empty(len(tokens), dtype=np.int64)
    for n, (lo, hi) in enumerate(spans):
        word_to_sentence[lo:hi] = n
    return Article(list(tokens), spans, word_to_sentence)


def truncate(article, max_sentences=None, max_sentence_tokens=None, max_total_tokens=None):
    """Apply sentence-count, per-sentence, and flat token limits, in that order."""
    sentences = [article.sentence_tokens(n) for n in range(article.num_sentences)]
    if max_sentences is not None:
        sentences = sentences[:max_sentences]
    if max_sentence_tokens is not None:
        sentences = [s[:max_sentence_tokens] for s in sentences]
    if max_total_tokens is not None:
        kept = []
        total = 0
        for s in sentences:
            if total + len(s) > max_total_tokens:
                s = s[: max_total_tokens - total]
            if s:
                kept.append(s)
                total += len(s)
            if total >= max_total_tokens:
                break
        sentences = kept
    tokens = []
    spans = []
    for s in sentences:
        spans.append((len(tokens), len(tokens) + len(s)))
        tokens.extend(s)
    word_to_sentence = np.empty(len(tokens), dtype=np.int64)
    for n, (lo, hi) in enumerate(spans):
        word_to_sentence[lo:hi] = n
    return Article(tokens, spans, word_to_sentence)


@dataclass
class Vocab:
    """Fixed-size word/id bijection with reserved pad, unk, start, stop ids."""

    word_to_id: dict
    id_to_word: list
    counts: dict = field(default_factory=dict)

    @property
    def size(self):
        return len(self.id_to_word)

    def lookup(self, word):
        return self.word_to_id.get(word, UNK)

    def word(self, idx):
        return self.id_to_word[idx]

    def __contains__(self, word):
        return word in self.word_to_id


def build_vocab(token_sequences, size):
    """Keep the most frequent words (ties broken lexicographically) plus
    the reserved tokens, for a total of at most `size` entries."""
    if size <= len(RESERVED):
        raise ConfigError(f"vocab size {size} must exceed the {len(RESERVED)} reserved tokens")
    counts = Counter()
    for seq in token_sequences:
        counts.update(seq)
    if not counts:
        raise ConfigError("cannot build a vocabulary from an empty corpus")
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    kept = ranked[: size - len(RESERVED)]
    id_to_word = list(RESERVED) + [w for w, _ in kept]
    word_to_id = {w: i for i, w in enumerate(id_to_word)}
    return Vocab(word_to_id, id_to_word, counts=dict(kept))


def save_vocab(vocab, path):
    with open(path, "w", encoding="utf-8") as fh:
        for word in vocab.id_to_word[len(RESERVED):]:
            fh.write(f"{word}\t{vocab.counts.get(word, 0)}\n")


def load_vocab(path):
    id_to_word = list(RESERVED)
    counts = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            try:
                word, count = line.split("\t")
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: expected 'word<TAB>count'") from exc
            id_to_word.append(word)
            counts[word] = int(count)
    word_to_id = {w: i for i, w in enumerate(id_to_word)}
    return Vocab(word_to_id, id_to_word, counts=counts)


@dataclass
class IndexedArticle:
    """An article as base ids (OOV -> unk) plus per-article extended OOV ids."""

    article: Article
    base_ids: np.ndarray
    extended_ids: np.ndarray
    oov_list: list

    @property
    def num_tokens(self):
        return len(self.base_ids)


def index_article(article, vocab):
    """Index tokens against the vocabulary, assigning extended ids >= vocab
    size to out-of-vocabulary words in first-appearance order."""
    base = np.empty(article.num_tokens, dtype=np.int64)
    ext = np.empty(article.num_tokens, dtype=np.int64)
    oov_list = []
    oov_ids = {}
    for m, tok in enumerate(article.tokens):
        idx = vocab.word_to_id.get(tok)
        if idx is None:
            base[m] = UNK
            if tok not in oov_ids:
                oov_ids[tok] = vocab.size + len(oov_list)
                oov_list.append(tok)
            ext[m] = oov_ids[tok]
        else:
            base[m] = idx
            ext[m] = idx
    return IndexedArticle(article, base, ext, oov_list)


def deindex(ids, vocab, oov_list):
    """Map base or extended ids back to tokens (inverse of indexing)."""
    tokens = []
    for idx in ids:
        idx = int(idx)
        if idx < vocab.size:
            tokens.append(vocab.word(idx))
        elif idx < vocab.size + len(oov_list):
            tokens.append(oov_list[idx - vocab.size])
        else:
            raise DataError(f"id {idx} outside extended vocabulary of size "
                            f"{vocab.size}+{len(oov_list)}")
    return tokens


def reference_ids(reference_tokens, vocab, oov_list):
    """Target ids for a reference summary: in-vocab words get base ids, words
    copied from the article get that article's extended ids, the rest unk."""
    oov_index = {w: vocab.size + i for i, w in enumerate(oov_list)}
    ids = np.empty(len(reference_tokens), dtype=np.int64)
    for t, tok in enumerate(reference_tokens):
        idx = vocab.word_to_id.get(tok)
        if idx is None:
            idx = oov_index.get(tok, UNK)
        ids[t] = idx
    return ids


@dataclass
class SummaryPair:
    """An article paired with its reference summary token sequence."""

    article: Article
    reference: list

    def __post_init__(self):
        if len(self.reference) < 1:
            raise DataError("reference summary must contain at least one token")


def pair_from_text(article_text, summary_text):
    article_tokens = tokenize(article_text)
    reference = tokenize(summary_text)
    if not article_tokens:
        raise DataError("article text produced no tokens")
    if not reference:
        raise DataError("summary text produced no tokens")
    return SummaryPair(segment(article_tokens), reference)


def load_pairs(path):
    """Read a JSON-lines corpus file into SummaryPairs, preserving file order."""
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            if not isinstance(record, dict) or "article" not in record or "summary" not in record:
                raise DataError(f"{path}:{lineno}: expected an object with 'article' and 'summary'")
            try:
                pairs.append(pair_from_text(record["article"], record["summary"]))
            except DataError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from exc
    if not pairs:
        raise DataError(f"{path}: corpus file contains no records")
    return pairs


def save_pairs(records, path):
    """Write (article_text, summary_text) records as a JSON-lines corpus."""
    with open(path, "w", encoding="utf-8") as fh:
        for article_text, summary_text in records:
            fh.write(json.dumps({"article": article_text, "summary": summary_text}) + "\n")


def save_labels(labels_list, path):
    """Write per-article binary sentence labels, one JSON line per article."""
    with open(path, "w", encoding="utf-8") as fh:
        for labels in labels_list:
            fh.write(json.dumps({"labels": [int(x) for x in labels]}) + "\n")


def load_labels(path):
    labels_list = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
                labels = np.asarray(record["labels"], dtype=np.int64)
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise DataError(f"{path}:{lineno}: expected a 'labels' array") from exc
            if labels.ndim != 1 or not np.isin(labels, (0, 1)).all():
                raise DataError(f"{path}:{lineno}: labels must be a flat 0/1 array")
            labels_list.append([int(x) for x in labels])
    return labels_list
