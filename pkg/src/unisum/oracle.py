"""Greedy sentence-label oracle for extractor supervision.

Labels are built per article: rank sentences by how much of the reference
each one covers on its own, then greedily keep a sentence only when adding
it strictly improves coverage of the reference. Concatenation is always in
document order, whatever order the picks happen in.
"""

import numpy as np

from .corpus import Article
from .errors import DataError
from .rouge import rouge_l

# Increases smaller than this are treated as no improvement.
GAIN_TOL = 1e-12


def informativity(article, selection, reference):
    """Recall of the reference achieved by the selected sentences, taken in
    document order."""
    indices = sorted(set(int(n) for n in selection))
    tokens = [tok for n in indices for tok in article.sentence_tokens(n)]
    return rouge_l(tokens, reference).recall


def extract_labels(article, reference):
    """Binary per-sentence labels from the greedy oracle.

    Candidates are visited in descending single-sentence recall (ties by
    document position) and kept iff they strictly increase informativity.
    """
    singles = [
        rouge_l(article.sentence_tokens(n), reference).recall
        for n in range(article.num_sentences)
    ]
    order = sorted(range(article.num_sentences), key=lambda n: (-singles[n], n))
    selected = set()
    best = 0.0
    for n in order:
        score = informativity(article, selected | {n}, reference)
        if score > best + GAIN_TOL:
            selected.add(n)
            best = score
    return [int(n in selected) for n in range(article.num_sentences)]


def extract_article(article, labels):
    """New article containing only the sentences with nonzero labels, in
    document order. An all-zero mask yields an empty article; callers that
    need a nonempty input must apply their own fallback."""
    if len(labels) != article.num_sentences:
        raise DataError(
            f"{len(labels)} labels for {article.num_sentences} sentences")
    sentences = [
        article.sentence_tokens(n)
        for n in range(article.num_sentences)
        if labels[n]
    ]
    tokens = []
    spans = []
    for s in sentences:
        spans.append((len(tokens), len(tokens) + len(s)))
        tokens.extend(s)
    word_to_sentence = np.empty(len(tokens), dtype=np.int64)
    for n, (lo, hi) in enumerate(spans):
        word_to_sentence[lo:hi] = n
    return Article(tokens, spans, word_to_sentence)
