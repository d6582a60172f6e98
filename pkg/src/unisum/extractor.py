"""Hierarchical sentence scorer: word-level bidirectional GRU feeding a
sentence-level bidirectional GRU and a per-sentence sigmoid.

The word-level pass runs batched across a document's sentences with carry
masking for ragged lengths; the backward direction reuses the forward
recurrence on per-sentence reversed token rows.
"""

import numpy as np

from . import cells
from .corpus import PAD
from .diffcore import Graph
from .errors import GraphConstructionError


class Extractor:
    """Sentence-level attention model. Emits one extraction probability per
    sentence; the probabilities are fixed for an entire decoding pass."""

    def __init__(self, vocab_size, embed_dim, hidden_dim, rng=None, params=None):
        self.vocab_size = vocab_size
        self.embed_dim = embed_dim
        self.hidden_dim = hidden_dim
        if params is not None:
            self.params = params
            return
        self.params = {"ext.embed": cells.uniform_init(rng, (vocab_size, embed_dim))}
        for direction in ("f", "b"):
            self.params.update(cells.init_gru(rng, embed_dim, hidden_dim,
                                              f"ext.wgru_{direction}"))
            self.params.update(cells.init_gru(rng, 2 * hidden_dim, hidden_dim,
                                              f"ext.sgru_{direction}"))
        self.params["ext.cls.w"] = cells.uniform_init(rng, (2 * hidden_dim,))
        self.params["ext.cls.b"] = cells.uniform_init(rng, ())

    @classmethod
    def from_params(cls, params):
        vocab_size, embed_dim = params["ext.embed"].shape
        hidden_dim = params["ext.cls.w"].shape[0] // 2
        return cls(vocab_size, embed_dim, hidden_dim, params=params)

    def bind(self, graph):
        return cells.bind(graph, self.params)

    def _padded_rows(self, indexed):
        article = indexed.article
        lengths = [hi - lo for lo, hi in article.sentence_spans]
        if min(lengths) < 1:
            raise GraphConstructionError("article contains an empty sentence")
        num_sentences = article.num_sentences
        width = max(lengths)
        ids = np.full((num_sentences, width), PAD, dtype=np.int64)
        rev_ids = np.full((num_sentences, width), PAD, dtype=np.int64)
        mask = np.zeros((num_sentences, width), dtype=np.float64)
        for n, (lo, hi) in enumerate(article.sentence_spans):
            ids[n, : hi - lo] = indexed.base_ids[lo:hi]
            rev_ids[n, : hi - lo] = indexed.base_ids[lo:hi][::-1]
            mask[n, : hi - lo] = 1.0
        return ids, rev_ids, mask

    def _masked_gru_final(self, g, p, prefix, emb, mask):
        num_rows, width = mask.shape
        h = cells.zero_state(g, (num_rows, self.hidden_dim))
        for t in range(width):
            x = g.slice(emb, (slice(None), t))
            h_new = cells.gru_step(g, p, prefix, x, h)
            keep = g.leaf(mask[:, t:t + 1], name="mask")
            drop = g.leaf(1.0 - mask[:, t:t + 1], name="inv_mask")
            h = g.add(g.mul(keep, h_new), g.mul(drop, h))
        return h

    def score_sentences(self, g, p, indexed):
        """Per-sentence extraction probabilities as a length-N graph node."""
        ids, rev_ids, mask = self._padded_rows(indexed)
        emb_f = g.gather(p["ext.embed"], ids)
        emb_b = g.gather(p["ext.embed"], rev_ids)
        final_f = self._masked_gru_final(g, p, "ext.wgru_f", emb_f, mask)
        final_b = self._masked_gru_final(g, p, "ext.wgru_b", emb_b, mask)
        sent_emb = g.concat([final_f, final_b], axis=-1)

        num_sentences = ids.shape[0]
        fwd = []
        h = cells.zero_state(g, (self.hidden_dim,))
        for n in range(num_sentences):
            h = cells.gru_step(g, p, "ext.sgru_f", g.slice(sent_emb, (n,)), h)
            fwd.append(h)
        bwd = [None] * num_sentences
        h = cells.zero_state(g, (self.hidden_dim,))
        for n in reversed(range(num_sentences)):
            h = cells.gru_step(g, p, "ext.sgru_b", g.slice(sent_emb, (n,)), h)
            bwd[n] = h
        reps = g.concat([g.stack(fwd, axis=0), g.stack(bwd, axis=0)], axis=-1)
        logits = g.add(g.matmul(reps, p["ext.cls.w"]), p["ext.cls.b"])
        return g.sigmoid(logits)

    def predict(self, indexed):
        """Convenience inference pass returning plain numpy probabilities."""
        g = Graph()
        beta = self.score_sentences(g, self.bind(g), indexed)
        return beta.value


def extractor_loss(g, beta, labels):
    """Mean sigmoid cross entropy against binary labels (logs clamped)."""
    labels = np.asarray(labels, dtype=np.float64)
    if beta.shape != labels.shape:
        raise GraphConstructionError(
            f"beta shape {beta.shape} does not match labels shape {labels.shape}")
    pos = g.leaf(labels, name="labels")
    neg = g.leaf(1.0 - labels, name="inv_labels")
    log_b = g.log(beta)
    log_not_b = g.log(g.offset(g.scale(beta, -1.0), 1.0))
    per_sentence = g.add(g.mul(pos, log_b), g.mul(neg, log_not_b))
    return g.scale(g.reduce_mean(per_sentence), -1.0)
