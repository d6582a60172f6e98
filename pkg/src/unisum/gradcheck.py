"""Finite-difference verification of every training loss on a toy instance.

One hand-picked article/summary pair, tiny dimensions, standard random
initialization. Deep recurrent chains put some true gradient entries near
the relative-error floor of the check, where plain float64 differences are
dominated by roundoff; the checker re-measures those entries with an
extended-precision replay, so a failure here means a wrong gradient, not
noise.
"""

from collections import OrderedDict

import numpy as np

from . import corpus, fusion, oracle
from .abstracter import Abstracter
from .diffcore import Graph, finite_diff_check
from .extractor import Extractor, extractor_loss

TOY_EMBED = 8
TOY_HIDDEN = 8

_ARTICLE = "alpha beta gamma . delta epsilon . zeta eta theta iota ."
_SUMMARY = "beta gamma zeta"
_LAMBDAS = (5.0, 1.0, 1.0, 1.0)
_TOP_K = 3

LOSS_NAMES = ("L_ext", "L_abs", "L_cov", "L_inc", "L_e2e")


def _toy_instance(seed):
    pair = corpus.pair_from_text(_ARTICLE, _SUMMARY)
    vocab = corpus.build_vocab([pair.article.tokens, pair.reference], 12)
    indexed = corpus.index_article(pair.article, vocab)
    labels = oracle.extract_labels(pair.article, pair.reference)
    inputs = [corpus.START] + [vocab.lookup(t) for t in pair.reference]
    targets = list(corpus.reference_ids(pair.reference, vocab, indexed.oov_list))
    targets.append(corpus.STOP)
    rng = np.random.default_rng(seed)
    ext = Extractor(vocab.size, TOY_EMBED, TOY_HIDDEN, rng=rng)
    abst = Abstracter(vocab.size, TOY_EMBED, TOY_HIDDEN, rng=rng)
    return pair, indexed, labels, inputs, targets, ext, abst


def build_loss(name, seed=0):
    """Fresh toy graph for one named loss; returns (graph, loss node)."""
    pair, indexed, labels, inputs, targets, ext, abst = _toy_instance(seed)
    g = Graph()
    p = {}
    p.update(ext.bind(g))
    p.update(abst.bind(g))
    beta = ext.score_sentences(g, p, indexed)
    if name == "L_ext":
        return g, extractor_loss(g, beta, labels)
    enc = abst.encode(g, p, indexed)
    tf = abst.teacher_forced(g, p, enc, inputs, targets, beta=beta,
                             track_coverage=True)
    if name == "L_abs":
        return g, tf.nll
    if name == "L_cov":
        return g, tf.coverage_loss
    word_to_sentence = pair.article.word_to_sentence
    l_inc = fusion.inconsistency_loss(g, tf.alphas, beta, word_to_sentence, _TOP_K)
    if name == "L_inc":
        return g, l_inc
    if name == "L_e2e":
        lam1, lam2, lam3, lam4 = _LAMBDAS
        l_ext = extractor_loss(g, beta, labels)
        loss = g.add(g.add(g.scale(l_ext, lam1), g.scale(tf.nll, lam2)),
                     g.add(g.scale(tf.coverage_loss, lam3), g.scale(l_inc, lam4)))
        return g, loss
    raise ValueError(f"unknown loss {name!r}; expected one of {LOSS_NAMES}")


def check_all(epsilon=1e-5, tolerance=1e-3, seed=0):
    """Finite-difference reports for every loss, keyed by loss name."""
    reports = OrderedDict()
    for name in LOSS_NAMES:
        g, loss = build_loss(name, seed=seed)
        reports[name] = finite_diff_check(g, loss, epsilon=epsilon,
                                          tolerance=tolerance)
    return reports
