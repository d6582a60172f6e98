"""Coupling between sentence-level and word-level attention: multiplicative
combination with renormalization, the inconsistency penalty on top-K
attended words, and the inconsistency-rate diagnostic.
"""

import logging
from dataclasses import dataclass

import numpy as np

from .diffcore import LOG_CLAMP

log = logging.getLogger(__name__)


def top_k_indices(alpha_values, k):
    """Indices of the k largest attention weights, ties to the lower index."""
    m = alpha_values.shape[0]
    if k > m:
        log.warning("top-k of %d requested over %d words; clamping", k, m)
        k = m
    order = np.lexsort((np.arange(m), -alpha_values))
    return order[:k]


def combine(g, alpha, beta, word_to_sentence):
    """Renormalized product of word attention with its sentence's attention.

    Returns (alpha_hat, fell_back). A constant beta cancels analytically, so
    that case passes alpha through untouched, keeping the identity exact in
    floating point. An all-zero product vector cannot be renormalized; the
    raw word attention is used instead and the event logged.
    """
    beta_words = g.gather(beta, np.asarray(word_to_sentence, dtype=np.int64))
    bw = beta_words.value
    if bw.size and np.all(bw == bw.flat[0]) and bw.flat[0] > 0.0:
        return alpha, False
    products = g.mul(alpha, beta_words)
    denominator = g.reduce_sum(products)
    if denominator.value <= 0.0:
        log.warning("degenerate attention combination (denominator %r); "
                    "falling back to raw word attention", float(denominator.value))
        return alpha, True
    return g.div(products, denominator), False


def combine_values(alpha, beta, word_to_sentence):
    """Numpy twin of combine for inference-time bookkeeping."""
    bw = beta[word_to_sentence]
    if bw.size and np.all(bw == bw.flat[0]) and bw.flat[0] > 0.0:
        return alpha.copy(), False
    products = alpha * bw
    denominator = products.sum()
    if denominator <= 0.0:
        return alpha.copy(), True
    return products / denominator, False


def inconsistency_loss(g, alphas, beta, word_to_sentence, k):
    """Graph node for the inconsistency penalty over a decoded sequence.

    Each step contributes -log of the mean product of raw word attention and
    sentence attention over that step's top-k words. Ranking uses the raw
    word attention, and the selected index set is held fixed with respect to
    gradients (only the products themselves are differentiated).
    """
    beta_words = g.gather(beta, np.asarray(word_to_sentence, dtype=np.int64))
    terms = []
    for alpha in alphas:
        top = top_k_indices(alpha.value, k)
        products = g.mul(g.gather(alpha, top), g.gather(beta_words, top))
        terms.append(g.log(g.reduce_mean(products)))
    return g.scale(g.reduce_mean(g.stack(terms, axis=0)), -1.0)


def inconsistency_loss_values(alphas, beta, word_to_sentence, k):
    """Numpy twin of inconsistency_loss. Empty sequences score 0."""
    if not len(alphas):
        return 0.0
    bw = beta[word_to_sentence]
    terms = []
    for alpha in alphas:
        top = top_k_indices(alpha, k)
        terms.append(np.log(max(LOG_CLAMP, float(np.mean(alpha[top] * bw[top])))))
    return -float(np.mean(terms))


def inconsistent_steps(alphas, beta, word_to_sentence):
    """Steps whose maximum-attention word sits in a below-mean-beta sentence.

    Uses raw word attention; argmax ties resolve to the lower index.
    """
    mean_beta = float(np.mean(beta))
    steps = []
    for t, alpha in enumerate(alphas):
        sentence = word_to_sentence[int(np.argmax(alpha))]
        if beta[sentence] < mean_beta:
            steps.append(t)
    return steps


def inconsistency_rate(alphas, beta, word_to_sentence):
    """Fraction of inconsistent steps plus their indices."""
    if not len(alphas):
        return 0.0, []
    steps = inconsistent_steps(alphas, beta, word_to_sentence)
    return len(steps) / len(alphas), steps


@dataclass
class InconsistencyReport:
    loss: float
    rate: float
    steps: list

    @property
    def num_steps(self):
        return len(self.steps)


def inconsistency_report(alphas, beta, word_to_sentence, k):
    """Loss, rate, and offending step indices for one decoded sequence."""
    rate, steps = inconsistency_rate(alphas, beta, word_to_sentence)
    loss = inconsistency_loss_values(alphas, beta, word_to_sentence, k)
    return InconsistencyReport(loss=loss, rate=rate, steps=steps)
