"""Training regimes, the optimizer, and evaluation.

All four regimes share one deterministic loop: sample a batch, average
per-example losses, take a clipped Adagrad step, and track the best
validation loss. Checkpoints snapshot the complete run state (parameters,
optimizer accumulators, iteration counter, RNG state), so both the best and
the final state of a run can be saved and resumed bit-exactly.
"""

import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from . import corpus as corpus_mod
from . import fusion, oracle, rouge
from .abstracter import Abstracter
from .checkpoint import Checkpoint
from .corpus import START, STOP, index_article, reference_ids, truncate
from .diffcore import Graph, gradients
from .errors import ConfigError, DataError, NumericError
from .extractor import Extractor, extractor_loss

log = logging.getLogger(__name__)


class Adagrad:
    """Adagrad with global-norm gradient clipping applied first."""

    def __init__(self, learning_rate, eps=1e-8, clip_norm=2.0, acc=None):
        self.learning_rate = learning_rate
        self.eps = eps
        self.clip_norm = clip_norm
        self.acc = {} if acc is None else acc

    def step(self, params, grads):
        total = 0.0
        for name in sorted(grads):
            g = grads[name]
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient for {name}; step aborted")
            total += float((g * g).sum())
        norm = float(np.sqrt(total))
        scale = 1.0
        if self.clip_norm > 0 and norm > self.clip_norm:
            scale = self.clip_norm / norm
        for name in sorted(grads):
            g = grads[name] * scale
            if name not in self.acc:
                self.acc[name] = np.zeros_like(g)
            self.acc[name] += g * g
            params[name] -= self.learning_rate * g / (np.sqrt(self.acc[name]) + self.eps)
        return norm


@dataclass
class RunResult:
    best: Checkpoint       # lowest validation loss seen
    final: Checkpoint      # state at the last executed iteration
    history: list          # one row per validation point


@dataclass
class TrainExample:
    indexed: object                 # source consumed by the model(s)
    labels: np.ndarray = None       # per-sentence extraction targets
    inputs: list = None             # decoder input ids
    targets: list = None            # decoder target ids (extended)


# ---- example preparation ----------------------------------------------------

def _truncated_article(pair, cfg):
    return truncate(pair.article, cfg.max_sentences, cfg.max_sentence_tokens,
                    cfg.max_source_tokens)


def _decoder_sequences(reference, vocab, oov_list, cfg):
    ref = reference[: cfg.max_summary_tokens]
    inputs = [START] + [vocab.lookup(t) for t in ref]
    targets = list(reference_ids(ref, vocab, oov_list)) + [STOP]
    return inputs, targets


def _labels_for(article, reference, labels, position):
    if labels is None:
        return np.asarray(oracle.extract_labels(article, reference),
                          dtype=np.int64)
    got = np.asarray(labels[position], dtype=np.int64)
    if got.shape != (article.num_sentences,):
        raise DataError(
            f"record {position}: {got.size} labels for {article.num_sentences} "
            f"sentences (labels must match the truncated article)")
    return got


def prepare_extractor_examples(pairs, vocab, cfg, labels=None):
    examples = []
    for i, pair in enumerate(pairs):
        article = _truncated_article(pair, cfg)
        g = _labels_for(article, pair.reference, labels, i)
        examples.append(TrainExample(indexed=index_article(article, vocab), labels=g))
    return examples


def prepare_abstracter_examples(pairs, vocab, cfg, labels=None):
    """Oracle-labeled sentences as source, reference as target. Articles
    whose labels are all zero are skipped."""
    examples = []
    skipped = 0
    for i, pair in enumerate(pairs):
        article = _truncated_article(pair, cfg)
        g = _labels_for(article, pair.reference, labels, i)
        if not g.any():
            skipped += 1
            continue
        extracted = oracle.extract_article(article, g)
        kept = [tok for n in range(article.num_sentences) if g[n]
                for tok in article.sentence_tokens(n)]
        if extracted.tokens != kept:
            raise DataError(f"record {i}: extracted input differs from labeled sentences")
        indexed = index_article(extracted, vocab)
        inputs, targets = _decoder_sequences(pair.reference, vocab,
                                             indexed.oov_list, cfg)
        examples.append(TrainExample(indexed=indexed, inputs=inputs, targets=targets))
    if skipped:
        log.warning("skipped %d records with all-zero oracle labels", skipped)
    return examples


def hard_extract_mask(beta, threshold):
    """Sentences above the extraction threshold; falls back to the single
    highest-probability sentence when none clears it."""
    mask = (np.asarray(beta) > threshold).astype(np.int64)
    if not mask.any():
        mask[int(np.argmax(beta))] = 1
    return mask


def prepare_hard_examples(pairs, extractor, vocab, cfg):
    """Two-stage data: the frozen extractor picks the abstracter's input."""
    examples = []
    for pair in pairs:
        article = _truncated_article(pair, cfg)
        beta = extractor.predict(index_article(article, vocab))
        mask = hard_extract_mask(beta, cfg.beta_threshold)
        extracted = oracle.extract_article(article, mask)
        indexed = index_article(extracted, vocab)
        inputs, targets = _decoder_sequences(pair.reference, vocab,
                                             indexed.oov_list, cfg)
        examples.append(TrainExample(indexed=indexed, inputs=inputs, targets=targets))
    return examples


def prepare_e2e_examples(pairs, vocab, cfg, labels=None):
    examples = []
    for i, pair in enumerate(pairs):
        article = _truncated_article(pair, cfg)
        g = _labels_for(article, pair.reference, labels, i)
        indexed = index_article(article, vocab)
        inputs, targets = _decoder_sequences(pair.reference, vocab,
                                             indexed.oov_list, cfg)
        examples.append(TrainExample(indexed=indexed, labels=g,
                                     inputs=inputs, targets=targets))
    return examples


# ---- loss builders -----------------------------------------------------------

def _ext_loss(ext, example):
    g = Graph()
    p = ext.bind(g)
    beta = ext.score_sentences(g, p, example.indexed)
    loss = extractor_loss(g, beta, example.labels)
    return g, loss, {"ext": loss.item()}


def _abs_loss(abst, example, track_coverage, cov_weight=1.0):
    g = Graph()
    p = abst.bind(g)
    enc = abst.encode(g, p, example.indexed)
    tf = abst.teacher_forced(g, p, enc, example.inputs, example.targets,
                             beta=None, track_coverage=track_coverage)
    parts = {"abs": tf.nll.item()}
    loss = tf.nll
    if track_coverage:
        cov = g.scale(tf.coverage_loss, cov_weight)
        parts["cov"] = cov.item()
        loss = g.add(loss, cov)
    return g, loss, parts


def _e2e_loss(ext, abst, example, cfg):
    g = Graph()
    p = {}
    p.update(ext.bind(g))
    p.update(abst.bind(g))
    beta = ext.score_sentences(g, p, example.indexed)
    enc = abst.encode(g, p, example.indexed)
    track_cov = cfg.coverage and cfg.lambda3 > 0
    tf = abst.teacher_forced(g, p, enc, example.inputs, example.targets,
                             beta=beta, track_coverage=track_cov)
    terms = []
    parts = {}
    if cfg.lambda1 > 0:
        term = g.scale(extractor_loss(g, beta, example.labels), cfg.lambda1)
        parts["ext"] = term.item()
        terms.append(term)
    term = g.scale(tf.nll, cfg.lambda2)
    parts["abs"] = term.item()
    terms.append(term)
    if track_cov:
        term = g.scale(tf.coverage_loss, cfg.lambda3)
        parts["cov"] = term.item()
        terms.append(term)
    if cfg.lambda4 > 0:
        word_to_sentence = example.indexed.article.word_to_sentence
        term = g.scale(fusion.inconsistency_loss(g, tf.alphas, beta,
                                                 word_to_sentence, cfg.top_k),
                       cfg.lambda4)
        parts["inc"] = term.item()
        terms.append(term)
    loss = terms[0]
    for term in terms[1:]:
        loss = g.add(loss, term)
    return g, loss, parts


# ---- the shared loop ---------------------------------------------------------

def _merge_params(*models):
    params = {}
    for model in models:
        params.update(model.params)
    return params


def _snapshot(cfg, params, opt_acc, iteration, rng):
    return Checkpoint(config=cfg,
                      params={k: v.copy() for k, v in params.items()},
                      opt_acc={k: v.copy() for k, v in opt_acc.items()},
                      iteration=iteration,
                      rng_state=rng.bit_generator.state)


def _mean_val_loss(examples, builder, iteration):
    total = 0.0
    for example in examples:
        _, loss, _ = builder(example, iteration)
        total += loss.item()
    return total / len(examples)


def _train_loop(cfg, params, examples, val_examples, builder, total_iterations,
                resume=None, phase_of=None):
    """Deterministic batched training. `builder(example, iteration)` returns
    (graph, loss node, logged parts); the iteration argument lets builders
    switch phases (coverage activation) mid-run. Best-checkpoint tracking
    resets at phase boundaries since the loss definition changes there."""
    if not examples:
        raise ConfigError("training corpus is empty after preparation")
    if not val_examples:
        raise ConfigError("validation corpus is empty after preparation")
    if phase_of is None:
        phase_of = lambda iteration: 0
    rng = np.random.default_rng(cfg.seed)
    start = 0
    opt_acc = {}
    if resume is not None:
        start = resume.iteration
        opt_acc = {k: v.copy() for k, v in resume.opt_acc.items()}
        if resume.rng_state is not None:
            rng.bit_generator.state = resume.rng_state
    opt = Adagrad(cfg.learning_rate, eps=cfg.adagrad_eps,
                  clip_norm=cfg.clip_norm, acc=opt_acc)
    history = []
    best = None
    best_val = np.inf
    best_phase = phase_of(start)
    since_best = 0
    n = len(examples)
    completed = start
    for iteration in range(start, total_iterations):
        picks = rng.permutation(n)[: cfg.batch_size]
        batch_grads = {}
        batch_loss = 0.0
        batch_parts = {}
        for j in picks:
            g, loss, parts = builder(examples[int(j)], iteration)
            batch_loss += loss.item() / len(picks)
            for key, value in parts.items():
                batch_parts[key] = batch_parts.get(key, 0.0) + value / len(picks)
            for node, grad in gradients(g, loss).items():
                if node.name not in batch_grads:
                    batch_grads[node.name] = np.zeros_like(grad)
                batch_grads[node.name] += grad / len(picks)
        opt.step(params, batch_grads)
        completed = iteration + 1
        if completed % cfg.eval_every == 0 or completed == total_iterations:
            phase = phase_of(iteration)
            if phase != best_phase:
                best_phase = phase
                best_val = np.inf
                since_best = 0
            val = _mean_val_loss(val_examples, builder, iteration)
            row = {"iteration": completed, "phase": phase,
                   "train_loss": batch_loss, "val_loss": val}
            row.update({f"train_{k}": v for k, v in sorted(batch_parts.items())})
            history.append(row)
            log.info("iter %d train %.4f val %.4f", completed, batch_loss, val)
            if val < best_val:
                best_val = val
                best = _snapshot(cfg, params, opt.acc, completed, rng)
                since_best = 0
            else:
                since_best += 1
                if cfg.patience and since_best >= cfg.patience:
                    log.info("stopping early at iteration %d", completed)
                    break
    final = _snapshot(cfg, params, opt.acc, completed, rng)
    if best is None:
        best = final
    return RunResult(best=best, final=final, history=history)


# ---- regimes -----------------------------------------------------------------

def pretrain_extractor(pairs, val_pairs, vocab, cfg, labels=None,
                       val_labels=None, resume=None):
    """Minimize the extraction cross entropy against oracle labels."""
    rng = np.random.default_rng(cfg.seed)
    ext = Extractor(vocab.size, cfg.embed_dim, cfg.ext_hidden, rng=rng)
    if resume is not None:
        ext = Extractor.from_params({k: v.copy() for k, v in resume.params.items()})
    examples = prepare_extractor_examples(pairs, vocab, cfg, labels)
    val_examples = prepare_extractor_examples(val_pairs, vocab, cfg, val_labels)

    def builder(example, iteration):
        return _ext_loss(ext, example)

    return _train_loop(cfg, ext.params, examples, val_examples, builder,
                       cfg.iterations, resume=resume)


def pretrain_abstracter(pairs, val_pairs, vocab, cfg, labels=None,
                        val_labels=None, resume=None):
    """Teacher-forced training on oracle-extracted sentences; a closing phase
    adds the coverage penalty at one-to-one weight."""
    rng = np.random.default_rng(cfg.seed)
    abst = Abstracter(vocab.size, cfg.embed_dim, cfg.abs_hidden, rng=rng)
    if resume is not None:
        abst = Abstracter.from_params({k: v.copy() for k, v in resume.params.items()})
    examples = prepare_abstracter_examples(pairs, vocab, cfg, labels)
    val_examples = prepare_abstracter_examples(val_pairs, vocab, cfg, val_labels)
    coverage_from = cfg.iterations if cfg.coverage else np.inf

    def builder(example, iteration):
        return _abs_loss(abst, example, track_coverage=iteration >= coverage_from)

    total = cfg.iterations + (cfg.coverage_iterations if cfg.coverage else 0)
    return _train_loop(cfg, abst.params, examples, val_examples, builder, total,
                       resume=resume,
                       phase_of=lambda it: int(it >= coverage_from))


def _split_params(params, prefix):
    return {k: v for k, v in params.items() if k.startswith(prefix)}


def train_two_stage(pairs, val_pairs, vocab, cfg, ext_ckpt, abs_ckpt, resume=None):
    """Frozen extractor as a hard sentence filter; fine-tune the abstracter
    on the sentences it selects."""
    ext_params = _split_params(ext_ckpt.params, "ext.")
    if not ext_params:
        raise DataError("extractor checkpoint holds no extractor parameters")
    ext = Extractor.from_params({k: v.copy() for k, v in ext_params.items()})
    abs_source = resume.params if resume is not None else abs_ckpt.params
    abs_params = _split_params(abs_source, "abs.")
    if not abs_params:
        raise DataError("abstracter checkpoint holds no abstracter parameters")
    abst = Abstracter.from_params({k: v.copy() for k, v in abs_params.items()})

    examples = prepare_hard_examples(pairs, ext, vocab, cfg)
    val_examples = prepare_hard_examples(val_pairs, ext, vocab, cfg)

    def builder(example, iteration):
        return _abs_loss(abst, example, track_coverage=cfg.coverage)

    result = _train_loop(cfg, abst.params, examples, val_examples, builder,
                         cfg.iterations, resume=resume)
    # The frozen extractor rides along in the output checkpoints untouched.
    for ckpt in (result.best, result.final):
        ckpt.params.update({k: v.copy() for k, v in ext_params.items()})
    return result


def train_end2end(pairs, val_pairs, vocab, cfg, ext_ckpt, abs_ckpt,
                  labels=None, val_labels=None, resume=None):
    """Joint training of both networks through the fused attention."""
    source = resume.params if resume is not None else {
        **_split_params(ext_ckpt.params, "ext."),
        **_split_params(abs_ckpt.params, "abs."),
    }
    ext_params = _split_params(source, "ext.")
    abs_params = _split_params(source, "abs.")
    if not ext_params or not abs_params:
        raise DataError("end-to-end training needs both pre-trained networks")
    ext = Extractor.from_params({k: v.copy() for k, v in ext_params.items()})
    abst = Abstracter.from_params({k: v.copy() for k, v in abs_params.items()})
    examples = prepare_e2e_examples(pairs, vocab, cfg, labels)
    val_examples = prepare_e2e_examples(val_pairs, vocab, cfg, val_labels)

    def builder(example, iteration):
        return _e2e_loss(ext, abst, example, cfg)

    params = _merge_params(ext, abst)
    return _train_loop(cfg, params, examples, val_examples, builder,
                       cfg.iterations, resume=resume)


# ---- evaluation --------------------------------------------------------------

_ROUGE_KEYS = ("rouge_1", "rouge_2", "rouge_l")


def _score_all(candidate, reference):
    return {
        "rouge_1": rouge.rouge_n(candidate, reference, 1),
        "rouge_2": rouge.rouge_n(candidate, reference, 2),
        "rouge_l": rouge.rouge_l(candidate, reference),
    }


def _mean_scores(rows):
    out = {}
    for key in _ROUGE_KEYS:
        out[key] = {
            "precision": float(np.mean([r[key].precision for r in rows])),
            "recall": float(np.mean([r[key].recall for r in rows])),
            "f1": float(np.mean([r[key].f1 for r in rows])),
        }
    return out


@dataclass
class MetricsReport:
    num_articles: int
    fingerprint: str
    extractive: dict = None        # mean ROUGE of threshold-extracted sentences
    abstractive: dict = None       # mean ROUGE of decoded summaries
    mean_r_inc: float = None
    r_inc_per_article: list = field(default_factory=list)

    def to_json(self):
        return json.dumps(asdict(self), sort_keys=True, indent=2)


def evaluate(pairs, ckpt, vocab):
    """Corpus metrics for a checkpoint: extractive ROUGE recall at the beta
    threshold, abstractive ROUGE F1 of decoded summaries, and the mean
    inconsistency rate when both networks are present."""
    cfg = ckpt.config
    ext = None
    abst = None
    if ckpt.has_extractor():
        ext = Extractor.from_params(_split_params(ckpt.params, "ext."))
    if ckpt.has_abstracter():
        abst = Abstracter.from_params(_split_params(ckpt.params, "abs."))
    if ext is None and abst is None:
        raise DataError("checkpoint holds no model parameters")
    ext_rows, abs_rows, r_incs = [], [], []
    for pair in pairs:
        article = _truncated_article(pair, cfg)
        indexed = index_article(article, vocab)
        beta = ext.predict(indexed) if ext is not None else None
        if beta is not None:
            mask = hard_extract_mask(beta, cfg.beta_threshold)
            tokens = [tok for n in range(article.num_sentences) if mask[n]
                      for tok in article.sentence_tokens(n)]
            ext_rows.append(_score_all(tokens, pair.reference))
        if abst is not None:
            result = abst.decode(indexed, beta=beta, beam_width=cfg.beam_width,
                                 max_len=cfg.decode_max_len)
            decoded = corpus_mod.deindex(result.ids, vocab, indexed.oov_list)
            abs_rows.append(_score_all(decoded, pair.reference))
            if beta is not None:
                rate, _ = fusion.inconsistency_rate(
                    result.alphas, beta, article.word_to_sentence)
                r_incs.append(float(rate))
    return MetricsReport(
        num_articles=len(pairs),
        fingerprint=cfg.fingerprint(),
        extractive=_mean_scores(ext_rows) if ext_rows else None,
        abstractive=_mean_scores(abs_rows) if abs_rows else None,
        mean_r_inc=float(np.mean(r_incs)) if r_incs else None,
        r_inc_per_article=r_incs,
    )
