"""Pointer-generator encoder/decoder with coverage.

A bidirectional LSTM encodes the source; a unidirectional LSTM decoder
attends over encoder states, mixes a fixed-vocabulary distribution with a
copy distribution over source positions, and tracks a coverage vector.
Sentence-level attention, when supplied, is fused into the word attention
before the context and copy distributions are formed.
"""

from dataclasses import dataclass

import numpy as np

from . import cells, fusion
from .corpus import START, STOP, UNK
from .diffcore import Graph
from .errors import DataError, GraphConstructionError, NumericError

SIMPLEX_TOL = 1e-6


@dataclass
class EncodedArticle:
    """Everything one decoding pass needs about a source article."""

    indexed: object
    enc_states: object          # (M, 2H) graph node
    att_enc: object             # (M, A) precomputed attention features
    state0: tuple               # initial decoder (h, c) nodes
    zero_coverage: object       # (M,) constant node

    @property
    def num_tokens(self):
        return len(self.indexed.base_ids)


@dataclass
class StepResult:
    """All per-step decoder quantities, as graph nodes."""

    state: tuple
    alpha: object               # raw word attention (M,)
    alpha_hat: object           # fused (or raw, when no beta) attention (M,)
    fell_back: bool
    p_gen: object               # scalar
    p_vocab: object             # (V,)
    p_final: object             # (V + |oov|,)


@dataclass
class TeacherForcedResult:
    nll: object                 # scalar node
    coverage_loss: object       # scalar node or None
    alphas: list                # raw attention nodes per step
    alpha_hats: list
    fallback_steps: int


@dataclass
class DecodeResult:
    ids: list                   # extended ids, STOP excluded
    alphas: list                # raw attention values per emitted step
    beta: np.ndarray            # sentence attention used (None when raw)
    fallback_steps: int


class Abstracter:
    """Word-level summarizer over indexed articles."""

    def __init__(self, vocab_size, embed_dim, hidden_dim, rng=None, params=None):
        self.vocab_size = vocab_size
        self.embed_dim = embed_dim
        self.hidden_dim = hidden_dim
        if params is not None:
            self.params = params
            return
        h, e = hidden_dim, embed_dim
        self.params = {"abs.embed": cells.uniform_init(rng, (vocab_size, e))}
        self.params.update(cells.init_lstm(rng, e, h, "abs.enc_f"))
        self.params.update(cells.init_lstm(rng, e, h, "abs.enc_b"))
        self.params.update(cells.init_lstm(rng, e, h, "abs.dec"))
        for which in ("init_h", "init_c"):
            self.params[f"abs.{which}.W"] = cells.uniform_init(rng, (2 * h, h))
            self.params[f"abs.{which}.b"] = cells.uniform_init(rng, (h,))
        self.params.update({
            "abs.att.Wh": cells.uniform_init(rng, (2 * h, h)),
            "abs.att.Ws": cells.uniform_init(rng, (h, h)),
            "abs.att.wc": cells.uniform_init(rng, (h,)),
            "abs.att.b": cells.uniform_init(rng, (h,)),
            "abs.att.v": cells.uniform_init(rng, (h,)),
            "abs.out.W1": cells.uniform_init(rng, (3 * h, h)),
            "abs.out.b1": cells.uniform_init(rng, (h,)),
            "abs.out.W2": cells.uniform_init(rng, (h, vocab_size)),
            "abs.out.b2": cells.uniform_init(rng, (vocab_size,)),
            "abs.pgen.wctx": cells.uniform_init(rng, (2 * h,)),
            "abs.pgen.ws": cells.uniform_init(rng, (h,)),
            "abs.pgen.wx": cells.uniform_init(rng, (e,)),
            "abs.pgen.b": cells.uniform_init(rng, ()),
        })

    @classmethod
    def from_params(cls, params):
        vocab_size, embed_dim = params["abs.embed"].shape
        hidden_dim = params["abs.att.Ws"].shape[0]
        return cls(vocab_size, embed_dim, hidden_dim, params=params)

    def bind(self, graph):
        return cells.bind(graph, self.params)

    def encode(self, g, p, indexed):
        """Run the bidirectional encoder and derive the decoder start state."""
        m = len(indexed.base_ids)
        if m < 1:
            raise GraphConstructionError("cannot encode an empty article")
        emb = g.gather(p["abs.embed"], indexed.base_ids)
        fwd = []
        state = (cells.zero_state(g, (self.hidden_dim,)),
                 cells.zero_state(g, (self.hidden_dim,)))
        for i in range(m):
            state = cells.lstm_step(g, p, "abs.enc_f", g.slice(emb, (i,)), state)
            fwd.append(state[0])
        final_f = state[0]
        bwd = [None] * m
        state = (cells.zero_state(g, (self.hidden_dim,)),
                 cells.zero_state(g, (self.hidden_dim,)))
        for i in reversed(range(m)):
            state = cells.lstm_step(g, p, "abs.enc_b", g.slice(emb, (i,)), state)
            bwd[i] = state[0]
        final_b = state[0]
        enc_states = g.concat([g.stack(fwd, axis=0), g.stack(bwd, axis=0)], axis=-1)
        finals = g.concat([final_f, final_b], axis=0)
        h0 = g.add(g.matmul(finals, p["abs.init_h.W"]), p["abs.init_h.b"])
        c0 = g.add(g.matmul(finals, p["abs.init_c.W"]), p["abs.init_c.b"])
        att_enc = g.add(g.matmul(enc_states, p["abs.att.Wh"]), p["abs.att.b"])
        return EncodedArticle(indexed=indexed, enc_states=enc_states,
                              att_enc=att_enc, state0=(h0, c0),
                              zero_coverage=cells.zero_state(g, (m,)))

    def raw_attention(self, g, p, enc, state_h, coverage):
        """Word attention from the current decoder state and coverage."""
        ws = g.matmul(state_h, p["abs.att.Ws"])
        cov = g.mul(g.reshape(coverage, (enc.num_tokens, 1)), p["abs.att.wc"])
        scores = g.matmul(g.tanh(g.add(g.add(enc.att_enc, ws), cov)), p["abs.att.v"])
        return g.softmax(scores)

    def decode_step(self, g, p, enc, x_emb, state_h, alpha_hat, p_gen_override=None):
        """Context, vocabulary distribution, copy mixture for one step.

        `alpha_hat` is whatever attention the caller wants contexts and copy
        mass computed from (fused when sentence attention is in play, raw
        otherwise). `state_h` is the already-advanced decoder hidden state.
        """
        total = alpha_hat.value.sum()
        if not np.isfinite(total) or abs(total - 1.0) > SIMPLEX_TOL:
            raise NumericError(f"attention is off the simplex (sum {total!r})")
        context = g.matmul(alpha_hat, enc.enc_states)
        hidden = g.add(g.matmul(g.concat([state_h, context], axis=0),
                                p["abs.out.W1"]), p["abs.out.b1"])
        p_vocab = g.softmax(g.add(g.matmul(hidden, p["abs.out.W2"]), p["abs.out.b2"]))
        if p_gen_override is None:
            pre = g.add(g.add(g.matmul(context, p["abs.pgen.wctx"]),
                              g.matmul(state_h, p["abs.pgen.ws"])),
                        g.add(g.matmul(x_emb, p["abs.pgen.wx"]), p["abs.pgen.b"]))
            p_gen = g.sigmoid(pre)
        else:
            p_gen = g.leaf(np.asarray(float(p_gen_override)), name="p_gen_override")
        indexed = enc.indexed
        extended = self.vocab_size + len(indexed.oov_list)
        generated = g.mul(p_vocab, p_gen)
        if extended > self.vocab_size:
            pad = g.leaf(np.zeros(extended - self.vocab_size), name="oov_pad")
            generated = g.concat([generated, pad], axis=0)
        copy_mass = g.mul(alpha_hat, g.offset(g.scale(p_gen, -1.0), 1.0))
        copied = g.scatter_add(copy_mass, indexed.extended_ids, extended)
        return g.add(generated, copied), p_vocab, p_gen

    def step(self, g, p, enc, x_id, state, coverage, beta=None, p_gen_override=None):
        """Advance the decoder one step: state update, attention, fusion,
        output distribution."""
        x_emb = g.gather(p["abs.embed"], np.asarray(int(x_id), dtype=np.int64))
        state = cells.lstm_step(g, p, "abs.dec", x_emb, state)
        alpha = self.raw_attention(g, p, enc, state[0], coverage)
        if beta is not None:
            alpha_hat, fell_back = fusion.combine(
                g, alpha, beta, enc.indexed.article.word_to_sentence)
        else:
            alpha_hat, fell_back = alpha, False
        p_final, p_vocab, p_gen = self.decode_step(
            g, p, enc, x_emb, state[0], alpha_hat, p_gen_override)
        return StepResult(state=state, alpha=alpha, alpha_hat=alpha_hat,
                          fell_back=fell_back, p_gen=p_gen, p_vocab=p_vocab,
                          p_final=p_final)

    def teacher_forced(self, g, p, enc, input_ids, target_ids, beta=None,
                       track_coverage=False):
        """Losses for one reference sequence under teacher forcing.

        Coverage accumulates the attention actually used for contexts and
        copying (fused when beta is given, raw otherwise). When coverage is
        not tracked the attention sees a zero coverage vector at every step.
        """
        if len(input_ids) != len(target_ids):
            raise GraphConstructionError(
                f"{len(input_ids)} decoder inputs vs {len(target_ids)} targets")
        extended = self.vocab_size + len(enc.indexed.oov_list)
        targets = np.asarray(target_ids, dtype=np.int64)
        if targets.size and (targets.min() < 0 or targets.max() >= extended):
            raise DataError(f"target id outside extended vocabulary of {extended}")
        state = enc.state0
        coverage = enc.zero_coverage
        alphas, alpha_hats, log_terms, cov_terms = [], [], [], []
        fallback_steps = 0
        for x_id, y_id in zip(input_ids, target_ids):
            result = self.step(g, p, enc, x_id, state, coverage, beta=beta)
            state = result.state
            alphas.append(result.alpha)
            alpha_hats.append(result.alpha_hat)
            fallback_steps += int(result.fell_back)
            picked = g.gather(result.p_final, np.asarray(int(y_id), dtype=np.int64))
            log_terms.append(g.log(picked))
            if track_coverage:
                cov_terms.append(g.reduce_sum(g.minimum(result.alpha_hat, coverage)))
                coverage = g.add(coverage, result.alpha_hat)
        nll = g.scale(g.reduce_mean(g.stack(log_terms, axis=0)), -1.0)
        coverage_loss = None
        if track_coverage:
            coverage_loss = g.reduce_mean(g.stack(cov_terms, axis=0))
        return TeacherForcedResult(nll=nll, coverage_loss=coverage_loss,
                                   alphas=alphas, alpha_hats=alpha_hats,
                                   fallback_steps=fallback_steps)

    def _input_id(self, ext_id):
        return ext_id if ext_id < self.vocab_size else UNK

    def decode(self, indexed, beta=None, beam_width=1, max_len=120,
               track_coverage=True):
        """Inference decoding; greedy when beam_width is 1.

        Hypotheses are ranked by total log-probability; ties prefer the
        lower token id, which makes width-1 beam identical to greedy argmax.
        """
        g = Graph()
        p = self.bind(g)
        enc = self.encode(g, p, indexed)
        beta_node = None
        beta_values = None
        if beta is not None:
            beta_values = np.asarray(beta, dtype=np.float64)
            beta_node = g.leaf(beta_values, name="beta")

        @dataclass
        class Hyp:
            ids: list
            log_prob: float
            state: tuple
            coverage: object
            alphas: list
            fallbacks: int
            done: bool

        start = Hyp(ids=[], log_prob=0.0, state=enc.state0,
                    coverage=enc.zero_coverage, alphas=[], fallbacks=0, done=False)
        beams = [start]
        for _ in range(max_len):
            if all(h.done for h in beams):
                break
            candidates = [h for h in beams if h.done]
            for h in beams:
                if h.done:
                    continue
                x_id = self._input_id(h.ids[-1]) if h.ids else START
                result = self.step(g, p, enc, x_id, h.state, h.coverage,
                                   beta=beta_node)
                log_probs = np.log(np.maximum(result.p_final.value, 1e-300))
                order = np.lexsort((np.arange(log_probs.size), -log_probs))
                next_cov = h.coverage
                if track_coverage:
                    next_cov = g.add(h.coverage, result.alpha_hat)
                for token in order[:beam_width]:
                    token = int(token)
                    candidates.append(Hyp(
                        ids=h.ids + [token],
                        log_prob=h.log_prob + float(log_probs[token]),
                        state=result.state,
                        coverage=next_cov,
                        alphas=h.alphas + [result.alpha.value],
                        fallbacks=h.fallbacks + int(result.fell_back),
                        done=token == STOP))
            candidates.sort(key=lambda h: (-h.log_prob, h.ids))
            beams = candidates[:beam_width]
        best = beams[0]
        ids = best.ids[:-1] if best.ids and best.ids[-1] == STOP else best.ids
        return DecodeResult(ids=ids, alphas=best.alphas[: len(ids)],
                            beta=beta_values, fallback_steps=best.fallbacks)


def nll_loss(g, p_finals, target_ids):
    """Mean negative log-likelihood of the targets under per-step final
    distributions (logs clamped inside the graph's log op)."""
    if len(p_finals) != len(target_ids):
        raise GraphConstructionError(
            f"{len(p_finals)} distributions vs {len(target_ids)} targets")
    terms = []
    for p_final, y_id in zip(p_finals, target_ids):
        y_id = int(y_id)
        if not 0 <= y_id < p_final.shape[0]:
            raise DataError(
                f"target id {y_id} outside distribution of size {p_final.shape[0]}")
        terms.append(g.log(g.gather(p_final, np.asarray(y_id, dtype=np.int64))))
    return g.scale(g.reduce_mean(g.stack(terms, axis=0)), -1.0)


def coverage_loss(g, alpha_hats):
    """Coverage penalty over an attention sequence, plus the running
    coverage vectors c^1..c^{T+1} (c^1 is all zeros)."""
    if not alpha_hats:
        raise GraphConstructionError("coverage loss needs at least one step")
    coverage = cells.zero_state(g, alpha_hats[0].shape)
    coverages = [coverage]
    terms = []
    for alpha_hat in alpha_hats:
        terms.append(g.reduce_sum(g.minimum(alpha_hat, coverage)))
        coverage = g.add(coverage, alpha_hat)
        coverages.append(coverage)
    return g.reduce_mean(g.stack(terms, axis=0)), coverages
