"""Command-line entry point for the whole pipeline.

Subcommands: gen-synth, make-labels, pretrain-ext, pretrain-abs,
train-two-stage, train-e2e, decode, evaluate, score-rouge, gradcheck.
Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numeric error. Diagnostics go to stderr; results go to stdout or --out.
"""

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict, fields

import numpy as np

from . import checkpoint as ckpt_mod
from . import config as config_mod
from . import corpus, gradcheck, oracle, rouge, synthetic, trainer
from .config import TrainConfig
from .errors import ConfigError, DataError, NumericError, UnisumError
from .extractor import Extractor

log = logging.getLogger(__name__)

_TERMINAL = {".", "!", "?"}
_ATTACH = {".", ",", "!", "?", ";", ":", ")", "]", "}", "'"}


def detokenize(tokens):
    """Human-readable rendering: attach punctuation, capitalize sentence
    starts. Scoring always happens on raw tokens, never on this form."""
    pieces = []
    capitalize = True
    for tok in tokens:
        if tok in _ATTACH and pieces:
            pieces[-1] += tok
        else:
            if capitalize and tok and tok[0].isalpha():
                tok = tok[0].upper() + tok[1:]
            pieces.append(tok)
        if tok in _TERMINAL:
            capitalize = True
        elif tok not in _ATTACH:
            capitalize = False
    return " ".join(pieces)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(f"{message}\n{self.format_usage()}")


def _bool_flag(text):
    lowered = text.lower()
    if lowered in ("true", "1", "yes", "on"):
        return True
    if lowered in ("false", "0", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _add_base_flags(parser):
    parser.add_argument("--preset", choices=("desk", "paper"),
                        help="base configuration family")
    parser.add_argument("--config", metavar="JSON",
                        help="config file; flags override its values")
    parser.add_argument("--seed", type=int, default=None)


def _add_config_flags(parser):
    _add_base_flags(parser)
    for f in fields(TrainConfig):
        if f.name in ("regime", "preset", "seed"):
            continue
        flag = "--" + f.name.replace("_", "-")
        if isinstance(f.default, bool):
            parser.add_argument(flag, type=_bool_flag, default=None,
                                metavar="BOOL")
        elif isinstance(f.default, int):
            parser.add_argument(flag, type=int, default=None)
        elif isinstance(f.default, float):
            parser.add_argument(flag, type=float, default=None)
        else:
            parser.add_argument(flag, default=None)


def _resolve_config(args, regime, base=None):
    """Precedence: --config file, else --preset, else the supplied base
    (a checkpoint's config), else the desk preset. Explicit flags override."""
    if getattr(args, "config", None):
        resolved = config_mod.load(args.config)
    elif getattr(args, "preset", None):
        resolved = config_mod.preset(args.preset, regime or "pretrain-ext")
    elif base is not None:
        resolved = base
    else:
        resolved = config_mod.preset("desk", regime or "pretrain-ext")
    data = asdict(resolved)
    if regime is not None:
        data["regime"] = regime
    for f in fields(TrainConfig):
        override = getattr(args, f.name, None)
        if f.name not in ("regime", "preset") and override is not None:
            data[f.name] = override
    cfg = config_mod.from_dict(data)
    print(f"resolved config fingerprint: {cfg.fingerprint()}", file=sys.stderr)
    return cfg


def _emit(text, out_path):
    if out_path:
        with open(out_path, "w", encoding="utf-8") as fh:
            fh.write(text if text.endswith("\n") else text + "\n")
    else:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")


def _load_vocab_or_build(path, pairs, cfg):
    if os.path.exists(path):
        return corpus.load_vocab(path)
    sequences = []
    for pair in pairs:
        sequences.append(pair.article.tokens)
        sequences.append(pair.reference)
    vocab = corpus.build_vocab(sequences, cfg.vocab_size)
    corpus.save_vocab(vocab, path)
    log.info("built vocabulary of %d entries at %s", vocab.size, path)
    return vocab


def _require_vocab(path):
    if not os.path.exists(path):
        raise DataError(f"vocabulary file not found: {path}")
    return corpus.load_vocab(path)


def _load_labels_for(pairs, path):
    if path is None:
        return None
    labels = corpus.load_labels(path)
    if len(labels) != len(pairs):
        raise DataError(f"{path}: {len(labels)} label rows for {len(pairs)} records")
    return labels


def _check_vocab_matches(ckpt, vocab):
    for key in ("ext.embed", "abs.embed"):
        if key in ckpt.params and ckpt.params[key].shape[0] != vocab.size:
            raise DataError(
                f"checkpoint embeds {ckpt.params[key].shape[0]} words but the "
                f"vocabulary has {vocab.size}; wrong --vocab file?")


def _save_run(result, args):
    ckpt_mod.save(result.best, args.out)
    log.info("best checkpoint (iteration %d) written to %s",
             result.best.iteration, args.out)
    if getattr(args, "state_out", None):
        ckpt_mod.save(result.final, args.state_out)
        log.info("final training state written to %s", args.state_out)


def _resume_from(args):
    if getattr(args, "resume", None):
        return ckpt_mod.load(args.resume)
    return None


# ---- subcommands -------------------------------------------------------------

def cmd_gen_synth(args):
    _resolve_config(args, None)
    synth = synthetic.SynthConfig(
        num_articles=args.num_articles,
        seed=args.seed if args.seed is not None else 0,
        min_sentences=args.min_sentences, max_sentences=args.max_sentences,
        min_salient=args.min_salient, max_salient=args.max_salient)
    records = synthetic.generate(synth)
    train, dev, test = synthetic.split(records, args.train_frac, args.dev_frac)
    os.makedirs(args.out, exist_ok=True)
    counts = {}
    for name, part in (("train", train), ("dev", dev), ("test", test)):
        path = os.path.join(args.out, f"{name}.jsonl")
        corpus.save_pairs(part, path)
        counts[name] = len(part)
    _emit(json.dumps(counts, sort_keys=True), None)
    return 0


def cmd_make_labels(args):
    cfg = _resolve_config(args, "pretrain-ext")
    pairs = corpus.load_pairs(args.corpus)
    labels = []
    for pair in pairs:
        article = trainer._truncated_article(pair, cfg)
        labels.append(oracle.extract_labels(article, pair.reference))
    corpus.save_labels(labels, args.out)
    log.info("wrote %d label rows to %s", len(labels), args.out)
    return 0


def cmd_pretrain_ext(args):
    cfg = _resolve_config(args, "pretrain-ext")
    pairs = corpus.load_pairs(args.corpus)
    val_pairs = corpus.load_pairs(args.val)
    vocab = _load_vocab_or_build(args.vocab, pairs, cfg)
    result = trainer.pretrain_extractor(
        pairs, val_pairs, vocab, cfg,
        labels=_load_labels_for(pairs, args.labels),
        val_labels=_load_labels_for(val_pairs, args.val_labels),
        resume=_resume_from(args))
    _save_run(result, args)
    return 0


def cmd_pretrain_abs(args):
    cfg = _resolve_config(args, "pretrain-abs")
    pairs = corpus.load_pairs(args.corpus)
    val_pairs = corpus.load_pairs(args.val)
    vocab = _load_vocab_or_build(args.vocab, pairs, cfg)
    result = trainer.pretrain_abstracter(
        pairs, val_pairs, vocab, cfg,
        labels=_load_labels_for(pairs, args.labels),
        val_labels=_load_labels_for(val_pairs, args.val_labels),
        resume=_resume_from(args))
    _save_run(result, args)
    return 0


def cmd_train_two_stage(args):
    cfg = _resolve_config(args, "two-stage")
    pairs = corpus.load_pairs(args.corpus)
    val_pairs = corpus.load_pairs(args.val)
    vocab = _require_vocab(args.vocab)
    ext_ckpt = ckpt_mod.load(args.ext)
    abs_ckpt = ckpt_mod.load(args.abs)
    _check_vocab_matches(ext_ckpt, vocab)
    _check_vocab_matches(abs_ckpt, vocab)
    result = trainer.train_two_stage(pairs, val_pairs, vocab, cfg,
                                     ext_ckpt, abs_ckpt, resume=_resume_from(args))
    _save_run(result, args)
    return 0


def cmd_train_e2e(args):
    cfg = _resolve_config(args, "e2e")
    pairs = corpus.load_pairs(args.corpus)
    val_pairs = corpus.load_pairs(args.val)
    vocab = _require_vocab(args.vocab)
    ext_ckpt = ckpt_mod.load(args.ext)
    abs_ckpt = ckpt_mod.load(args.abs)
    _check_vocab_matches(ext_ckpt, vocab)
    _check_vocab_matches(abs_ckpt, vocab)
    result = trainer.train_end2end(
        pairs, val_pairs, vocab, cfg, ext_ckpt, abs_ckpt,
        labels=_load_labels_for(pairs, args.labels),
        val_labels=_load_labels_for(val_pairs, args.val_labels),
        resume=_resume_from(args))
    _save_run(result, args)
    return 0


def cmd_decode(args):
    ckpt = ckpt_mod.load(args.ckpt)
    cfg = _resolve_config(args, None, base=ckpt.config)
    vocab = _require_vocab(args.vocab)
    _check_vocab_matches(ckpt, vocab)
    if not ckpt.has_abstracter():
        raise DataError("checkpoint holds no abstracter; cannot decode")
    from .abstracter import Abstracter
    abst = Abstracter.from_params(
        {k: v for k, v in ckpt.params.items() if k.startswith("abs.")})
    ext = None
    if ckpt.has_extractor():
        ext = Extractor.from_params(
            {k: v for k, v in ckpt.params.items() if k.startswith("ext.")})
    pairs = corpus.load_pairs(args.corpus)
    lines = []
    for pair in pairs:
        article = trainer._truncated_article(pair, cfg)
        indexed = corpus.index_article(article, vocab)
        beta = ext.predict(indexed) if ext is not None else None
        result = abst.decode(indexed, beta=beta, beam_width=cfg.beam_width,
                             max_len=cfg.decode_max_len)
        tokens = corpus.deindex(result.ids, vocab, indexed.oov_list)
        lines.append(detokenize(tokens))
    _emit("\n".join(lines) + ("\n" if lines else ""), args.out)
    return 0


def cmd_evaluate(args):
    ckpt = ckpt_mod.load(args.ckpt)
    cfg = _resolve_config(args, None, base=ckpt.config)
    ckpt.config = cfg
    vocab = _require_vocab(args.vocab)
    _check_vocab_matches(ckpt, vocab)
    pairs = corpus.load_pairs(args.corpus)
    report = trainer.evaluate(pairs, ckpt, vocab)
    _emit(report.to_json(), args.out)
    return 0


def cmd_score_rouge(args):
    _resolve_config(args, None)
    with open(args.candidate, encoding="utf-8") as fh:
        cand_lines = [line.rstrip("\n") for line in fh]
    with open(args.reference, encoding="utf-8") as fh:
        ref_lines = [line.rstrip("\n") for line in fh]
    if len(cand_lines) != len(ref_lines):
        raise DataError(f"{len(cand_lines)} candidates vs {len(ref_lines)} references")
    if not cand_lines:
        raise DataError("no summaries to score")
    rows = []
    for cand, ref in zip(cand_lines, ref_lines):
        c, r = corpus.tokenize(cand), corpus.tokenize(ref)
        if args.metric == "L":
            rows.append(rouge.rouge_l(c, r))
        else:
            rows.append(rouge.rouge_n(c, r, int(args.metric)))
    score = {
        "precision": float(np.mean([row.precision for row in rows])),
        "recall": float(np.mean([row.recall for row in rows])),
        "f1": float(np.mean([row.f1 for row in rows])),
    }
    _emit(json.dumps(score, sort_keys=True, indent=2), args.out)
    return 0


def cmd_gradcheck(args):
    _resolve_config(args, None)
    if args.dims != "toy":
        raise ConfigError(f"unsupported --dims {args.dims!r}; only 'toy' exists")
    reports = gradcheck.check_all(epsilon=args.eps, tolerance=args.tol,
                                  seed=args.check_seed)
    lines = []
    worst_failures = []
    for name, report in reports.items():
        lines.append(f"{name}: {report.summary()}")
        if not report.passed:
            worst_failures.append(name)
    _emit("\n".join(lines), args.out)
    if worst_failures:
        raise NumericError(f"gradient check failed for {', '.join(worst_failures)}")
    return 0


# ---- parser ------------------------------------------------------------------

def build_parser():
    parser = _Parser(prog="unisum",
                     description="Unified extractive/abstractive summarizer.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("gen-synth", help="write a synthetic corpus split")
    p.add_argument("--out", required=True, metavar="DIR")
    p.add_argument("--num-articles", type=int, default=200)
    p.add_argument("--min-sentences", type=int, default=4)
    p.add_argument("--max-sentences", type=int, default=6)
    p.add_argument("--min-salient", type=int, default=1)
    p.add_argument("--max-salient", type=int, default=2)
    p.add_argument("--train-frac", type=float, default=0.8)
    p.add_argument("--dev-frac", type=float, default=0.1)
    _add_base_flags(p)
    p.set_defaults(func=cmd_gen_synth)

    p = sub.add_parser("make-labels", help="write greedy oracle labels")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_make_labels)

    for name, func, needs_ckpts, needs_labels in (
            ("pretrain-ext", cmd_pretrain_ext, False, True),
            ("pretrain-abs", cmd_pretrain_abs, False, True),
            ("train-two-stage", cmd_train_two_stage, True, False),
            ("train-e2e", cmd_train_e2e, True, True)):
        p = sub.add_parser(name, help=f"run the {name} regime")
        p.add_argument("--corpus", required=True)
        p.add_argument("--val", required=True)
        p.add_argument("--vocab", required=True)
        p.add_argument("--out", required=True)
        p.add_argument("--state-out", help="also save the final resumable state")
        p.add_argument("--resume", help="resume from a saved training state")
        if needs_ckpts:
            p.add_argument("--ext", required=True)
            p.add_argument("--abs", required=True)
        if needs_labels:
            p.add_argument("--labels")
            p.add_argument("--val-labels")
        _add_config_flags(p)
        p.set_defaults(func=func)

    p = sub.add_parser("decode", help="write one summary line per record")
    p.add_argument("--corpus", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out")
    _add_config_flags(p)
    p.add_argument("--max-len", dest="decode_max_len", type=int)
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("evaluate", help="write a metrics report")
    p.add_argument("--corpus", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out")
    _add_config_flags(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("score-rouge", help="score candidate summaries")
    p.add_argument("--candidate", required=True)
    p.add_argument("--reference", required=True)
    p.add_argument("--metric", choices=("1", "2", "L"), default="L")
    p.add_argument("--out")
    _add_base_flags(p)
    p.set_defaults(func=cmd_score_rouge)

    p = sub.add_parser("gradcheck", help="finite-difference check all losses")
    p.add_argument("--dims", default="toy")
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--tol", type=float, default=1e-3)
    p.add_argument("--check-seed", type=int, default=0)
    p.add_argument("--out")
    _add_base_flags(p)
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None):
    logging.basicConfig(stream=sys.stderr, level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 3
    except UnisumError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
