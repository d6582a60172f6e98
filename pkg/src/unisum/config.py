"""Run configuration: one flat record covering model dimensions, loss
weights, optimization, truncation limits, and decoding.

Two preset families exist: `paper` (full-scale hyperparameters) and `desk`
(minutes-on-a-laptop scale). Several settings vary by training regime, so
presets are resolved per regime. A config's fingerprint is a stable hash of
every field; runs print it and checkpoints embed it.
"""

import hashlib
import json
from dataclasses import asdict, dataclass, fields

from .errors import ConfigError

REGIMES = ("pretrain-ext", "pretrain-abs", "two-stage", "e2e")


@dataclass
class TrainConfig:
    regime: str = "pretrain-ext"
    preset: str = "desk"
    seed: int = 0

    # model dimensions
    vocab_size: int = 64
    embed_dim: int = 16
    ext_hidden: int = 32
    abs_hidden: int = 32

    # loss weights and fusion
    lambda1: float = 5.0
    lambda2: float = 1.0
    lambda3: float = 1.0
    lambda4: float = 1.0
    top_k: int = 3
    coverage: bool = True
    beta_threshold: float = 0.5

    # optimization
    learning_rate: float = 0.15
    batch_size: int = 8
    iterations: int = 2000
    coverage_iterations: int = 200
    eval_every: int = 100
    patience: int = 0           # evals without improvement before stopping; 0 = run full budget
    clip_norm: float = 2.0
    adagrad_eps: float = 1e-8

    # truncation limits
    max_sentences: int = 50
    max_sentence_tokens: int = 50
    max_source_tokens: int = 400
    max_summary_tokens: int = 100

    # decoding
    decode_max_len: int = 120
    beam_width: int = 1

    def validate(self):
        if self.regime not in REGIMES:
            raise ConfigError(f"unknown regime {self.regime!r}; expected one of {REGIMES}")
        for lam in ("lambda1", "lambda2", "lambda3", "lambda4"):
            if getattr(self, lam) < 0:
                raise ConfigError(f"{lam} must be nonnegative")
        for name in ("vocab_size", "embed_dim", "ext_hidden", "abs_hidden",
                     "batch_size", "iterations", "top_k", "max_sentences",
                     "max_sentence_tokens", "max_source_tokens",
                     "max_summary_tokens", "beam_width"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if not 0.0 < self.learning_rate:
            raise ConfigError("learning_rate must be positive")
        if not 0.0 <= self.beta_threshold <= 1.0:
            raise ConfigError("beta_threshold must lie in [0, 1]")
        if self.decode_max_len < 0 or self.coverage_iterations < 0 or self.patience < 0:
            raise ConfigError("decode_max_len, coverage_iterations, patience must be >= 0")
        if self.eval_every < 1:
            raise ConfigError("eval_every must be positive")
        return self

    def fingerprint(self):
        payload = json.dumps(asdict(self), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(payload.encode()).hexdigest()[:16]

    def to_json(self):
        return json.dumps(asdict(self), sort_keys=True, indent=2)


_PAPER_COMMON = dict(
    preset="paper", vocab_size=50000, embed_dim=128, ext_hidden=200,
    abs_hidden=256, eval_every=1000, decode_max_len=120, beam_width=4,
    max_sentences=50, max_sentence_tokens=50, max_source_tokens=400,
    max_summary_tokens=100,
)

# Iteration budgets and batch shapes follow the full-scale schedule:
# 27k extractor / 88k abstracter (+1k coverage) / 10k two-stage / 50k joint,
# with the joint phase dropping to batch 8 and learning rate 0.01 and
# widening the source window to 600 tokens.
_PAPER_REGIME = {
    "pretrain-ext": dict(learning_rate=0.15, batch_size=64, iterations=27000),
    "pretrain-abs": dict(learning_rate=0.15, batch_size=16, iterations=88000,
                         coverage_iterations=1000),
    "two-stage": dict(learning_rate=0.15, batch_size=16, iterations=10000),
    "e2e": dict(learning_rate=0.01, batch_size=8, iterations=50000,
                max_source_tokens=600),
}

_DESK_COMMON = dict(
    preset="desk", vocab_size=64, embed_dim=16, ext_hidden=32, abs_hidden=32,
    eval_every=100, decode_max_len=16, beam_width=1, max_sentences=12,
    max_sentence_tokens=12, max_source_tokens=80, max_summary_tokens=12,
)

_DESK_REGIME = {
    "pretrain-ext": dict(learning_rate=0.15, batch_size=8, iterations=2000),
    "pretrain-abs": dict(learning_rate=0.15, batch_size=8, iterations=4000,
                         coverage_iterations=200),
    "two-stage": dict(learning_rate=0.15, batch_size=8, iterations=1000),
    "e2e": dict(learning_rate=0.05, batch_size=4, iterations=2000),
}


def preset(name, regime):
    """Resolved configuration for a preset family and training regime."""
    if regime not in REGIMES:
        raise ConfigError(f"unknown regime {regime!r}; expected one of {REGIMES}")
    if name == "paper":
        merged = dict(_PAPER_COMMON, **_PAPER_REGIME[regime])
    elif name == "desk":
        merged = dict(_DESK_COMMON, **_DESK_REGIME[regime])
    else:
        raise ConfigError(f"unknown preset {name!r}; expected 'desk' or 'paper'")
    return TrainConfig(regime=regime, **merged).validate()


def from_dict(data):
    """TrainConfig from a plain dict, rejecting unknown keys."""
    known = {f.name for f in fields(TrainConfig)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown config fields: {sorted(unknown)}")
    return TrainConfig(**data).validate()


def load(path):
    with open(path, encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: config file must hold a JSON object")
    return from_dict(data)
