"""Seeded synthetic corpus for end-to-end exercises.

Each article mixes filler sentences with one or two salient sentences of the
form "<entity> <content> <content> .". The reference summary restates the
salient sentences with half of the content vocabulary swapped for fixed
synonyms, so a summarizer must both copy (entities are unique per article
and mostly out of vocabulary) and generate (synonyms never appear in the
article). Filler words never appear in references, which makes the greedy
label oracle recover the salient mask exactly.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

# Content words and the form they take in reference summaries. Half map to
# themselves so every salient sentence stays partially copyable.
SUMMARY_FORM = {
    "storm": "storm",
    "river": "river",
    "mountain": "mountain",
    "harbor": "harbor",
    "engine": "engine",
    "garden": "garden",
    "doctor": "medic",
    "car": "vehicle",
    "dog": "hound",
    "music": "melody",
    "fire": "blaze",
    "road": "path",
}
CONTENT_WORDS = sorted(SUMMARY_FORM)

FILLER_WORDS = [
    "the", "quiet", "morning", "walk", "went", "over", "there", "slowly",
    "again", "later", "always", "often", "still", "very", "quite", "rather",
    "nearby", "around", "beyond", "under",
]


@dataclass
class SynthConfig:
    num_articles: int = 200
    min_sentences: int = 4
    max_sentences: int = 6
    min_filler_tokens: int = 2
    max_filler_tokens: int = 4
    min_salient: int = 1
    max_salient: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.num_articles < 1:
            raise ConfigError("num_articles must be positive")
        if not 1 <= self.min_salient <= self.max_salient <= self.min_sentences:
            raise ConfigError("salient range must fit inside the sentence range")
        if self.min_sentences > self.max_sentences:
            raise ConfigError("min_sentences exceeds max_sentences")
        if not 1 <= self.min_filler_tokens <= self.max_filler_tokens:
            raise ConfigError("bad filler token range")


def generate(config):
    """Return (article_text, summary_text) records, deterministically from
    the config seed. Entity tokens are drawn without replacement across the
    whole corpus, so any split of the output keeps them disjoint."""
    rng = np.random.default_rng(config.seed)
    max_entities = config.num_articles * config.max_salient
    if max_entities > 100000:
        raise ConfigError("corpus too large for the entity id space")
    entity_pool = rng.choice(100000, size=max_entities, replace=False)
    next_entity = 0

    records = []
    for _ in range(config.num_articles):
        num_sentences = int(rng.integers(config.min_sentences, config.max_sentences + 1))
        num_salient = int(rng.integers(config.min_salient, config.max_salient + 1))
        salient_at = set(
            int(i) for i in rng.choice(num_sentences, size=num_salient, replace=False)
        )
        sentences = []
        summary_parts = []
        for n in range(num_sentences):
            if n in salient_at:
                entity = f"ent{entity_pool[next_entity]:05d}"
                next_entity += 1
                picks = rng.choice(len(CONTENT_WORDS), size=2, replace=False)
                words = [CONTENT_WORDS[int(i)] for i in picks]
                sentences.append(" ".join([entity] + words + ["."]))
                summary_parts.extend([entity] + [SUMMARY_FORM[w] for w in words])
            else:
                length = int(rng.integers(config.min_filler_tokens,
                                          config.max_filler_tokens + 1))
                picks = rng.choice(len(FILLER_WORDS), size=length, replace=True)
                sentences.append(" ".join(FILLER_WORDS[int(i)] for i in picks) + " .")
        records.append((" ".join(sentences), " ".join(summary_parts)))
    return records


def split(records, train_frac=0.8, dev_frac=0.1):
    """Deterministic contiguous train/dev/test split of generated records."""
    if not 0.0 < train_frac < 1.0 or dev_frac < 0.0 or train_frac + dev_frac >= 1.0:
        raise ConfigError("split fractions must leave room for all three parts")
    n = len(records)
    n_train = max(1, int(round(n * train_frac)))
    n_dev = max(1, int(round(n * dev_frac)))
    if n_train + n_dev >= n:
        raise ConfigError(f"corpus of {n} records too small for the requested split")
    return (records[:n_train],
            records[n_train:n_train + n_dev],
            records[n_train + n_dev:])
