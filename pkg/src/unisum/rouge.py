"""N-gram overlap and longest-common-subsequence summary metrics.

All scores are computed on token sequences against a single reference.
Degenerate inputs (empty candidate or reference) score zero rather than
raising, so callers can aggregate over a corpus without special cases.
"""

from collections import Counter
from dataclasses import dataclass


@dataclass(frozen=True)
class RougeScore:
    precision: float
    recall: float
    f1: float


def _score(matches, candidate_total, reference_total):
    precision = matches / candidate_total if candidate_total else 0.0
    recall = matches / reference_total if reference_total else 0.0
    f1 = 2.0 * precision * recall / (precision + recall) if precision + recall else 0.0
    return RougeScore(precision, recall, f1)


def _ngrams(tokens, n):
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def rouge_n(candidate, reference, n):
    """N-gram overlap with clipped counts: each reference n-gram occurrence
    can be matched at most once."""
    if n < 1:
        raise ValueError(f"n-gram order must be positive, got {n}")
    cand = _ngrams(candidate, n)
    ref = _ngrams(reference, n)
    matches = sum(min(count, ref[gram]) for gram, count in cand.items())
    return _score(matches, sum(cand.values()), sum(ref.values()))


def lcs_length(a, b):
    """Longest common subsequence length by dynamic programming."""
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        curr = [0]
        for j, y in enumerate(b):
            curr.append(prev[j] + 1 if x == y else max(prev[j + 1], curr[j]))
        prev = curr
    return prev[-1]


def rouge_l(candidate, reference):
    """Longest-common-subsequence overlap (sequence-level, single reference)."""
    matches = lcs_length(candidate, reference)
    return _score(matches, len(candidate), len(reference))
