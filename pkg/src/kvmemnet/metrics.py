"""Corpus-level BLEU@4 with clipped modified n-gram precision."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Sequence


@dataclass
class EvalPair:
    """One hypothesis against its references, as surface token lists with
    BOS/EOS already stripped."""

    hypothesis: list[str]
    references: list[list[str]]

    def validate(self) -> None:
        if not self.references:
            raise ValueError("every pair needs at least one reference")


def _ngram_counts(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def modified_precision(pairs: Sequence[EvalPair], n: int) -> tuple[int, int]:
    """Corpus-summed (clipped matches, total hypothesis n-grams)."""
    if n < 1:
        raise ValueError("n must be at least 1")
    matches = 0
    total = 0
    for pair in pairs:
        pair.validate()
        hyp_counts = _ngram_counts(pair.hypothesis, n)
        if not hyp_counts:
            continue
        ceilings: Counter = Counter()
        for ref in pair.references:
            for gram, count in _ngram_counts(ref, n).items():
                if count > ceilings[gram]:
                    ceilings[gram] = count
        for gram, count in hyp_counts.items():
            matches += min(count, ceilings[gram])
            total += count
    return matches, total


def closest_reference_length(hyp_len: int, ref_lens: Sequence[int]) -> int:
    """Reference length closest to the hypothesis; ties pick the shorter."""
    return min(ref_lens, key=lambda r: (abs(r - hyp_len), r))


def bleu4(pairs: Sequence[EvalPair], smooth: bool = False) -> float:
    """Geometric mean of p1..p4 times the brevity penalty.

    Without smoothing, any empty n-gram numerator zeroes the score; with
    ``smooth`` every precision becomes (matches+1)/(total+1).
    """
    if not pairs:
        return 0.0
    hyp_total = sum(len(p.hypothesis) for p in pairs)
    if hyp_total == 0:
        return 0.0
    ref_total = 0
    for p in pairs:
        p.validate()
        ref_total += closest_reference_length(len(p.hypothesis), [len(r) for r in p.references])

    log_sum = 0.0
    for n in range(1, 5):
        matches, total = modified_precision(pairs, n)
        if smooth:
            matches, total = matches + 1, total + 1
        if matches == 0:
            return 0.0
        log_sum += math.log(matches / total)
    brevity = 1.0 if hyp_total >= ref_total else math.exp(1.0 - ref_total / hyp_total)
    return brevity * math.exp(log_sum / 4.0)
