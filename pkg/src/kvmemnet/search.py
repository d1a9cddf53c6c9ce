"""Greedy and beam decoding over a trained model.

Hypotheses begin at BOS and grow one token per step. PAD and BOS are never
proposed; UNK is a legal output. A hypothesis that emits EOS is finished and
frozen, but keeps competing for beam slots on its final score. Ties are
broken by score first, then by lexicographically smaller token sequence.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .data import Episode
from .errors import ConfigError
from .layers import BOS, EOS, PAD
from .model import AddressingState, DecoderState, Model
from .tensor import Tape


@dataclass
class Hypothesis:
    tokens: tuple[int, ...]  # starts with BOS
    logp: float
    dec: DecoderState
    addr: AddressingState
    finished: bool

    def generated(self) -> list[int]:
        return list(self.tokens[1:])


def _score(h: Hypothesis, length_normalize: bool) -> float:
    if not length_normalize:
        return h.logp
    return h.logp / max(1, len(h.tokens) - 1)


def _rank_key(length_normalize: bool):
    return lambda h: (-_score(h, length_normalize), h.tokens)


def beam_search(
    model: Model,
    episode: Episode,
    beam_width: int = 5,
    max_len: int | None = None,
    length_normalize: bool = False,
) -> tuple[list[int], float]:
    """Best decoded token sequence (EOS kept when reached) and its log-prob."""
    if beam_width < 1:
        raise ConfigError("beam_width must be at least 1")
    if max_len is None:
        max_len = model.config.resolved_max_len()
    if max_len < 1:
        raise ConfigError("max_len must be at least 1")

    tape = Tape()
    slots, addr0, dec0 = model.start_decode(tape, episode)
    live = [Hypothesis((BOS,), 0.0, dec0, addr0, False)]
    finished: list[Hypothesis] = []
    vocab = model.config.vocab_size
    key = _rank_key(length_normalize)

    for _ in range(max_len):
        if not live:
            break
        candidates = list(finished)
        for hyp in live:
            dec_in = replace(hyp.dec, prev_token=hyp.tokens[-1])
            addr2, _, dec2, _, probs = model.advance(tape, slots, hyp.addr, dec_in)
            with np.errstate(divide="ignore"):
                logp = np.log(probs)
            for tok in range(vocab):
                if tok in (PAD, BOS):
                    continue
                candidates.append(
                    Hypothesis(
                        tokens=hyp.tokens + (tok,),
                        logp=hyp.logp + float(logp[tok]),
                        dec=dec2,
                        addr=addr2,
                        finished=tok == EOS,
                    )
                )
        candidates.sort(key=key)
        kept = candidates[:beam_width]
        finished = [h for h in kept if h.finished]
        live = [h for h in kept if not h.finished]

    pool = finished if finished else live
    best = min(pool, key=key)
    return best.generated(), best.logp


def greedy_decode(model: Model, episode: Episode, max_len: int | None = None) -> list[int]:
    """Argmax decoding; ties go to the lowest allowed token id."""
    if max_len is None:
        max_len = model.config.resolved_max_len()
    if max_len < 1:
        raise ConfigError("max_len must be at least 1")
    tape = Tape()
    slots, addr, dec = model.start_decode(tape, episode)
    prev = BOS
    out: list[int] = []
    for _ in range(max_len):
        dec_in = replace(dec, prev_token=prev)
        addr, _, dec, _, probs = model.advance(tape, slots, addr, dec_in)
        masked = probs.copy()
        masked[PAD] = -1.0
        masked[BOS] = -1.0
        tok = int(np.argmax(masked))  # first max wins, so ties pick the lowest id
        out.append(tok)
        if tok == EOS:
            break
        prev = tok
    return out
