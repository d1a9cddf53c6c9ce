"""End-to-end gradient verification across every model variant.

Builds a tiny model per (addressing mode, key mode) combination, runs one
teacher-forced episode loss, and compares tape gradients for every parameter
entry against central finite differences.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

from .config import Config
from .data import gen_copy_episode
from .model import Model
from .tensor import Tape, grad_check

TOLERANCE = 1e-4

TINY = dict(
    key_dim=4,
    value_dim=4,
    hidden_dim=6,
    embed_dim=5,
    attn_dim=4,
    num_frames=5,
    vocab_size=7,
    batch_size=1,
)


@dataclass
class GradCheckRow:
    mode: str
    key_mode: str
    max_rel_err: float
    n_params: int
    seconds: float

    @property
    def ok(self) -> bool:
        return self.max_rel_err < TOLERANCE


def check_combination(mode: str, key_mode: str, eps: float = 1e-5, seed: int = 11) -> GradCheckRow:
    config = Config(mode=mode, key_mode=key_mode, **TINY)
    model = Model(config, seed=seed)
    episode = gen_copy_episode(config.num_frames, config.vocab_size, config.key_dim, seed=seed + 1)

    def build():
        tape = Tape()
        loss, _ = model.sequence_loss(tape, [episode])
        return tape, loss

    params = list(model.params.values())
    n = sum(p.numel() for p in params)
    started = time.perf_counter()
    err = grad_check(build, params, eps=eps)
    return GradCheckRow(mode, key_mode, err, n, time.perf_counter() - started)


def check_all(eps: float = 1e-5, seed: int = 11) -> list[GradCheckRow]:
    rows = []
    for mode in ("none", "t", "m"):
        for key_mode in ("direct", "rnn"):
            rows.append(check_combination(mode, key_mode, eps=eps, seed=seed))
    return rows
