"""Training and evaluation drivers shared by the CLI and the test suite."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterator, Sequence

import numpy as np

from .config import Config
from .data import Episode, Vocabulary, caption_text, gen_copy_episode, gen_recall_episode
from .errors import ConfigError, DataError
from .metrics import EvalPair, bleu4
from .model import Model, token_accuracy
from .optim import Adadelta, clip_gradients
from .search import beam_search
from .tensor import Tape

Batch = list[tuple[Episode, int]]


def synthetic_episode(config: Config, seed: int) -> Episode:
    gen = gen_copy_episode if config.task == "copy" else gen_recall_episode
    return gen(config.num_frames, config.vocab_size, config.key_dim, seed)


def synthetic_stream(config: Config, seed: int) -> Iterator[Batch]:
    """Endless seeded batches of fresh synthetic episodes."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 17]))
    while True:
        batch = []
        for _ in range(config.batch_size):
            ep_seed = int(rng.integers(0, 2**62))
            batch.append((synthetic_episode(config, ep_seed), 0))
        yield batch


def file_stream(episodes: Sequence[Episode], config: Config, seed: int) -> Iterator[Batch]:
    """Endless seeded batches sampled from a fixed episode list."""
    if not episodes:
        raise DataError("dataset is empty")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 23]))
    while True:
        batch = []
        for _ in range(config.batch_size):
            ep = episodes[int(rng.integers(len(episodes)))]
            batch.append((ep, int(rng.integers(len(ep.captions)))))
        yield batch


def train(
    model: Model,
    optimizer: Adadelta,
    batches: Iterator[Batch],
    steps: int,
    clip_norm: float = 5.0,
    on_step: Callable[[int, float], None] | None = None,
) -> list[float]:
    """Run ``steps`` updates; returns the per-step batch losses."""
    if steps < 1:
        raise ConfigError("steps must be at least 1")
    losses = []
    for step in range(1, steps + 1):
        batch = next(batches)
        model.zero_grads()
        tape = Tape()
        loss, _ = model.sequence_loss(tape, [ep for ep, _ in batch], [ci for _, ci in batch])
        tape.backward(loss)
        clip_gradients(model.params.values(), clip_norm)
        optimizer.step()
        value = float(loss.data)
        losses.append(value)
        if on_step is not None:
            on_step(step, value)
    return losses


@dataclass
class EvalResult:
    bleu4: float
    token_acc: float
    n: int
    rows: list[dict]           # per-episode: id, hypothesis, logp, references
    first_alphas: np.ndarray | None
    first_tokens: list[str]

    def report(self) -> dict:
        return {"bleu4": self.bleu4, "token_acc": self.token_acc, "n": self.n}


def evaluate(
    model: Model,
    episodes: Sequence[Episode],
    vocab: Vocabulary,
    beam_width: int | None = None,
    max_len: int | None = None,
    smooth: bool | None = None,
    length_normalize: bool | None = None,
) -> EvalResult:
    """Beam-decode every episode and score the corpus."""
    if not episodes:
        raise DataError("cannot evaluate an empty dataset")
    cfg = model.config
    beam_width = cfg.beam_width if beam_width is None else beam_width
    smooth = cfg.bleu_smoothing if smooth is None else smooth
    length_normalize = cfg.length_normalize if length_normalize is None else length_normalize

    pairs = []
    rows = []
    first_alphas = None
    first_tokens: list[str] = []
    for i, ep in enumerate(episodes):
        cap = max_len if max_len is not None else max(
            cfg.resolved_max_len(), max(len(c) - 1 for c in ep.captions)
        )
        hyp_ids, logp = beam_search(model, ep, beam_width, cap, length_normalize)
        hyp_tokens = vocab.decode([t for t in hyp_ids if t > 3])
        refs = [caption_text(c, vocab).split() for c in ep.captions]
        refs = [r if r else [""] for r in refs]
        pairs.append(EvalPair(hyp_tokens, refs))
        rows.append(
            {
                "id": ep.id,
                "hypothesis": " ".join(hyp_tokens),
                "logp": logp,
                "references": [" ".join(r) for r in refs],
            }
        )
        if i == 0:
            first_alphas, first_tokens = _teacher_free_alphas(model, ep, hyp_ids, vocab)
    acc = token_accuracy(model, episodes)
    return EvalResult(
        bleu4=bleu4(pairs, smooth=smooth),
        token_acc=acc,
        n=len(episodes),
        rows=rows,
        first_alphas=first_alphas,
        first_tokens=first_tokens,
    )


def _teacher_free_alphas(
    model: Model, episode: Episode, tokens: list[int], vocab: Vocabulary
) -> tuple[np.ndarray | None, list[str]]:
    """Attention weights along a decoded sequence, for the report figure."""
    if not tokens:
        return None, []
    from dataclasses import replace

    tape = Tape()
    slots, addr, dec = model.start_decode(tape, episode)
    prev = 1  # BOS
    alphas = []
    for tok in tokens:
        dec = replace(dec, prev_token=prev)
        addr, _, dec, _, _ = model.advance(tape, slots, addr, dec)
        alphas.append(addr.alpha.data.copy())
        prev = tok
    return np.stack(alphas), vocab.decode(tokens)
