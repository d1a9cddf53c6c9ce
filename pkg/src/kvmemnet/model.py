"""Key-value memory sequence model.

Each input frame becomes one memory slot holding a key (used to decide where
to attend) and a value (what gets read). Per output step the model forms a
query from a key-summary state and the previous decoder state, scores every
key, softmaxes the scores into attention weights, reads the values under
those weights, and feeds the read vector into a context-aware recurrent
decoder whose readout predicts the next token.

Three addressing variants differ only in where the key-summary comes from:

* ``none`` - the query uses the previous decoder state alone;
* ``t``    - the summary is last step's attention-weighted key read;
* ``m``    - a dedicated recurrent cell consumes that key read each step and
             its hidden state becomes the summary.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .config import Config
from .errors import ConfigError, DataError, ShapeError
from .data import Episode
from .layers import BOS, EOS, PAD, LstmParams, embed, linear, lstm_step, softmax_xent
from .optim import init_uniform
from .tensor import Tape, Tensor, zeros


@dataclass
class MemorySlot:
    key: Tensor
    value: Tensor
    index: int  # 1-based frame position


@dataclass
class AddressingState:
    """Attention weights plus the recurrent key-summary carried across steps.

    ``query`` is a diagnostic copy of the score query that produced ``alpha``
    (None for the initial state).
    """

    alpha: Tensor
    h_k: Tensor
    c_k: Tensor
    phi_k: Tensor
    query: Tensor | None = None


@dataclass
class DecoderState:
    h: Tensor
    c: Tensor
    prev_token: int
    t: int  # 1-based index of the step about to be produced


@dataclass
class AddressingParams:
    mode: str
    W_d: Tensor
    U_a: Tensor
    w: Tensor
    W_k: Tensor | None = None
    key_lstm: LstmParams | None = None


def build_keys(
    tape: Tape,
    frame_tensors: Sequence[Tensor],
    key_mode: str,
    encoder: LstmParams | None = None,
    output_tanh: bool = False,
) -> list[Tensor]:
    """Per-frame keys: the frame vectors themselves, or encoder states."""
    if not frame_tensors:
        raise ShapeError("at least one frame is required")
    if key_mode == "direct":
        return list(frame_tensors)
    if key_mode == "rnn":
        if encoder is None:
            raise ConfigError("rnn key_mode needs encoder parameters")
        d = encoder.hidden_size
        h, c = zeros(d), zeros(d)
        keys = []
        for x in frame_tensors:
            h, c = lstm_step(tape, encoder, h, c, x, output_tanh=output_tanh)
            keys.append(h)
        return keys
    raise ConfigError(f"unknown key_mode {key_mode!r}")


def build_values(
    tape: Tape,
    frame_tensors: Sequence[Tensor],
    regions: list[list[tuple[np.ndarray, float]]] | None = None,
    top_regions: int = 5,
) -> list[Tensor]:
    """Per-frame values: the frames as-is, or pooled region features.

    Region pooling keeps the ``top_regions`` highest-scoring entries and
    averages their features under scores renormalized over the kept set.
    """
    if not frame_tensors:
        raise ShapeError("at least one frame is required")
    if regions is None:
        return list(frame_tensors)
    if len(regions) != len(frame_tensors):
        raise DataError("one region list per frame required")
    values = []
    for fi, frame_regions in enumerate(regions):
        if not frame_regions:
            raise DataError(f"frame {fi}: empty region list")
        for feat, score in frame_regions:
            if score < 0:
                raise DataError(f"frame {fi}: negative region score {score}")
        ranked = sorted(range(len(frame_regions)), key=lambda r: (-frame_regions[r][1], r))
        kept = [frame_regions[r] for r in ranked[:top_regions]]
        total = sum(score for _, score in kept)
        if total <= 0:
            raise DataError(f"frame {fi}: region scores sum to zero")
        pooled = np.zeros_like(kept[0][0])
        for feat, score in kept:
            pooled += (score / total) * feat
        values.append(Tensor(pooled))
    return values


def build_slots(keys: Sequence[Tensor], values: Sequence[Tensor]) -> list[MemorySlot]:
    if len(keys) != len(values):
        raise ShapeError(f"{len(keys)} keys vs {len(values)} values")
    return [MemorySlot(k, v, i + 1) for i, (k, v) in enumerate(zip(keys, values))]


def init_addressing(tape: Tape, keys: Sequence[Tensor]) -> AddressingState:
    """Uniform attention; key summary and key read start at the key mean."""
    n = len(keys)
    if n == 0:
        raise ShapeError("at least one key is required")
    alpha0 = Tensor(np.full(n, 1.0 / n))
    pooled = tape.weighted_sum(alpha0, keys)
    return AddressingState(alpha=alpha0, h_k=pooled, c_k=zeros(keys[0].dims), phi_k=pooled)


def address_keys(
    tape: Tape,
    state: AddressingState,
    dec_h_prev: Tensor,
    keys: Sequence[Tensor],
    params: AddressingParams,
    output_tanh: bool = False,
    override_h_k: Tensor | None = None,
) -> AddressingState:
    """One attention step over the keys; returns the refreshed state.

    ``override_h_k`` substitutes the key-summary fed into the query (only
    meaningful in mode ``m``, where it bypasses the summary cell's output).
    """
    mode = params.mode
    if mode == "none":
        h_k, c_k = state.h_k, state.c_k
        q = tape.matmul(params.W_d, dec_h_prev)
    elif mode == "t":
        h_k, c_k = state.phi_k, state.c_k
        q = tape.add(tape.matmul(params.W_k, h_k), tape.matmul(params.W_d, dec_h_prev))
    elif mode == "m":
        if params.key_lstm is None:
            raise ConfigError("mode m needs key_lstm parameters")
        h_k, c_k = lstm_step(
            tape, params.key_lstm, state.h_k, state.c_k, state.phi_k, output_tanh=output_tanh
        )
        if override_h_k is not None:
            h_k = override_h_k
        q = tape.add(tape.matmul(params.W_k, h_k), tape.matmul(params.W_d, dec_h_prev))
    else:
        raise ConfigError(f"unknown addressing mode {mode!r}")

    scores = [tape.matmul(params.w, tape.tanh(tape.add(q, tape.matmul(params.U_a, k)))) for k in keys]
    alpha = tape.softmax(tape.concat(*scores))
    phi_k = tape.weighted_sum(alpha, keys)
    return AddressingState(alpha=alpha, h_k=h_k, c_k=c_k, phi_k=phi_k, query=q)


def read_values(tape: Tape, alpha: Tensor, values: Sequence[Tensor]) -> Tensor:
    """Attention-weighted sum of the value vectors."""
    if alpha.data.shape[0] != len(values):
        raise ShapeError(f"{alpha.data.shape[0]} weights vs {len(values)} values")
    return tape.weighted_sum(alpha, values)


class Model:
    """Bundles parameters with the step functions above."""

    def __init__(self, config: Config, seed: int | None = None):
        config.validate()
        self.config = config
        rng = np.random.default_rng(config.resolved_seed() if seed is None else seed)
        self._params: OrderedDict[str, Tensor] = OrderedDict()

        cfg = config
        d_f = cfg.resolved_feature_dim()
        self.embedding = self._uniform(rng, "embed.table", (cfg.vocab_size, cfg.embed_dim), cfg.embed_dim)
        self.encoder = (
            self._lstm(rng, "enc", cfg.key_dim, d_f) if cfg.key_mode == "rnn" else None
        )
        key_lstm = self._lstm(rng, "key", cfg.key_dim, cfg.key_dim) if cfg.mode == "m" else None
        W_k = (
            self._uniform(rng, "addr.W_k", (cfg.attn_dim, cfg.key_dim), cfg.key_dim)
            if cfg.mode in ("t", "m")
            else None
        )
        self.addressing = AddressingParams(
            mode=cfg.mode,
            W_d=self._uniform(rng, "addr.W_d", (cfg.attn_dim, cfg.hidden_dim), cfg.hidden_dim),
            U_a=self._uniform(rng, "addr.U_a", (cfg.attn_dim, cfg.key_dim), cfg.key_dim),
            w=self._uniform(rng, "addr.w", (cfg.attn_dim,), cfg.attn_dim),
            W_k=W_k,
            key_lstm=key_lstm,
        )
        self.decoder = self._lstm(rng, "dec", cfg.hidden_dim, cfg.embed_dim, cfg.value_dim)
        readout_in = cfg.hidden_dim + cfg.embed_dim + cfg.value_dim
        self.U_p = self._uniform(rng, "out.U_p", (cfg.vocab_size, readout_in), readout_in)
        self.b_p = self._register("out.b_p", Tensor(np.zeros(cfg.vocab_size), name="out.b_p"))

    # --- parameter plumbing -------------------------------------------

    def _register(self, name: str, t: Tensor) -> Tensor:
        self._params[name] = t
        return t

    def _uniform(self, rng, name, shape, fan_in) -> Tensor:
        return self._register(name, Tensor(init_uniform(rng, shape, fan_in), name=name))

    def _lstm(self, rng, prefix: str, hidden: int, input_dim: int, context_dim: int | None = None) -> LstmParams:
        def mats(kind, cols, fan):
            return {g: self._uniform(rng, f"{prefix}.{kind}_{g}", (hidden, cols), fan) for g in "ifoc"}

        W = mats("W", hidden, hidden)
        U = mats("U", input_dim, input_dim)
        A = mats("A", context_dim, context_dim) if context_dim is not None else {g: None for g in "ifoc"}
        b = {}
        for g in "ifoc":
            init = np.ones(hidden) if g == "f" else np.zeros(hidden)  # forget gate starts open
            b[g] = self._register(f"{prefix}.b_{g}", Tensor(init, name=f"{prefix}.b_{g}"))
        p = LstmParams(
            W_i=W["i"], W_f=W["f"], W_o=W["o"], W_c=W["c"],
            U_i=U["i"], U_f=U["f"], U_o=U["o"], U_c=U["c"],
            b_i=b["i"], b_f=b["f"], b_o=b["o"], b_c=b["c"],
            A_i=A["i"], A_f=A["f"], A_o=A["o"], A_c=A["c"],
        )
        p.validate()
        return p

    @property
    def params(self) -> OrderedDict[str, Tensor]:
        return self._params

    def zero_grads(self) -> None:
        for p in self._params.values():
            p.grad = None

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for name, p in self._params.items():
            if name not in arrays:
                raise ShapeError(f"missing parameter {name}")
            arr = arrays[name]
            if arr.shape != p.data.shape:
                raise ShapeError(f"parameter {name}: dims {arr.shape} do not match {p.data.shape}")
            p.data[...] = arr

    # --- episode wiring -------------------------------------------------

    def memory(self, tape: Tape, episode: Episode) -> tuple[list[MemorySlot], list[Tensor]]:
        """Build the slot list for an episode; also returns the frame leaves."""
        cfg = self.config
        n, d_f = episode.frames.shape
        if n > cfg.max_frames:
            raise DataError(f"episode {episode.id}: {n} frames exceed max_frames {cfg.max_frames}")
        expected = cfg.key_dim if cfg.key_mode == "direct" else cfg.resolved_feature_dim()
        if d_f != expected:
            raise ShapeError(f"episode {episode.id}: frame width {d_f}, model expects {expected}")
        leaves = [Tensor(episode.frames[i]) for i in range(n)]
        keys = build_keys(tape, leaves, cfg.key_mode, self.encoder, cfg.standard_lstm_output)
        values = build_values(tape, leaves, episode.regions, cfg.top_regions)
        for v in values:
            if v.dims != (cfg.value_dim,):
                raise ShapeError(f"episode {episode.id}: value width {v.dims[0]}, model expects {cfg.value_dim}")
        return build_slots(keys, values), leaves

    def start_decode(self, tape: Tape, episode: Episode) -> tuple[list[MemorySlot], AddressingState, DecoderState]:
        slots, _ = self.memory(tape, episode)
        addr = init_addressing(tape, [s.key for s in slots])
        dec = DecoderState(h=zeros(self.config.hidden_dim), c=zeros(self.config.hidden_dim), prev_token=BOS, t=1)
        return slots, addr, dec

    def decode_step(self, tape: Tape, state: DecoderState, phi_v: Tensor) -> tuple[DecoderState, Tensor, np.ndarray]:
        """Consume state.prev_token and the value read; emit logits and probs.

        The returned state's prev_token is a placeholder (-1) until the
        caller decides which token was produced.
        """
        x = embed(tape, self.embedding, state.prev_token)
        h, c = lstm_step(
            tape, self.decoder, state.h, state.c, x,
            context=phi_v, output_tanh=self.config.standard_lstm_output,
        )
        logits = linear(tape, self.U_p, tape.concat(h, x, phi_v), self.b_p)
        probs = _stable_softmax(logits.data)
        return DecoderState(h=h, c=c, prev_token=-1, t=state.t + 1), logits, probs

    def advance(
        self,
        tape: Tape,
        slots: Sequence[MemorySlot],
        addr: AddressingState,
        dec: DecoderState,
        override_h_k: Tensor | None = None,
    ) -> tuple[AddressingState, Tensor, DecoderState, Tensor, np.ndarray]:
        """One full output step: address the keys, read the values, decode."""
        keys = [s.key for s in slots]
        addr2 = address_keys(
            tape, addr, dec.h, keys, self.addressing,
            output_tanh=self.config.standard_lstm_output, override_h_k=override_h_k,
        )
        phi_v = read_values(tape, addr2.alpha, [s.value for s in slots])
        dec2, logits, probs = self.decode_step(tape, dec, phi_v)
        return addr2, phi_v, dec2, logits, probs

    # --- losses and scoring ----------------------------------------------

    def episode_loss(self, tape: Tape, episode: Episode, caption: list[int]) -> tuple[Tensor, np.ndarray]:
        """Teacher-forced token-summed loss for one caption; also returns the
        per-step attention weights as a (steps, T) array."""
        targets = [t for t in caption[1:] if t != PAD]
        if not targets:
            raise DataError(f"episode {episode.id}: caption has no non-PAD targets")
        slots, addr, dec = self.start_decode(tape, episode)
        total = None
        alphas = []
        prev = caption[0]
        for j, target in enumerate(caption[1:]):
            if target == PAD:
                break
            dec = replace(dec, prev_token=prev)
            addr, _, dec, logits, _ = self.advance(tape, slots, addr, dec)
            step_loss, _ = softmax_xent(tape, logits, target)
            alphas.append(addr.alpha.data.copy())
            total = step_loss if total is None else tape.add(total, step_loss)
            prev = target
        return total, np.stack(alphas)

    def sequence_loss(
        self, tape: Tape, episodes: Sequence[Episode], caption_ids: Sequence[int] | None = None
    ) -> tuple[Tensor, list[np.ndarray]]:
        """Mean over episodes of the per-episode token-summed loss."""
        if not episodes:
            raise DataError("sequence_loss needs at least one episode")
        if caption_ids is None:
            caption_ids = [0] * len(episodes)
        losses = []
        alphas = []
        for ep, ci in zip(episodes, caption_ids):
            loss, a = self.episode_loss(tape, ep, ep.captions[ci])
            losses.append(loss)
            alphas.append(a)
        total = losses[0] if len(losses) == 1 else tape.add(*losses)
        if len(losses) > 1:
            total = tape.mul(total, Tensor(np.asarray(1.0 / len(losses))))
        return total, alphas

    def sequence_logprob(self, episode: Episode, tokens: Sequence[int]) -> float:
        """Teacher-forced log-probability of a generated token sequence
        (no leading BOS; EOS included if present)."""
        tape = Tape()
        slots, addr, dec = self.start_decode(tape, episode)
        prev = BOS
        total = 0.0
        for tok in tokens:
            dec = replace(dec, prev_token=prev)
            addr, _, dec, _, probs = self.advance(tape, slots, addr, dec)
            with np.errstate(divide="ignore"):
                total += float(np.log(probs[tok]))
            prev = tok
        return total


def _stable_softmax(x: np.ndarray) -> np.ndarray:
    e = np.exp(x - x.max())
    return e / e.sum()


def token_accuracy(model: Model, episodes: Sequence[Episode]) -> float:
    """Teacher-forced argmax accuracy over all captions' non-PAD targets."""
    correct = 0
    total = 0
    for ep in episodes:
        for caption in ep.captions:
            tape = Tape()
            slots, addr, dec = model.start_decode(tape, ep)
            prev = caption[0]
            for target in caption[1:]:
                if target == PAD:
                    break
                dec = replace(dec, prev_token=prev)
                addr, _, dec, _, probs = model.advance(tape, slots, addr, dec)
                correct += int(int(np.argmax(probs)) == target)
                total += 1
                prev = target
    return correct / max(total, 1)
