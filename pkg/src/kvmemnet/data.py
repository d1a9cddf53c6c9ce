"""Captions, vocabularies, synthetic episode generators and JSONL datasets.

A dataset file holds one JSON object per line:

    {"id": "...", "frames": [[...], ...], "captions": ["...", ...],
     "regions": [[{"f": [...], "s": 1.0}, ...], ...]}   # regions optional

Captions are raw text; they are tokenized and mapped through a vocabulary on
load, gaining BOS/EOS. Frames are per-position feature vectors. Regions, when
present, carry scored sub-features that are pooled into value vectors.
"""

from __future__ import annotations

import json
import math
import re
from collections import Counter
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .errors import DataError
from .layers import BOS, EOS, PAD, UNK

RESERVED_TOKENS = ("<pad>", "<bos>", "<eos>", "<unk>")

_TOKEN_RE = re.compile(r"\w+|[^\w\s]+")


def tokenize(text: str) -> list[str]:
    """Lowercase and split into maximal alphanumeric or punctuation runs."""
    return _TOKEN_RE.findall(text.lower())


class Vocabulary:
    """Token/id mapping with the four reserved ids up front."""

    def __init__(self, tokens: Iterable[str]):
        self.id_to_token: list[str] = list(RESERVED_TOKENS) + list(tokens)
        self.token_to_id: dict[str, int] = {t: i for i, t in enumerate(self.id_to_token)}
        if len(self.token_to_id) != len(self.id_to_token):
            raise DataError("vocabulary contains duplicate tokens")

    def __len__(self) -> int:
        return len(self.id_to_token)

    def encode(self, tokens: Iterable[str]) -> list[int]:
        get = self.token_to_id.get
        return [get(t, UNK) for t in tokens]

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.id_to_token[i] for i in ids]

    @classmethod
    def from_captions(cls, caption_tokens: Iterable[list[str]], min_count: int = 1) -> "Vocabulary":
        """Ids go to tokens with count >= min_count, most frequent first and
        ties broken lexicographically."""
        counts = Counter()
        for toks in caption_tokens:
            counts.update(toks)
        kept = [t for t, c in counts.items() if c >= min_count and t not in RESERVED_TOKENS]
        kept.sort(key=lambda t: (-counts[t], t))
        return cls(kept)

    @classmethod
    def synthetic(cls, vocab_size: int) -> "Vocabulary":
        """Fixed surface forms w4..w{n-1} for generator-produced token ids."""
        if vocab_size < 5:
            raise DataError("synthetic vocabulary needs at least one content token")
        return cls(f"w{i}" for i in range(len(RESERVED_TOKENS), vocab_size))


@dataclass
class Episode:
    """One captioned feature sequence.

    ``frames`` is (T, d_f); ``regions``, when present, is a per-frame list of
    (feature, score) pairs; every caption is a token-id list shaped
    BOS ... EOS.
    """

    id: str
    frames: np.ndarray
    regions: list[list[tuple[np.ndarray, float]]] | None
    captions: list[list[int]]

    def validate(self) -> None:
        if self.frames.ndim != 2 or self.frames.shape[0] < 1:
            raise DataError(f"episode {self.id}: frames must be a non-empty (T, d) array")
        if not np.all(np.isfinite(self.frames)):
            raise DataError(f"episode {self.id}: frames contain non-finite values")
        if self.regions is not None and len(self.regions) != self.frames.shape[0]:
            raise DataError(f"episode {self.id}: one region list per frame required")
        if not self.captions:
            raise DataError(f"episode {self.id}: at least one caption required")
        for cap in self.captions:
            if len(cap) < 2 or cap[0] != BOS or cap[-1] != EOS:
                raise DataError(f"episode {self.id}: captions must run BOS ... EOS")


# --- synthetic episodes -------------------------------------------------

# Fixed root so code vectors mean the same thing in every episode and run.
_CODE_ROOT = 912837461
_TOKEN_STREAM = 1
_ORDER_STREAM = 2

# Code vectors are unit norm times this gain; a few times unity keeps early
# gradients through the attention and readout paths strong at desk scale.
CODE_GAIN = 3.0


@lru_cache(maxsize=None)
def _codes(count: int, dim: int, stream: int) -> np.ndarray:
    """Deterministic unit-norm code vectors; orthonormal while count <= dim.

    Rows are prefix-stable: the first k rows do not depend on count.
    """
    rng = np.random.default_rng(np.random.SeedSequence([_CODE_ROOT, stream, dim]))
    raw = rng.standard_normal((count, dim))
    rows = []
    for i in range(count):
        v = raw[i]
        if i < dim:
            for u in rows[:dim]:
                v = v - (v @ u) * u
        n = float(np.linalg.norm(v))
        if n < 1e-8:
            raise DataError("degenerate code vector; widen the code dimension")
        rows.append(v / n)
    out = np.stack(rows)
    out.flags.writeable = False
    return out


def content_split(key_dim: int) -> tuple[int, int]:
    """Widths of the token-content and order-code halves of a frame vector."""
    if key_dim < 2:
        raise DataError("frame features need at least 2 dimensions")
    token_dim = key_dim - key_dim // 2
    return token_dim, key_dim // 2


def assemble_frames(tokens: np.ndarray, order_ranks: np.ndarray, vocab_size: int, key_dim: int) -> np.ndarray:
    """Frame i carries the code of its token plus the code of its read rank."""
    token_dim, order_dim = content_split(key_dim)
    n_content = vocab_size - len(RESERVED_TOKENS)
    tok_codes = _codes(n_content, token_dim, _TOKEN_STREAM)
    ord_codes = _codes(int(order_ranks.max()) + 1, order_dim, _ORDER_STREAM)
    frames = np.empty((len(tokens), key_dim))
    for i, (tok, rank) in enumerate(zip(tokens, order_ranks)):
        frames[i, :token_dim] = tok_codes[tok - len(RESERVED_TOKENS)]
        frames[i, token_dim:] = ord_codes[rank]
    return CODE_GAIN * frames


def nearest_token(frame: np.ndarray, vocab_size: int, key_dim: int) -> int:
    """Oracle readout: the content token whose code best matches the frame."""
    token_dim, _ = content_split(key_dim)
    codes = _codes(vocab_size - len(RESERVED_TOKENS), token_dim, _TOKEN_STREAM)
    return len(RESERVED_TOKENS) + int(np.argmax(codes @ frame[:token_dim]))


def nearest_ranks(frames: np.ndarray, key_dim: int) -> np.ndarray:
    """Oracle addressing: recover each frame's read rank from its order code."""
    token_dim, order_dim = content_split(key_dim)
    codes = _codes(frames.shape[0], order_dim, _ORDER_STREAM)
    return np.argmax(frames[:, token_dim:] @ codes.T, axis=1)


def _draw_tokens(rng: np.random.Generator, num_frames: int, vocab_size: int) -> np.ndarray:
    lo = len(RESERVED_TOKENS)
    if vocab_size <= lo:
        raise DataError("vocab_size leaves no content tokens")
    return rng.integers(lo, vocab_size, size=num_frames)


def gen_copy_episode(num_frames: int, vocab_size: int, key_dim: int, seed: int) -> Episode:
    """Caption repeats the frame tokens in frame order."""
    if num_frames < 1:
        raise DataError("num_frames must be positive")
    rng = np.random.default_rng(seed)
    tokens = _draw_tokens(rng, num_frames, vocab_size)
    ranks = np.arange(num_frames)
    frames = assemble_frames(tokens, ranks, vocab_size, key_dim)
    caption = [BOS] + [int(t) for t in tokens] + [EOS]
    ep = Episode(f"copy-{seed}", frames, None, [caption])
    ep.validate()
    return ep


def gen_recall_episode(num_frames: int, vocab_size: int, key_dim: int, seed: int) -> Episode:
    """Caption reads the frame tokens in a random order; each frame's order
    code says at which step that frame is read, so the permutation is
    recoverable from the features alone."""
    if num_frames < 1:
        raise DataError("num_frames must be positive")
    rng = np.random.default_rng(seed)
    tokens = _draw_tokens(rng, num_frames, vocab_size)
    order = rng.permutation(num_frames)          # order[j] = frame read at step j
    ranks = np.empty(num_frames, dtype=np.int64)  # ranks[i] = step at which frame i is read
    ranks[order] = np.arange(num_frames)
    frames = assemble_frames(tokens, ranks, vocab_size, key_dim)
    caption = [BOS] + [int(tokens[i]) for i in order] + [EOS]
    ep = Episode(f"recall-{seed}", frames, None, [caption])
    ep.validate()
    return ep


# --- JSONL IO -------------------------------------------------------------


def _vector(raw, where: str) -> list[float]:
    if not isinstance(raw, list) or not raw:
        raise DataError(f"{where}: expected a non-empty number list")
    out = []
    for v in raw:
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(float(v)):
            raise DataError(f"{where}: entries must be finite numbers")
        out.append(float(v))
    return out


def _parse_regions(raw, where: str) -> list[list[tuple[np.ndarray, float]]]:
    if not isinstance(raw, list):
        raise DataError(f"{where}: regions must be a list per frame")
    frames = []
    width = None
    for fi, frame_regions in enumerate(raw):
        if not isinstance(frame_regions, list) or not frame_regions:
            raise DataError(f"{where}: frame {fi} needs a non-empty region list")
        parsed = []
        for ri, reg in enumerate(frame_regions):
            spot = f"{where}: frame {fi} region {ri}"
            if not isinstance(reg, dict) or set(reg) != {"f", "s"}:
                raise DataError(f'{spot}: expected an object with keys "f" and "s"')
            feat = np.asarray(_vector(reg["f"], spot))
            score = reg["s"]
            if isinstance(score, bool) or not isinstance(score, (int, float)) or not math.isfinite(float(score)):
                raise DataError(f"{spot}: score must be a finite number")
            if width is None:
                width = feat.shape[0]
            elif feat.shape[0] != width:
                raise DataError(f"{spot}: region feature width differs")
            parsed.append((feat, float(score)))
        frames.append(parsed)
    return frames


def load_dataset(path: str | Path, vocab: Vocabulary) -> Iterator[Episode]:
    """Stream episodes out of a JSONL file, validating as it goes."""
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            where = f"{path} line {lineno}"
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{where}: invalid JSON ({exc.msg})") from None
            if not isinstance(raw, dict):
                raise DataError(f"{where}: each line must hold a JSON object")
            missing = {"id", "frames", "captions"} - set(raw)
            if missing:
                raise DataError(f"{where}: missing keys {sorted(missing)}")
            if not isinstance(raw["id"], str) or not raw["id"]:
                raise DataError(f"{where}: id must be a non-empty string")
            if not isinstance(raw["frames"], list) or not raw["frames"]:
                raise DataError(f"{where}: frames must be a non-empty list")
            rows = [_vector(f, f"{where}: frame {i}") for i, f in enumerate(raw["frames"])]
            width = len(rows[0])
            if any(len(r) != width for r in rows):
                raise DataError(f"{where}: frames must be rectangular")
            frames = np.asarray(rows)
            regions = None
            if "regions" in raw and raw["regions"] is not None:
                regions = _parse_regions(raw["regions"], where)
                if len(regions) != frames.shape[0]:
                    raise DataError(f"{where}: one region list per frame required")
            caps_raw = raw["captions"]
            if not isinstance(caps_raw, list) or not caps_raw or not all(isinstance(c, str) for c in caps_raw):
                raise DataError(f"{where}: captions must be a non-empty list of strings")
            captions = [[BOS] + vocab.encode(tokenize(c)) + [EOS] for c in caps_raw]
            ep = Episode(raw["id"], frames, regions, captions)
            try:
                ep.validate()
            except DataError as exc:
                raise DataError(f"{where}: {exc}") from None
            yield ep


def caption_text(caption: list[int], vocab: Vocabulary) -> str:
    """Surface string for a token-id caption, reserved ids stripped."""
    return " ".join(vocab.id_to_token[i] for i in caption if i not in (PAD, BOS, EOS))


def save_dataset(path: str | Path, episodes: Iterable[Episode], vocab: Vocabulary) -> int:
    """Write episodes as JSONL; returns the number of lines written."""
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for ep in episodes:
            record: dict = {
                "id": ep.id,
                "frames": [[float(v) for v in row] for row in ep.frames],
                "captions": [caption_text(c, vocab) for c in ep.captions],
            }
            if ep.regions is not None:
                record["regions"] = [
                    [{"f": [float(v) for v in feat], "s": score} for feat, score in frame]
                    for frame in ep.regions
                ]
            fh.write(json.dumps(record, sort_keys=True) + "\n")
            n += 1
    return n
