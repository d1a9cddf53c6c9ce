"""Flat JSON-backed run configuration with flag overrides."""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError

SEED_ENV_VAR = "KVMN_SEED"

ADDRESSING_MODES = ("none", "t", "m")
KEY_MODES = ("direct", "rnn")
TASKS = ("copy", "recall")


@dataclass
class Config:
    mode: str = "m"               # key addressing: none | t | m
    key_mode: str = "direct"      # keys straight from frames, or through an encoder
    key_dim: int = 16
    value_dim: int = 16
    hidden_dim: int = 32
    embed_dim: int = 16
    attn_dim: int = 16
    feature_dim: int = 0          # raw frame feature width; 0 means same as key_dim
    vocab_size: int = 20
    min_count: int = 1
    num_frames: int = 10
    max_frames: int = 28
    batch_size: int = 16
    steps: int = 200
    seed: int = -1                # -1 defers to KVMN_SEED, then to 1
    rho: float = 0.95
    opt_eps: float = 1e-6
    clip_norm: float = 5.0        # 0 disables clipping
    beam_width: int = 5
    max_len: int = 0              # decode cap; 0 means num_frames + 4
    top_regions: int = 5
    task: str = "copy"
    checkpoint_every: int = 1000  # 0 keeps only the final checkpoint
    standard_lstm_output: bool = False
    bleu_smoothing: bool = False
    length_normalize: bool = False

    def resolved_seed(self) -> int:
        if self.seed >= 0:
            return self.seed
        env = os.environ.get(SEED_ENV_VAR)
        if env is not None:
            try:
                return int(env)
            except ValueError:
                raise ConfigError(f"{SEED_ENV_VAR} must be an integer, got {env!r}") from None
        return 1

    def resolved_feature_dim(self) -> int:
        return self.feature_dim if self.feature_dim > 0 else self.key_dim

    def resolved_max_len(self) -> int:
        return self.max_len if self.max_len > 0 else self.num_frames + 4

    def validate(self) -> None:
        if self.mode not in ADDRESSING_MODES:
            raise ConfigError(f"mode must be one of {ADDRESSING_MODES}, got {self.mode!r}")
        if self.key_mode not in KEY_MODES:
            raise ConfigError(f"key_mode must be one of {KEY_MODES}, got {self.key_mode!r}")
        if self.task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}, got {self.task!r}")
        for name in ("key_dim", "value_dim", "hidden_dim", "embed_dim", "attn_dim",
                     "batch_size", "num_frames", "max_frames", "top_regions"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.key_dim < 2:
            raise ConfigError("key_dim must be at least 2")
        if self.vocab_size < 4:
            raise ConfigError("vocab_size must cover the 4 reserved ids")
        if self.num_frames > self.max_frames:
            raise ConfigError(f"num_frames {self.num_frames} exceeds max_frames {self.max_frames}")
        if not 0.0 < self.rho < 1.0:
            raise ConfigError("rho must lie in (0, 1)")
        if self.opt_eps <= 0:
            raise ConfigError("opt_eps must be positive")
        if self.beam_width < 1:
            raise ConfigError("beam_width must be at least 1")
        if self.key_mode == "direct" and self.feature_dim not in (0, self.key_dim):
            raise ConfigError("direct key_mode requires feature_dim == key_dim")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, values: dict) -> "Config":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(**values)
        cfg.validate()
        return cfg


def _coerce(name: str, kind: type, raw):
    if isinstance(raw, kind):
        return raw
    text = str(raw)
    if kind is bool:
        low = text.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{name} expects a boolean, got {raw!r}")
    try:
        return kind(text)
    except ValueError:
        raise ConfigError(f"{name} expects {kind.__name__}, got {raw!r}") from None


def load_config(path: str | Path | None = None, overrides: dict | None = None) -> Config:
    """Read a flat-key JSON config file and apply overrides on top."""
    values: dict = {}
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError(f"config file {path} must hold a JSON object")
        values.update(raw)
    if overrides:
        values.update(overrides)

    kinds = {f.name: f.type for f in dataclasses.fields(Config)}
    types = {"str": str, "int": int, "float": float, "bool": bool}
    coerced = {}
    for name, raw in values.items():
        if name not in kinds:
            raise ConfigError(f"unknown config key: {name}")
        coerced[name] = _coerce(name, types[kinds[name]], raw)
    return Config.from_dict(coerced)


def config_json(cfg: Config) -> str:
    """Canonical single-line JSON used in files and checkpoints."""
    return json.dumps(cfg.to_dict(), sort_keys=True, separators=(",", ":"))
