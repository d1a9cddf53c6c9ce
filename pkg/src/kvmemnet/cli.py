"""Command-line entry points: train, eval, decode, gradcheck, gen-data.

Every config key can be set in a JSON file (--config) and overridden by a
--key value flag; flags win. Exit codes: 0 success, 1 usage error, 2 data
error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from collections import OrderedDict
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from . import driver, gradcheck, report
from .config import Config, config_json, load_config
from .data import Vocabulary, load_dataset, save_dataset, tokenize, gen_copy_episode, gen_recall_episode
from .errors import ConfigError, DataError, NumericError
from .model import Model
from .optim import Adadelta

USAGE_EXIT = 1
DATA_EXIT = 2
NUMERIC_EXIT = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems exit 1, not argparse's 2
        self.print_usage(sys.stderr)
        self.exit(USAGE_EXIT, f"{self.prog}: error: {message}\n")


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="FILE", help="JSON config file with flat keys")
    for f in dataclasses.fields(Config):
        flag = "--" + f.name.replace("_", "-")
        p.add_argument(flag, dest=f"cfg_{f.name}", metavar="V", default=None)


def _config_from(args) -> Config:
    overrides = {}
    for f in dataclasses.fields(Config):
        raw = getattr(args, f"cfg_{f.name}", None)
        if raw is not None:
            overrides[f.name] = raw
    return load_config(args.config, overrides)


def _build_parser() -> _Parser:
    parser = _Parser(prog="kvmemnet", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", parents=[], help="train a model and write checkpoints")
    _add_config_flags(p)
    p.add_argument("--data", metavar="FILE", help="JSONL dataset; omit to train on the synthetic task")
    p.add_argument("--out", metavar="DIR", required=True)
    p.set_defaults(run=_cmd_train)

    p = sub.add_parser("eval", help="beam-decode a dataset and report metrics")
    _add_config_flags(p)
    p.add_argument("--checkpoint", metavar="FILE", required=True)
    p.add_argument("--data", metavar="FILE", help="JSONL dataset; omit to evaluate fresh synthetic episodes")
    p.add_argument("--n", type=int, default=32, metavar="N", help="synthetic episode count when --data is absent")
    p.add_argument("--out", metavar="DIR", required=True)
    p.set_defaults(run=_cmd_eval)

    p = sub.add_parser("decode", help="write decoded captions for a dataset")
    _add_config_flags(p)
    p.add_argument("--checkpoint", metavar="FILE", required=True)
    p.add_argument("--data", metavar="FILE", help="JSONL dataset; omit to decode fresh synthetic episodes")
    p.add_argument("--n", type=int, default=8, metavar="N")
    p.add_argument("--out", metavar="DIR", required=True)
    p.set_defaults(run=_cmd_decode)

    p = sub.add_parser("gradcheck", help="finite-difference check of all model variants")
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--seed", type=int, default=11)
    p.set_defaults(run=_cmd_gradcheck)

    p = sub.add_parser("gen-data", help="write synthetic episodes as JSONL")
    _add_config_flags(p)
    p.add_argument("--count", type=int, default=64, metavar="N")
    p.add_argument("--out", metavar="FILE", required=True)
    p.set_defaults(run=_cmd_gen_data)

    return parser


def _load_file_split(path: str, config: Config) -> tuple[list, Vocabulary]:
    """Build the vocabulary from a dataset file, then load its episodes."""
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                records.append(json.loads(line))
    tokenized = []
    for rec in records:
        for cap in rec.get("captions", []):
            if isinstance(cap, str):
                tokenized.append(tokenize(cap))
    vocab = Vocabulary.from_captions(tokenized, config.min_count)
    episodes = list(load_dataset(path, vocab))
    return episodes, vocab


def _cmd_train(args) -> int:
    config = _config_from(args)
    seed = config.resolved_seed()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    if args.data:
        episodes, vocab = _load_file_split(args.data, config)
        if len(vocab) != config.vocab_size:
            config = dataclasses.replace(config, vocab_size=len(vocab))
            config.validate()
        batches = driver.file_stream(episodes, config, seed)
    else:
        vocab = Vocabulary.synthetic(config.vocab_size)
        batches = driver.synthetic_stream(config, seed)

    model = Model(config, seed=seed)
    optimizer = Adadelta(model.params, rho=config.rho, eps=config.opt_eps)
    (out / "config.json").write_text(config_json(config) + "\n", encoding="utf-8")

    def tensors() -> "OrderedDict[str, np.ndarray]":
        arrs: OrderedDict[str, np.ndarray] = OrderedDict(
            (name, p.data) for name, p in model.params.items()
        )
        arrs.update(optimizer.state_arrays())
        return arrs

    losses: list[float] = []
    with open(out / "losses.tsv", "w", encoding="utf-8") as log:
        def on_step(step: int, value: float) -> None:
            log.write(f"{step}\t{value!r}\n")
            if config.checkpoint_every > 0 and step % config.checkpoint_every == 0 and step < config.steps:
                ckpt.save_checkpoint(out / f"ckpt-{step:06d}.kvmn", config, vocab, step, tensors())

        losses = driver.train(model, optimizer, batches, config.steps, config.clip_norm, on_step)

    ckpt.save_checkpoint(out / "ckpt-final.kvmn", config, vocab, config.steps, tensors())
    report.save_loss_curve(losses, out / "loss_curve.png")
    print(f"trained {config.steps} steps; final loss {losses[-1]:.4f}; wrote {out / 'ckpt-final.kvmn'}")
    return 0


def _restore(path: str) -> tuple[Model, Vocabulary, Config, int]:
    config, vocab, step, tensors = ckpt.load_checkpoint(path)
    model = Model(config, seed=config.resolved_seed())
    model.load_arrays(tensors)
    return model, vocab, config, step


def _eval_episodes(args, config: Config, vocab: Vocabulary) -> list:
    if args.data:
        return list(load_dataset(args.data, vocab))
    if args.n < 1:
        raise DataError("--n must be positive for synthetic evaluation")
    base = config.resolved_seed() * 1_000_003 + 500_000
    return [driver.synthetic_episode(config, base + i) for i in range(args.n)]


def _apply_eval_overrides(args, config: Config) -> Config:
    overrides = {}
    for f in dataclasses.fields(Config):
        raw = getattr(args, f"cfg_{f.name}", None)
        if raw is not None:
            overrides[f.name] = raw
    structural = {"mode", "key_mode", "key_dim", "value_dim", "hidden_dim", "embed_dim",
                  "attn_dim", "vocab_size", "feature_dim"}
    bad = structural & set(overrides)
    if bad:
        raise ConfigError(f"cannot override structural keys at eval time: {sorted(bad)}")
    if not overrides:
        return config
    merged = config.to_dict()
    merged.update(overrides)
    rebuilt = load_config(None, merged)
    return rebuilt


def _cmd_eval(args) -> int:
    model, vocab, config, _ = _restore(args.checkpoint)
    config = _apply_eval_overrides(args, config)
    model.config = config
    episodes = _eval_episodes(args, config, vocab)
    result = driver.evaluate(model, episodes, vocab)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    line = json.dumps(result.report(), sort_keys=True)
    (out / "report.json").write_text(line + "\n", encoding="utf-8")
    with open(out / "eval.tsv", "w", encoding="utf-8") as fh:
        fh.write("id\tlogp\thypothesis\treferences\n")
        for row in result.rows:
            refs = " || ".join(row["references"])
            fh.write(f"{row['id']}\t{row['logp']!r}\t{row['hypothesis']}\t{refs}\n")
    if result.first_alphas is not None:
        report.save_attention_map(
            result.first_alphas, result.first_tokens, out / "attention.png",
            title=f"attention: {result.rows[0]['id']}",
        )
    print(line)
    return 0


def _cmd_decode(args) -> int:
    model, vocab, config, _ = _restore(args.checkpoint)
    config = _apply_eval_overrides(args, config)
    model.config = config
    episodes = _eval_episodes(args, config, vocab)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    from .search import beam_search

    first_drawn = False
    with open(out / "captions.tsv", "w", encoding="utf-8") as fh:
        fh.write("id\tlogp\tcaption\n")
        for ep in episodes:
            hyp_ids, logp = beam_search(model, ep, config.beam_width)
            text = " ".join(vocab.decode([t for t in hyp_ids if t > 3]))
            fh.write(f"{ep.id}\t{logp!r}\t{text}\n")
            if not first_drawn:
                alphas, toks = driver._teacher_free_alphas(model, ep, hyp_ids, vocab)
                if alphas is not None:
                    report.save_attention_map(alphas, toks, out / "attention.png", title=f"attention: {ep.id}")
                first_drawn = True
    print(f"decoded {len(episodes)} episodes into {out / 'captions.tsv'}")
    return 0


def _cmd_gradcheck(args) -> int:
    if args.eps <= 0:
        raise ConfigError("--eps must be positive")
    rows = gradcheck.check_all(eps=args.eps, seed=args.seed)
    print("mode\tkey_mode\tmax_rel_err\tn_params\tseconds")
    for r in rows:
        print(f"{r.mode}\t{r.key_mode}\t{r.max_rel_err:.3e}\t{r.n_params}\t{r.seconds:.2f}")
    if any(not r.ok for r in rows):
        print(f"FAIL: a combination exceeded {gradcheck.TOLERANCE}", file=sys.stderr)
        return NUMERIC_EXIT
    return 0


def _cmd_gen_data(args) -> int:
    config = _config_from(args)
    if args.count < 1:
        raise DataError("--count must be positive")
    seed = config.resolved_seed()
    gen = gen_copy_episode if config.task == "copy" else gen_recall_episode
    episodes = [
        gen(config.num_frames, config.vocab_size, config.key_dim, seed * 1_000_003 + i)
        for i in range(args.count)
    ]
    vocab = Vocabulary.synthetic(config.vocab_size)
    n = save_dataset(args.out, episodes, vocab)
    print(f"wrote {n} episodes to {args.out}")
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.run(args)
    except ConfigError as exc:
        print(f"kvmemnet: config error: {exc}", file=sys.stderr)
        return USAGE_EXIT
    except (DataError, OSError) as exc:
        print(f"kvmemnet: data error: {exc}", file=sys.stderr)
        return DATA_EXIT
    except NumericError as exc:
        print(f"kvmemnet: numeric failure: {exc}", file=sys.stderr)
        return NUMERIC_EXIT


if __name__ == "__main__":
    sys.exit(main())
