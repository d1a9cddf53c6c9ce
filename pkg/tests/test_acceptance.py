"""Acceptance gate: seven go/no-go checks on the finished engine.

Each test prints one "[acceptance] criterion k: PASS/FAIL (...)" line (also
echoed in the terminal summary) and fails hard when its bound is missed:

1. finite-difference gradients beat 1e-4 on all six model variants in 60 s;
2. attention invariants hold over 1000 random steps;
3. the recurrent key summary, overridden with the previous key read,
   reproduces the direct-summary attention bitwise on 100 configurations;
4. a wide beam equals exhaustive enumeration, and width 1 equals greedy;
5. the copy task trains to >= 0.95 token accuracy inside the budget;
6. BLEU matches an independent reference scorer;
7. seeded runs and checkpoints are bitwise reproducible, and the
   zero-parameter closed forms hold.
"""

import itertools
import math
import time
from dataclasses import replace

import numpy as np
import pytest

from conftest import record_acceptance, reference_bleu4
from kvmemnet.checkpoint import load_checkpoint, save_checkpoint
from kvmemnet.cli import main as cli_main
from kvmemnet.config import Config
from kvmemnet.data import Episode, Vocabulary, gen_copy_episode, gen_recall_episode
from kvmemnet.driver import evaluate, synthetic_stream, train
from kvmemnet.gradcheck import TOLERANCE, check_all
from kvmemnet.layers import BOS, EOS, PAD, lstm_step
from kvmemnet.metrics import EvalPair, bleu4
from kvmemnet.model import Model, token_accuracy
from kvmemnet.optim import Adadelta
from kvmemnet.search import beam_search, greedy_decode
from kvmemnet.tensor import Tape, Tensor, zeros

from test_layers import make_lstm


def _report(k, ok, detail):
    line = f"[acceptance] criterion {k}: {'PASS' if ok else 'FAIL'} ({detail})"
    print(line)
    record_acceptance(line)
    assert ok, line


def _teacher_forced_alphas(model, episode, tokens, override_each_step=False):
    """Attention weights along a fixed token path; optionally force the
    recurrent key summary to the previous key read at every step."""
    tape = Tape()
    slots, addr, dec = model.start_decode(tape, episode)
    alphas = []
    prev = BOS
    for tok in tokens:
        dec = replace(dec, prev_token=prev)
        override = addr.phi_k if override_each_step else None
        addr, _, dec, _, _ = model.advance(tape, slots, addr, dec, override_h_k=override)
        alphas.append(addr.alpha.data.copy())
        prev = tok
    return alphas, addr


def test_criterion_1_gradient_fidelity():
    started = time.perf_counter()
    rows = check_all(eps=1e-5, seed=11)
    elapsed = time.perf_counter() - started
    worst = max(r.max_rel_err for r in rows)
    ok = all(r.ok for r in rows) and worst < 1e-4 and elapsed < 60.0
    _report(1, ok, f"6 variants, worst rel err {worst:.2e} < {TOLERANCE}, {elapsed:.1f}s < 60s")


def test_criterion_2_attention_invariants():
    n_steps = 1000
    worst_simplex = 0.0
    worst_equiv = 0.0
    worst_read = 0.0
    worst_shift = 0.0
    for i in range(n_steps):
        rng = np.random.default_rng(70_000 + i)
        mode = ("none", "t", "m")[i % 3]
        T = int(rng.integers(2, 7))
        d = int(rng.integers(3, 7))
        cfg = Config(mode=mode, key_mode="direct", key_dim=d, value_dim=d,
                     hidden_dim=int(rng.integers(3, 7)), embed_dim=4,
                     attn_dim=int(rng.integers(3, 7)), num_frames=T, vocab_size=7,
                     batch_size=1)
        model = Model(cfg, seed=i)
        frames = rng.standard_normal((T, d))
        ep = Episode(f"s{i}", frames, None, [[BOS, EOS]])
        tokens = [int(t) for t in rng.integers(2, 7, size=2)]
        perm = rng.permutation(T)
        ep_perm = Episode(ep.id, frames[perm], None, ep.captions)

        def roll(episode):
            tape = Tape()
            slots, addr, dec = model.start_decode(tape, episode)
            alphas, reads = [], []
            prev = BOS
            for tok in tokens:
                dec = replace(dec, prev_token=prev)
                addr, phi_v, dec, _, _ = model.advance(tape, slots, addr, dec)
                alphas.append(addr.alpha.data.copy())
                reads.append(phi_v.data.copy())
                prev = tok
            return alphas, reads

        base_a, base_r = roll(ep)
        perm_a, perm_r = roll(ep_perm)
        for a, ap, r, rp in zip(base_a, perm_a, base_r, perm_r):
            assert np.all(a >= 0.0)
            worst_simplex = max(worst_simplex, abs(a.sum() - 1.0))
            worst_equiv = max(worst_equiv, float(np.abs(ap - a[perm]).max()))
            worst_read = max(worst_read, float(np.abs(rp - r).max()))

        scores = rng.standard_normal(T) * 5
        shift = float(rng.uniform(-40, 40))
        sa = Tape().softmax(Tensor(scores)).data
        sb = Tape().softmax(Tensor(scores + shift)).data
        worst_shift = max(worst_shift, float(np.abs(sa - sb).max()))

    ok = worst_simplex <= 1e-9 and worst_equiv <= 1e-9 and worst_read <= 1e-9 and worst_shift <= 1e-12
    _report(2, ok, f"{n_steps} steps: simplex {worst_simplex:.1e}, permutation "
                   f"{worst_equiv:.1e}, read {worst_read:.1e} <= 1e-9; shift {worst_shift:.1e} <= 1e-12")


def test_criterion_3_addressing_mode_consistency():
    n_configs = 100
    mismatches = 0
    worst_query = 0.0
    for i in range(n_configs):
        rng = np.random.default_rng(80_000 + i)
        T = int(rng.integers(2, 6))
        dims = dict(
            key_dim=int(rng.integers(3, 7)), value_dim=0, hidden_dim=int(rng.integers(3, 8)),
            embed_dim=int(rng.integers(3, 6)), attn_dim=int(rng.integers(3, 7)),
            num_frames=T, vocab_size=int(rng.integers(6, 11)), batch_size=1,
            key_mode=("direct", "rnn")[int(rng.integers(2))],
            standard_lstm_output=bool(rng.integers(2)),
        )
        dims["value_dim"] = dims["key_dim"] if dims["key_mode"] == "direct" else int(rng.integers(3, 7))
        if dims["key_mode"] == "rnn":
            dims["feature_dim"] = dims["value_dim"]
        m_model = Model(Config(mode="m", **dims), seed=2 * i)
        t_model = Model(Config(mode="t", **dims), seed=2 * i + 1)
        for name, p in t_model.params.items():
            p.data[...] = m_model.params[name].data

        d_f = m_model.config.resolved_feature_dim()
        ep = Episode(f"c{i}", rng.standard_normal((T, d_f)), None, [[BOS, EOS]])
        tokens = [int(t) for t in rng.integers(2, dims["vocab_size"], size=3)]
        a_t, addr_t = _teacher_forced_alphas(t_model, ep, tokens)
        a_m, _ = _teacher_forced_alphas(m_model, ep, tokens, override_each_step=True)
        if not all(np.array_equal(x, y) for x, y in zip(a_t, a_m)):
            mismatches += 1

        first, _ = _teacher_forced_alphas(t_model, ep, tokens[:1])
        tape = Tape()
        slots, addr0, dec0 = t_model.start_decode(tape, ep)
        addr1, _, _, _, _ = t_model.advance(tape, slots, addr0, dec0)
        mean_key = np.mean([s.key.data for s in slots], axis=0)
        expected = (t_model.addressing.W_k.data @ mean_key
                    + t_model.addressing.W_d.data @ np.zeros(dims["hidden_dim"]))
        worst_query = max(worst_query, float(np.abs(addr1.query.data - expected).max()))

    ok = mismatches == 0 and worst_query <= 1e-12
    _report(3, ok, f"{n_configs} configurations: {mismatches} bitwise mismatches; "
                   f"first-step query error {worst_query:.1e} <= 1e-12")


def test_criterion_4_search_oracle():
    # wide beam vs exhaustive enumeration at vocab 4 (EOS and UNK expandable)
    max_len, width = 3, 64
    n_models = 50
    seq_mismatch = 0
    worst_logp = 0.0
    for i in range(n_models):
        rng = np.random.default_rng(90_000 + i)
        cfg = Config(mode="m", key_dim=4, value_dim=4, hidden_dim=5, embed_dim=4,
                     attn_dim=4, num_frames=3, vocab_size=4, batch_size=1)
        model = Model(cfg, seed=i)
        ep = Episode(f"b{i}", rng.standard_normal((3, 4)), None, [[BOS, EOS]])
        got_tokens, got_logp = beam_search(model, ep, beam_width=width, max_len=max_len)

        content = [t for t in range(4) if t not in (PAD, BOS, EOS)]
        candidates = [tuple(p) + (EOS,) for k in range(max_len)
                      for p in itertools.product(content, repeat=k)]
        scored = [(model.sequence_logprob(ep, list(seq)), seq) for seq in candidates]
        want_logp, want_seq = min(scored, key=lambda s: (-s[0], s[1]))
        if got_tokens != list(want_seq):
            seq_mismatch += 1
        worst_logp = max(worst_logp, abs(got_logp - want_logp))

    greedy_mismatch = 0
    n_eps = 0
    for seed in range(20):
        cfg = Config(mode=("none", "t", "m")[seed % 3], key_dim=4, value_dim=4,
                     hidden_dim=5, embed_dim=4, attn_dim=4, num_frames=3,
                     vocab_size=8, batch_size=1)
        model = Model(cfg, seed=seed)
        for j in range(10):
            ep = gen_copy_episode(3, 8, 4, seed=1000 * seed + j)
            tokens, _ = beam_search(model, ep, beam_width=1)
            if tokens != greedy_decode(model, ep):
                greedy_mismatch += 1
            n_eps += 1

    ok = seq_mismatch == 0 and worst_logp <= 1e-9 and greedy_mismatch == 0 and n_eps == 200
    _report(4, ok, f"{n_models} models vs enumeration: {seq_mismatch} sequence and "
                   f"{worst_logp:.1e} log-prob mismatches; width-1 vs greedy: "
                   f"{greedy_mismatch}/{n_eps} mismatches")


def test_criterion_5_learnability():
    budget_steps, budget_seconds = 3000, 600.0
    cfg = Config(mode="m", task="copy", num_frames=8, vocab_size=12, seed=1)
    model = Model(cfg, seed=1)
    opt = Adadelta(model.params, rho=cfg.rho, eps=cfg.opt_eps)
    stream = synthetic_stream(cfg, 1)
    probe = [gen_copy_episode(8, 12, cfg.key_dim, seed=9_000_000 + i) for i in range(64)]

    started = time.perf_counter()
    losses = []
    acc = 0.0
    while len(losses) < budget_steps and time.perf_counter() - started < budget_seconds:
        losses += train(model, opt, stream, steps=250, clip_norm=cfg.clip_norm)
        acc = token_accuracy(model, probe)
        if acc >= 0.95:
            break
    elapsed = time.perf_counter() - started
    ratio = losses[49] / losses[0]

    vocab = Vocabulary.synthetic(cfg.vocab_size)
    train_eps = [ep for batch in itertools.islice(synthetic_stream(cfg, 1), 2) for ep, _ in batch]
    bleu = evaluate(model, train_eps, vocab).bleu4

    ok = acc >= 0.95 and len(losses) <= budget_steps and elapsed < budget_seconds and ratio <= 0.8 and bleu >= 0.9
    _report(5, ok, f"copy T=8 V=12 mode m: accuracy {acc:.3f} >= 0.95 after "
                   f"{len(losses)} <= {budget_steps} updates in {elapsed:.0f}s < {budget_seconds:.0f}s; "
                   f"loss ratio at step 50 {ratio:.3f} <= 0.8; "
                   f"bleu4 on training episodes {bleu:.3f} >= 0.9")

    # comparative report, informational only: recurrent summary vs no summary
    probe_r = [gen_recall_episode(6, 12, cfg.key_dim, seed=9_500_000 + i) for i in range(48)]
    accs = {}
    for mode in ("m", "none"):
        rcfg = Config(mode=mode, task="recall", num_frames=6, vocab_size=12, seed=2)
        rmodel = Model(rcfg, seed=2)
        ropt = Adadelta(rmodel.params, rho=rcfg.rho, eps=rcfg.opt_eps)
        train(rmodel, ropt, synthetic_stream(rcfg, 2), steps=250, clip_norm=rcfg.clip_norm)
        accs[mode] = token_accuracy(rmodel, probe_r)
    verdict = "holds" if accs["m"] >= accs["none"] else "does NOT hold"
    line = (f"[acceptance] criterion 5 comparative (not hard-fail): recall accuracy "
            f"mode m {accs['m']:.3f} vs mode none {accs['none']:.3f} -> m >= none {verdict}")
    print(line)
    record_acceptance(line)


def test_criterion_6_metric_oracle():
    corpus = [
        ("the cat is on the mat".split(),
         ["the cat is on the mat".split(), "there is a cat on the mat".split()]),
        ("a man rides a red bike".split(),
         ["a man is riding a red bicycle".split(), "a man rides a bicycle".split()]),
        ("dogs play in the park".split(),
         ["the dogs are playing in a park".split(), "dogs play at the park".split()]),
    ]
    pairs = [EvalPair(h, [list(r) for r in refs]) for h, refs in corpus]
    got = bleu4(pairs)
    ref = reference_bleu4(corpus)
    err = abs(got - ref)

    identical = bleu4([EvalPair(list(h), [list(h)]) for h, _ in corpus])
    disjoint = bleu4([EvalPair("p q r s".split(), [["w", "x", "y", "z"]])])

    ok = err <= 1e-6 and abs(identical - 1.0) <= 1e-12 and disjoint == 0.0
    _report(6, ok, f"3-pair corpus: |{got:.6f} - reference {ref:.6f}| = {err:.1e} <= 1e-6; "
                   f"identical -> {identical:.6f}; disjoint -> {disjoint:.6f}")


def test_criterion_7_determinism_and_persistence(tmp_path):
    flags = ["--key-dim", "4", "--value-dim", "4", "--hidden-dim", "5", "--embed-dim", "4",
             "--attn-dim", "4", "--num-frames", "3", "--vocab-size", "8",
             "--batch-size", "2", "--steps", "5", "--seed", "13"]
    logs = []
    for name in ("one", "two"):
        out = tmp_path / name
        assert cli_main(["train", *flags, "--out", str(out)]) == 0
        logs.append((out / "losses.tsv").read_bytes())
    logs_equal = logs[0] == logs[1]

    cfg, vocab, _, tensors = load_checkpoint(tmp_path / "one" / "ckpt-final.kvmn")
    a = tmp_path / "one" / "ckpt-final.kvmn"
    b = tmp_path / "resaved.kvmn"
    loaded = load_checkpoint(a)
    save_checkpoint(b, loaded[0], loaded[1], loaded[2], loaded[3])
    roundtrip_equal = a.read_bytes() == b.read_bytes()

    zcfg = Config(mode="m", key_dim=4, value_dim=4, hidden_dim=5, embed_dim=4,
                  attn_dim=4, num_frames=4, vocab_size=7, batch_size=1)
    zmodel = Model(zcfg, seed=1)
    for p in zmodel.params.values():
        p.data[...] = 0.0
    ep = gen_copy_episode(4, 7, 4, seed=3)
    L = len(ep.captions[0]) - 1
    loss, _ = zmodel.sequence_loss(Tape(), [ep])
    zero_loss_exact = float(loss.data) == L * math.log(zcfg.vocab_size)

    p = make_lstm(4, 3)
    c_prev = Tensor(np.random.default_rng(5).standard_normal(4))
    _, c = lstm_step(Tape(), p, zeros(4), c_prev, zeros(3))
    halving_exact = np.array_equal(c.data, 0.5 * c_prev.data)

    ok = logs_equal and roundtrip_equal and zero_loss_exact and halving_exact
    _report(7, ok, f"loss logs bitwise equal: {logs_equal}; checkpoint round trip "
                   f"byte-identical: {roundtrip_equal}; zero-parameter loss == "
                   f"{L}*ln 7: {zero_loss_exact}; zero-weight cell halves exactly: {halving_exact}")
