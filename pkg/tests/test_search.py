"""Greedy and beam decoding against exhaustive enumeration.

Enumeration scores every candidate sequence with the same teacher-forced
chain the searches use, so with a beam wide enough to never prune, the beam
must land on exactly the enumeration winner, score and all.
"""

import itertools

import numpy as np
import pytest

from kvmemnet.config import Config
from kvmemnet.data import gen_copy_episode
from kvmemnet.errors import ConfigError
from kvmemnet.layers import BOS, EOS, PAD
from kvmemnet.model import Model
from kvmemnet.search import beam_search, greedy_decode

DIMS = dict(key_dim=4, value_dim=4, hidden_dim=5, embed_dim=4, attn_dim=4,
            num_frames=3, batch_size=1)


def small_model(seed, vocab_size=8, mode="m", **extra):
    cfg = Config(mode=mode, key_mode="direct", vocab_size=vocab_size, **{**DIMS, **extra})
    return Model(cfg, seed=seed)


def small_episode(seed, vocab_size=8):
    return gen_copy_episode(DIMS["num_frames"], vocab_size, DIMS["key_dim"], seed)


def enumerate_best(model, episode, max_len, length_normalize=False):
    """Score every sequence the search could emit and pick the winner.

    Finished sequences end with EOS; only when none exists (impossible here,
    the bare EOS always qualifies) would unfinished ones compete. Ties break
    toward the lexicographically smaller token tuple.
    """
    allowed = [t for t in range(model.config.vocab_size) if t not in (PAD, BOS)]
    content = [t for t in allowed if t != EOS]
    candidates = []
    for k in range(max_len):
        for prefix in itertools.product(content, repeat=k):
            candidates.append(prefix + (EOS,))

    def key(seq):
        lp = model.sequence_logprob(episode, list(seq))
        score = lp / len(seq) if length_normalize else lp
        return (-score, seq)

    best = min(candidates, key=key)
    return list(best), model.sequence_logprob(episode, list(best))


class TestGreedy:
    def test_uniform_model_emits_eos_immediately(self):
        """All-equal probabilities tie; the lowest allowed id wins, which is
        EOS once PAD and BOS are masked."""
        model = small_model(seed=1)
        for p in model.params.values():
            p.data[...] = 0.0
        assert greedy_decode(model, small_episode(2)) == [EOS]

    def test_rigged_bias_is_followed(self):
        model = small_model(seed=1)
        for p in model.params.values():
            p.data[...] = 0.0
        model.params["out.b_p"].data[5] = 10.0
        out = greedy_decode(model, small_episode(2), max_len=4)
        assert out == [5, 5, 5, 5]  # never finishes, capped by max_len

    def test_stops_at_eos(self):
        model = small_model(seed=3)
        out = greedy_decode(model, small_episode(4), max_len=12)
        assert out.count(EOS) <= 1
        if EOS in out:
            assert out[-1] == EOS

    def test_never_emits_pad_or_bos(self):
        for seed in range(10):
            out = greedy_decode(small_model(seed), small_episode(seed + 50), max_len=8)
            assert PAD not in out and BOS not in out

    def test_bad_max_len(self):
        with pytest.raises(ConfigError):
            greedy_decode(small_model(1), small_episode(1), max_len=0)


class TestBeamBasics:
    def test_width_one_equals_greedy(self):
        for seed in range(20):
            model = small_model(seed)
            ep = small_episode(seed + 100)
            tokens, _ = beam_search(model, ep, beam_width=1, max_len=8)
            assert tokens == greedy_decode(model, ep, max_len=8)

    def test_logp_matches_rescoring(self):
        """The score the beam reports must equal the teacher-forced
        log-probability of the sequence it returns."""
        for seed in range(10):
            model = small_model(seed)
            ep = small_episode(seed + 200)
            tokens, logp = beam_search(model, ep, beam_width=4, max_len=8)
            np.testing.assert_allclose(logp, model.sequence_logprob(ep, tokens), atol=1e-9)

    def test_deterministic(self):
        model = small_model(7)
        ep = small_episode(7)
        a = beam_search(model, ep, beam_width=3, max_len=6)
        b = beam_search(model, ep, beam_width=3, max_len=6)
        assert a[0] == b[0] and a[1] == b[1]

    def test_never_emits_pad_or_bos(self):
        for seed in range(10):
            tokens, _ = beam_search(small_model(seed), small_episode(seed + 300), beam_width=3, max_len=6)
            assert PAD not in tokens and BOS not in tokens

    def test_eos_bias_gives_empty_caption(self):
        """A model that always prefers EOS returns just the terminator."""
        model = small_model(seed=1)
        for p in model.params.values():
            p.data[...] = 0.0
        model.params["out.b_p"].data[EOS] = 10.0
        tokens, logp = beam_search(model, ep := small_episode(2), beam_width=4, max_len=6)
        assert tokens == [EOS]
        np.testing.assert_allclose(logp, model.sequence_logprob(ep, [EOS]), atol=1e-12)

    def test_bad_arguments(self):
        with pytest.raises(ConfigError):
            beam_search(small_model(1), small_episode(1), beam_width=0)
        with pytest.raises(ConfigError):
            beam_search(small_model(1), small_episode(1), beam_width=2, max_len=0)


class TestBeamAgainstEnumeration:
    MAX_LEN = 4

    def _no_prune_width(self, vocab_size):
        content = vocab_size - 3  # PAD and BOS never expand; EOS ends
        return sum(content**k for k in range(self.MAX_LEN)) * (content + 1) + 10

    @pytest.mark.parametrize("mode", ["none", "t", "m"])
    def test_wide_beam_finds_the_optimum(self, mode):
        for seed in range(8):
            model = small_model(seed, vocab_size=6, mode=mode)
            ep = small_episode(seed + 400, vocab_size=6)
            width = self._no_prune_width(6)
            got_tokens, got_logp = beam_search(model, ep, beam_width=width, max_len=self.MAX_LEN)
            want_tokens, want_logp = enumerate_best(model, ep, self.MAX_LEN)
            assert got_tokens == want_tokens, f"seed {seed}"
            np.testing.assert_allclose(got_logp, want_logp, atol=1e-9)

    def test_wide_beam_with_length_normalization(self):
        for seed in range(4):
            model = small_model(seed, vocab_size=6)
            ep = small_episode(seed + 500, vocab_size=6)
            width = self._no_prune_width(6)
            got_tokens, got_logp = beam_search(
                model, ep, beam_width=width, max_len=self.MAX_LEN, length_normalize=True
            )
            want_tokens, want_logp = enumerate_best(model, ep, self.MAX_LEN, length_normalize=True)
            assert got_tokens == want_tokens, f"seed {seed}"
            np.testing.assert_allclose(got_logp, want_logp, atol=1e-9)

    def test_score_improves_with_width(self):
        """Among runs that terminate, widening the beam never hurts.

        A mild EOS bias makes every random model terminate within the cap,
        so the monotonicity claim is tested on all of them rather than on a
        lucky subset.
        """
        for seed in range(12):
            model = small_model(seed)
            model.params["out.b_p"].data[EOS] = 1.5
            ep = small_episode(seed + 600)
            scores = []
            for width in (1, 2, 4, 8):
                tokens, logp = beam_search(model, ep, beam_width=width, max_len=8)
                assert tokens and tokens[-1] == EOS
                scores.append(logp)
            for a, b in zip(scores, scores[1:]):
                assert b >= a - 1e-12
