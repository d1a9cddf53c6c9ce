"""Shared test helpers and the acceptance summary section."""

import math

ACCEPTANCE_LINES = []


def record_acceptance(line):
    """Queue a criterion verdict for the end-of-run summary."""
    ACCEPTANCE_LINES.append(line)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def reference_bleu4(pairs, smooth=False):
    """From-the-definition corpus BLEU@4, written independently of the
    package implementation: plain dict counting, per-order clipped matches
    summed over the corpus, closest-reference brevity penalty.

    ``pairs`` is a sequence of (hypothesis_tokens, [reference_tokens, ...]).
    """
    if not pairs:
        return 0.0

    def grams(tokens, n):
        table = {}
        for i in range(len(tokens) - n + 1):
            g = tuple(tokens[i : i + n])
            table[g] = table.get(g, 0) + 1
        return table

    c = sum(len(hyp) for hyp, _ in pairs)
    if c == 0:
        return 0.0
    r = 0
    for hyp, refs in pairs:
        best = None
        for ref in refs:
            d = abs(len(ref) - len(hyp))
            if best is None or d < best[0] or (d == best[0] and len(ref) < best[1]):
                best = (d, len(ref))
        r += best[1]

    log_p = 0.0
    for n in range(1, 5):
        matched = 0
        total = 0
        for hyp, refs in pairs:
            hyp_grams = grams(hyp, n)
            for g, count in hyp_grams.items():
                cap = 0
                for ref in refs:
                    cap = max(cap, grams(ref, n).get(g, 0))
                matched += min(count, cap)
                total += count
        if smooth:
            matched, total = matched + 1, total + 1
        if matched == 0:
            return 0.0
        log_p += math.log(matched / total)
    bp = 1.0 if c >= r else math.exp(1.0 - r / c)
    return bp * math.exp(log_p / 4.0)
