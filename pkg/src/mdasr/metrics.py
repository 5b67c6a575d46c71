"""Word error rate via minimal edit distance with unit costs.

Corpus-level WER pools edit counts over pooled reference length; the mean of
per-utterance rates is exposed separately but the pooled number is primary.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def _words(x) -> list[str]:
    if isinstance(x, str):
        return x.split()
    return list(x)


def edit_distance(ref, hyp) -> int:
    """Two-row Levenshtein distance with unit costs."""
    r, h = _words(ref), _words(hyp)
    if not r:
        return len(h)
    if not h:
        return len(r)
    prev = list(range(len(h) + 1))
    for i, rc in enumerate(r, start=1):
        cur = [i] + [0] * len(h)
        for j, hc in enumerate(h, start=1):
            if rc == hc:
                cur[j] = prev[j - 1]
            else:
                cur[j] = 1 + min(prev[j - 1], prev[j], cur[j - 1])
        prev = cur
    return prev[-1]


@dataclass
class EditCounts:
    substitutions: int
    deletions: int
    insertions: int

    @property
    def total(self) -> int:
        return self.substitutions + self.deletions + self.insertions


def edit_counts(ref, hyp) -> EditCounts:
    """Full DP table with backtrace; one optimal split into S/D/I."""
    r, h = _words(ref), _words(hyp)
    n, m = len(r), len(h)
    d = np.zeros((n + 1, m + 1), dtype=np.int64)
    d[:, 0] = np.arange(n + 1)
    d[0, :] = np.arange(m + 1)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            sub = d[i - 1, j - 1] + (r[i - 1] != h[j - 1])
            d[i, j] = min(sub, d[i - 1, j] + 1, d[i, j - 1] + 1)
    subs = dels = ins = 0
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and d[i, j] == d[i - 1, j - 1] + (r[i - 1] != h[j - 1]):
            if r[i - 1] != h[j - 1]:
                subs += 1
            i -= 1
            j -= 1
        elif i > 0 and d[i, j] == d[i - 1, j] + 1:
            dels += 1
            i -= 1
        else:
            ins += 1
            j -= 1
    return EditCounts(subs, dels, ins)


def wer(hyp, ref) -> float:
    """(S + D + I) / |ref|; an empty ref with a nonempty hyp counts the
    insertions over a unit denominator."""
    r, h = _words(ref), _words(hyp)
    dist = edit_distance(r, h)
    if not r:
        return float(dist)  # insertions / 1
    return dist / len(r)


def corpus_wer(pairs: list[tuple[str, str]]) -> float:
    """Pooled edit counts over pooled reference length. pairs = (hyp, ref)."""
    edits = 0
    ref_len = 0
    for hyp, ref in pairs:
        r, h = _words(ref), _words(hyp)
        edits += edit_distance(r, h)
        ref_len += len(r)
    if ref_len == 0:
        return float(edits)
    return edits / ref_len


def mean_utterance_wer(pairs: list[tuple[str, str]]) -> float:
    """Mean of per-utterance rates (secondary; pooled corpus_wer is primary)."""
    if not pairs:
        return 0.0
    return float(np.mean([wer(h, r) for h, r in pairs]))
