"""WER scorer vs a full DP-table oracle, plus pooling semantics."""

import numpy as np
import pytest

from mdasr.metrics import EditCounts, corpus_wer, edit_counts, edit_distance, mean_utterance_wer, wer


def dp_oracle(ref: list[str], hyp: list[str]) -> int:
    """Independent full-table Levenshtein distance."""
    n, m = len(ref), len(hyp)
    d = np.zeros((n + 1, m + 1), dtype=int)
    d[:, 0] = np.arange(n + 1)
    d[0, :] = np.arange(m + 1)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            d[i, j] = min(
                d[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1]),
                d[i - 1, j] + 1,
                d[i, j - 1] + 1,
            )
    return int(d[n, m])


class TestWer:
    def test_identity_is_zero(self):
        assert wer("a b c", "a b c") == 0.0

    def test_all_deletions(self):
        assert wer("", "one two three") == 1.0

    def test_empty_ref_counts_insertions(self):
        assert wer("a b", "") == 2.0

    def test_both_empty(self):
        assert wer("", "") == 0.0

    def test_thousand_random_pairs_vs_dp_oracle(self):
        rng = np.random.default_rng(0)
        words = ["a", "b", "c", "dog", "cat"]
        for _ in range(1000):
            ref = [words[i] for i in rng.integers(0, len(words), rng.integers(0, 8))]
            hyp = [words[i] for i in rng.integers(0, len(words), rng.integers(0, 8))]
            want = dp_oracle(ref, hyp)
            assert edit_distance(ref, hyp) == want
            c = edit_counts(ref, hyp)
            assert c.total == want  # backtrace split sums to the distance
            if ref:
                assert wer(hyp, ref) == want / len(ref)


class TestCorpusPooling:
    def test_pooled_not_mean_of_rates(self):
        pairs = [("a", "a b b b"), ("x", "x")]  # rates: 0.75 and 0.0
        assert corpus_wer(pairs) == pytest.approx(3 / 5)
        assert mean_utterance_wer(pairs) == pytest.approx((0.75 + 0.0) / 2)

    def test_empty_ref_pools_insertions(self):
        pairs = [("a b", ""), ("c", "c")]
        assert corpus_wer(pairs) == pytest.approx(2 / 1)

    def test_wer_nonnegative_property(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            hyp = " ".join(rng.choice(["u", "v", "w"], rng.integers(0, 5)))
            ref = " ".join(rng.choice(["u", "v", "w"], rng.integers(1, 5)))
            assert wer(hyp, ref) >= 0.0
