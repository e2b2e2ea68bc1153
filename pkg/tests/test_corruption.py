import numpy as np
import pytest

from qalign import corruption as C
from qalign.vocab import EOS_ID, MASK_ID, N_SPECIALS, sentinel_id

A, B, Cc, D, E = 110, 111, 112, 113, 114  # plain word ids


class TestBartDenoise:
    def test_forced_span(self):
        sample = C.corrupt_bart([A, B, Cc, D, E], spans=[(1, 2)])
        assert sample.corrupted_ids == [A, MASK_ID, D, E]
        assert sample.target_ids == [A, B, Cc, D, E]
        assert sample.masked_spans == [(1, 2)]

    def test_rate_zero_is_identity(self):
        sample = C.corrupt_bart([A, B, Cc], corruption_rate=0.0,
                                rng=np.random.default_rng(0))
        assert sample.corrupted_ids == [A, B, Cc]
        assert sample.target_ids == [A, B, Cc]
        assert sample.masked_spans == []

    def test_masked_fraction_monte_carlo(self):
        rng = np.random.default_rng(42)
        masked = total = 0
        for _ in range(10_000):
            n = int(rng.integers(20, 80))
            ids = rng.integers(N_SPECIALS, 500, size=n).tolist()
            sample = C.corrupt_bart(ids, corruption_rate=0.15, rng=rng)
            masked += sum(length for _, length in sample.masked_spans)
            total += n
        assert abs(masked / total - 0.15) < 0.02

    def test_sentence_shuffling_keeps_original_target(self):
        period = 120
        ids = [A, period, B, Cc, period, D, period]
        rng = np.random.default_rng(3)
        sample = C.corrupt_bart(ids, corruption_rate=0.0, rng=rng,
                                shuffle_sentences=True, sentence_end_id=period)
        assert sample.target_ids == ids
        assert sorted(sample.corrupted_ids) == sorted(ids)


class TestT5SpanInfill:
    def test_forced_single_span(self):
        sample = C.corrupt_t5([A, B, Cc, D, E], spans=[(1, 2)])
        assert sample.corrupted_ids == [A, sentinel_id(0), D, E]
        assert sample.target_ids == [sentinel_id(0), B, Cc, EOS_ID]

    def test_no_spans(self):
        sample = C.corrupt_t5([A, B, Cc], spans=[])
        assert sample.corrupted_ids == [A, B, Cc]
        assert sample.target_ids == [EOS_ID]

    def test_two_span_sentinel_order_exhaustive(self):
        # all 2-span placements over an 8-token sequence
        ids = list(range(200, 208))
        for s1 in range(8):
            for l1 in range(1, 8 - s1):
                for s2 in range(s1 + l1, 8):
                    for l2 in range(1, 9 - s2):
                        sample = C.corrupt_t5(ids, spans=[(s1, l1), (s2, l2)])
                        k0 = sample.corrupted_ids.index(sentinel_id(0))
                        k1 = sample.corrupted_ids.index(sentinel_id(1))
                        assert k0 < k1
                        assert sample.target_ids[0] == sentinel_id(0)
                        assert sample.target_ids[1 + l1] == sentinel_id(1)
                        assert sample.target_ids[1 : 1 + l1] == ids[s1 : s1 + l1]
                        assert sample.target_ids[2 + l1 : 2 + l1 + l2] == ids[s2 : s2 + l2]
                        assert sample.target_ids[-1] == EOS_ID

    def test_too_many_spans(self):
        ids = list(range(200, 200 + 250))
        spans = [(2 * k, 1) for k in range(101)]
        with pytest.raises(ValueError, match="sentinel"):
            C.corrupt_t5(ids, spans=spans)


class TestSharedProperties:
    @pytest.mark.parametrize("style", list(C.CorruptionStyle))
    def test_lossless_reconstruction(self, style):
        rng = np.random.default_rng(7)
        for _ in range(200):
            n = int(rng.integers(5, 60))
            ids = rng.integers(N_SPECIALS, 400, size=n).tolist()
            sample = C.corrupt(style, ids, corruption_rate=0.3, rng=rng)
            assert C.reconstruct_original(sample) == ids

    def test_same_seed_same_sample(self):
        ids = list(range(200, 240))
        for style in C.CorruptionStyle:
            a = C.corrupt(style, ids, rng=np.random.default_rng(5))
            b = C.corrupt(style, ids, rng=np.random.default_rng(5))
            assert a == b

    def test_spans_never_touch_specials(self):
        rng = np.random.default_rng(11)
        ids = [sentinel_id(3), A, B, MASK_ID, Cc, D, EOS_ID, E] * 5
        for _ in range(300):
            spans = C.sample_spans(ids, 0.4, 2.0, rng)
            for start, length in spans:
                assert all(t >= N_SPECIALS for t in ids[start : start + length])

    def test_spans_sorted_and_disjoint(self):
        rng = np.random.default_rng(13)
        for _ in range(200):
            ids = rng.integers(N_SPECIALS, 400, size=50).tolist()
            spans = C.sample_spans(ids, 0.4, 3.0, rng)
            ends = 0
            for start, length in spans:
                assert start >= ends
                ends = start + length

    def test_overlapping_forced_spans_rejected(self):
        with pytest.raises(ValueError, match="overlap"):
            C.corrupt_bart([A, B, Cc, D, E], spans=[(0, 3), (2, 2)])

    def test_special_touching_forced_span_rejected(self):
        with pytest.raises(ValueError, match="special"):
            C.corrupt_t5([A, MASK_ID, B], spans=[(1, 1)])
