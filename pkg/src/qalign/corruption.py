"""Self-supervised (input, target) pairs for the two pretraining styles.

Denoising replaces each selected span with the single mask token and asks
the model to regenerate the whole original sequence. Span infill replaces
the k-th span with sentinel k and generates only the masked spans, each
prefixed by its sentinel. Both are pure functions of an explicit rng.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .vocab import EOS_ID, MASK_ID, N_SENTINELS, N_SPECIALS, sentinel_id


class CorruptionStyle(Enum):
    BART_DENOISE = "bart_denoise"
    T5_SPAN_INFILL = "t5_span_infill"


@dataclass
class CorruptionSample:
    style: CorruptionStyle
    corrupted_ids: list[int]
    target_ids: list[int]
    masked_spans: list[tuple[int, int]]  # (start, length) over the original ids


def sample_spans(ids, corruption_rate: float, mean_span_len: float,
                 rng: np.random.Generator) -> list[tuple[int, int]]:
    """Non-overlapping spans over non-special positions.

    Lengths are geometric with the given mean, clipped to the remaining
    token budget (about corruption_rate of the sequence) and to the
    sequence end. Returned spans are sorted by start.
    """
    if not 0.0 <= corruption_rate < 1.0:
        raise ValueError(f"corruption_rate {corruption_rate} outside [0, 1)")
    if mean_span_len < 1.0:
        raise ValueError("mean_span_len must be at least 1")
    n = len(ids)
    budget = int(round(n * corruption_rate))
    if budget <= 0:
        return []

    maskable = np.array([tok >= N_SPECIALS for tok in ids])
    covered = np.zeros(n, dtype=bool)
    spans: list[tuple[int, int]] = []
    masked = 0
    for _ in range(20 * n):
        if masked >= budget:
            break
        length = min(int(rng.geometric(1.0 / mean_span_len)), budget - masked, n)
        start = int(rng.integers(0, n - length + 1))
        window = slice(start, start + length)
        if covered[window].any() or not maskable[window].all():
            continue
        covered[window] = True
        spans.append((start, length))
        masked += length
    spans.sort()
    return spans


def _check_spans(ids, spans) -> None:
    n = len(ids)
    prev_end = 0
    for start, length in spans:
        if length < 1 or start < 0 or start + length > n:
            raise ValueError(f"span {(start, length)} outside sequence of length {n}")
        if start < prev_end:
            raise ValueError(f"span {(start, length)} overlaps its predecessor")
        if any(ids[i] < N_SPECIALS for i in range(start, start + length)):
            raise ValueError(f"span {(start, length)} touches a special token")
        prev_end = start + length


def corrupt_bart(ids, corruption_rate: float = 0.15, mean_span_len: float = 3.0,
                 rng: np.random.Generator | None = None,
                 spans: list[tuple[int, int]] | None = None,
                 shuffle_sentences: bool = False,
                 sentence_end_id: int | None = None) -> CorruptionSample:
    """Mask spans with the single mask token; the target is the original sequence.

    Optional sentence shuffling permutes sentence order (split after
    `sentence_end_id`) before masking; the target stays the unshuffled
    original, so reported spans are relative to the shuffled input.
    """
    ids = list(ids)
    if not ids:
        raise ValueError("ids must be non-empty")
    source = ids
    if shuffle_sentences:
        if sentence_end_id is None:
            raise ValueError("sentence shuffling needs sentence_end_id")
        if rng is None:
            raise ValueError("sentence shuffling needs an rng")
        source = _shuffle_sentences(ids, sentence_end_id, rng)
    if spans is None:
        if rng is None:
            raise ValueError("provide either spans or an rng")
        spans = sample_spans(source, corruption_rate, mean_span_len, rng)
    _check_spans(source, spans)

    corrupted: list[int] = []
    cursor = 0
    for start, length in spans:
        corrupted.extend(source[cursor:start])
        corrupted.append(MASK_ID)
        cursor = start + length
    corrupted.extend(source[cursor:])
    return CorruptionSample(CorruptionStyle.BART_DENOISE, corrupted, list(ids), list(spans))


def corrupt_t5(ids, corruption_rate: float = 0.15, mean_span_len: float = 3.0,
               rng: np.random.Generator | None = None,
               spans: list[tuple[int, int]] | None = None) -> CorruptionSample:
    """Replace the k-th span with sentinel k; generate only the masked spans.

    The target is sentinel_0, span 0 tokens, sentinel_1, span 1 tokens, ...
    followed by the end-of-sequence id. Sentinels ascend in input order.
    """
    ids = list(ids)
    if not ids:
        raise ValueError("ids must be non-empty")
    if spans is None:
        if rng is None:
            raise ValueError("provide either spans or an rng")
        spans = sample_spans(ids, corruption_rate, mean_span_len, rng)
    _check_spans(ids, spans)
    if len(spans) > N_SENTINELS:
        raise ValueError(f"{len(spans)} spans exceed the {N_SENTINELS} sentinel ids")

    corrupted: list[int] = []
    target: list[int] = []
    cursor = 0
    for k, (start, length) in enumerate(spans):
        corrupted.extend(ids[cursor:start])
        corrupted.append(sentinel_id(k))
        target.append(sentinel_id(k))
        target.extend(ids[start : start + length])
        cursor = start + length
    corrupted.extend(ids[cursor:])
    target.append(EOS_ID)
    return CorruptionSample(CorruptionStyle.T5_SPAN_INFILL, corrupted, target, list(spans))


def corrupt(style: CorruptionStyle, ids, corruption_rate: float = 0.15,
            mean_span_len: float = 3.0,
            rng: np.random.Generator | None = None) -> CorruptionSample:
    if style is CorruptionStyle.BART_DENOISE:
        return corrupt_bart(ids, corruption_rate, mean_span_len, rng)
    return corrupt_t5(ids, corruption_rate, mean_span_len, rng)


def reconstruct_original(sample: CorruptionSample) -> list[int]:
    """Rebuild the uncorrupted sequence from the sample alone (lossless check)."""
    if sample.style is CorruptionStyle.BART_DENOISE:
        out: list[int] = []
        span_iter = iter(sample.masked_spans)
        for tok in sample.corrupted_ids:
            if tok == MASK_ID:
                start, length = next(span_iter)
                out.extend(sample.target_ids[start : start + length])
            else:
                out.append(tok)
        return out

    segments: dict[int, list[int]] = {}
    current: list[int] | None = None
    for tok in sample.target_ids:
        if tok == EOS_ID:
            break
        if SENTINEL_LO <= tok < SENTINEL_HI:
            current = segments.setdefault(tok, [])
        elif current is not None:
            current.append(tok)
    out = []
    for tok in sample.corrupted_ids:
        if tok in segments:
            out.extend(segments[tok])
        else:
            out.append(tok)
    return out


SENTINEL_LO = sentinel_id(0)
SENTINEL_HI = sentinel_id(N_SENTINELS - 1) + 1


def _shuffle_sentences(ids: list[int], sentence_end_id: int,
                       rng: np.random.Generator) -> list[int]:
    sentences: list[list[int]] = []
    current: list[int] = []
    for tok in ids:
        current.append(tok)
        if tok == sentence_end_id:
            sentences.append(current)
            current = []
    if current:
        sentences.append(current)
    order = rng.permutation(len(sentences))
    return [tok for i in order for tok in sentences[i]]
