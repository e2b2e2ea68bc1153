"""Greedy auto-regressive generation and the deterministic answer extractor.

Generation starts from the sequence-start token, appends the argmax token
each step (ties to the lowest id), and stops at end-of-sequence or the step
budget. Budgets follow the objective: 50 when a prefix precedes the answer,
25 when only the answer (or answer-led text) is generated.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import model as model_mod
from . import vocab as vocab_mod
from .prompts import ObjectiveKind
from .vocab import BOS_ID, EOS_ID, Vocab


class StopReason(Enum):
    EOS = "eos"
    MAX_STEPS = "max_steps"


@dataclass
class DecodeResult:
    generated_ids: list[int]
    text: str
    steps_used: int
    stopped_by: StopReason


_LONG_BUDGET = 50
_SHORT_BUDGET = 25


def default_max_steps(objective: ObjectiveKind) -> int:
    """50 steps for objectives that regenerate a prefix, 25 otherwise."""
    if objective in (ObjectiveKind.QUESTION_THEN_ANSWER,
                     ObjectiveKind.FULL_INPUT_GENERATION,
                     ObjectiveKind.ANSWER_THEN_QUESTION):
        return _LONG_BUDGET
    if objective in (ObjectiveKind.SENTINEL_ANSWER,
                     ObjectiveKind.ANSWER_ONLY_GENERATION):
        return _SHORT_BUDGET
    raise ValueError(f"{objective} does not decode text")


def greedy_decode(model, v: Vocab, input_ids, max_steps: int,
                  logits_fn=None) -> DecodeResult:
    """Argmax decoding with early stop on end-of-sequence.

    `logits_fn(decoder_ids) -> [vocab_size] array` overrides the model's
    next-token distribution; tests use it to drive degenerate generators.
    """
    if max_steps < 1:
        raise ValueError("max_steps must be at least 1")
    position_limit = None
    if logits_fn is None:
        enc_out = model_mod.encode(model, input_ids)
        emb_t = model.params["tok_emb"].data.T

        def logits_fn(decoder_ids):
            states = model_mod.decoder_states(model, enc_out, decoder_ids)
            return states.data[-1] @ emb_t

        position_limit = model.config.max_positions

    decoder_ids = [BOS_ID]
    stopped_by = StopReason.MAX_STEPS
    steps = max_steps
    for step in range(1, max_steps + 1):
        next_id = int(np.argmax(logits_fn(decoder_ids)))
        decoder_ids.append(next_id)
        if next_id == EOS_ID:
            stopped_by = StopReason.EOS
            steps = step
            break
        if position_limit is not None and len(decoder_ids) >= position_limit:
            steps = step
            break
    generated = decoder_ids[1:]
    return DecodeResult(generated, vocab_mod.decode(v, generated), steps, stopped_by)


_ANSWER_MARKER = "Answer:"
_SECTION_MARKERS = ("Context:", "Question:")


def answer_extract(text: str, objective: ObjectiveKind) -> str:
    """Pull the answer out of generated text by the fixed-template rule.

    Takes the substring after the last-started answer marker and cuts it at
    the first period that is followed by a section marker or the end of the
    text. An empty result signals extraction failure and scores as a miss.
    """
    if objective is ObjectiveKind.SPAN_SELECTION:
        raise ValueError("span selection does not extract from generated text")
    if objective is ObjectiveKind.ANSWER_ONLY_GENERATION:
        return text.strip()
    marker_at = text.rfind(_ANSWER_MARKER)
    if marker_at < 0:
        return ""
    segment = text[marker_at + len(_ANSWER_MARKER):]
    for dot in re.finditer(r"\.", segment):
        rest = segment[dot.end():].lstrip()
        if rest == "" or rest.startswith(_SECTION_MARKERS):
            return segment[: dot.start()].strip()
    return segment.strip()
