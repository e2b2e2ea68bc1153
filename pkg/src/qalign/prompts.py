"""Fine-tuning input/target construction for all six objective variants.

Five generative variants share the text templates below; the sixth is the
extractive span-selection baseline whose target is a (start, end) token
span. `QUESTION_THEN_ANSWER` pairs naturally with denoising pretraining,
`SENTINEL_ANSWER` with span-infill pretraining: their inputs put the mask
where the answer belongs, so the fine-tuned task looks like one more
corruption to repair.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

from . import autodiff as ad
from . import model as model_mod
from . import vocab as vocab_mod
from .vocab import EOS_ID, MASK_ID, SENTINEL_0_ID, Vocab


class ObjectiveKind(Enum):
    SPAN_SELECTION = "span_selection"
    FULL_INPUT_GENERATION = "full_input_generation"
    QUESTION_THEN_ANSWER = "question_then_answer"
    ANSWER_THEN_QUESTION = "answer_then_question"
    ANSWER_ONLY_GENERATION = "answer_only_generation"
    SENTINEL_ANSWER = "sentinel_answer"


GENERATIVE_OBJECTIVES = tuple(o for o in ObjectiveKind if o is not ObjectiveKind.SPAN_SELECTION)
MASK_BEARING_OBJECTIVES = (
    ObjectiveKind.FULL_INPUT_GENERATION,
    ObjectiveKind.QUESTION_THEN_ANSWER,
    ObjectiveKind.ANSWER_THEN_QUESTION,
    ObjectiveKind.SENTINEL_ANSWER,
)

# literal template pieces; also fed to vocabulary building so every
# fine-tuning input tokenizes without character fallback
TEMPLATE_TEXTS = (
    "Question:",
    "Answer: <mask>.",
    "Answer: <extra_id_0>.",
    "Context:",
    "[S]",
)


def is_generative(objective: ObjectiveKind) -> bool:
    return objective is not ObjectiveKind.SPAN_SELECTION


def mask_marker(objective: ObjectiveKind) -> str:
    return ("<extra_id_0>" if objective is ObjectiveKind.SENTINEL_ANSWER
            else vocab_mod.MASK_TOKEN)


class UnanswerableExampleError(ValueError):
    """The answer is not a substring of the context, so no span target exists."""


def build_input(question: str, context: str, objective: ObjectiveKind) -> str:
    """Model input text for the given objective."""
    if not question or not context:
        raise ValueError("question and context must be non-empty")
    if objective is ObjectiveKind.SPAN_SELECTION:
        return f"Question: {question} [S] Context: {context}"
    if objective is ObjectiveKind.ANSWER_ONLY_GENERATION:
        return f"Question: {question} Context: {context}"
    return f"Question: {question} Answer: {mask_marker(objective)}. Context: {context}"


def build_target(question: str, answer: str, context: str,
                 objective: ObjectiveKind) -> str:
    """Target text for the five generative objectives.

    The terminal period after the answer doubles as the extraction
    delimiter. Span selection has no text target; see `find_gold_span`.
    """
    if not answer:
        raise ValueError("answer must be non-empty")
    if objective is ObjectiveKind.QUESTION_THEN_ANSWER:
        return f"Question: {question} Answer: {answer}."
    if objective is ObjectiveKind.ANSWER_THEN_QUESTION:
        return f"Answer: {answer}. Question: {question}"
    if objective is ObjectiveKind.FULL_INPUT_GENERATION:
        return f"Question: {question} Answer: {answer}. Context: {context}"
    if objective is ObjectiveKind.ANSWER_ONLY_GENERATION:
        return answer
    if objective is ObjectiveKind.SENTINEL_ANSWER:
        return f"<extra_id_0> Answer: {answer}."
    raise ValueError(f"{objective} has no text target; use find_gold_span")


def context_token_start(v: Vocab, question: str, objective: ObjectiveKind) -> int:
    """Index of the first context token inside the encoded input."""
    head = build_input(question, "x", objective)
    prefix = head[: head.rindex("Context:") + len("Context:")]
    return len(vocab_mod.encode(v, prefix))


def find_gold_span(v: Vocab, question: str, context: str, answer: str) -> tuple[int, int]:
    """First token-aligned occurrence of the answer inside the context segment.

    Returns inclusive (start, end) positions into the encoded span-selection
    input. Raises UnanswerableExampleError when the answer tokens do not
    occur in the context.
    """
    input_ids = vocab_mod.encode(v, build_input(question, context, ObjectiveKind.SPAN_SELECTION))
    answer_ids = vocab_mod.encode(v, answer)
    lo = context_token_start(v, question, ObjectiveKind.SPAN_SELECTION)
    if not answer_ids:
        raise UnanswerableExampleError("answer encodes to no tokens")
    width = len(answer_ids)
    for s in range(lo, len(input_ids) - width + 1):
        if input_ids[s : s + width] == answer_ids:
            return s, s + width - 1
    raise UnanswerableExampleError(
        f"answer {answer!r} not found in the context segment"
    )


@dataclass
class PromptPair:
    """One tokenized training pair; either a text target or a gold span."""

    objective: ObjectiveKind
    input_ids: list[int]
    target_ids: list[int] | None
    gold_span: tuple[int, int] | None
    example_id: str

    def __post_init__(self):
        if (self.gold_span is not None) != (self.objective is ObjectiveKind.SPAN_SELECTION):
            raise ValueError("gold_span is exactly the span-selection target")
        if self.objective in MASK_BEARING_OBJECTIVES:
            wanted = (SENTINEL_0_ID if self.objective is ObjectiveKind.SENTINEL_ANSWER
                      else MASK_ID)
            if self.input_ids.count(wanted) != 1:
                raise ValueError("mask-bearing inputs carry exactly one mask id")


def make_prompt_pair(v: Vocab, example, objective: ObjectiveKind) -> PromptPair:
    """Tokenize one QA example under an objective.

    Generative targets get a terminating end-of-sequence id. For span
    selection the first gold answer that occurs in the context is used;
    examples with none raise UnanswerableExampleError.
    """
    question, context = example.question, example.context
    input_ids = vocab_mod.encode(v, build_input(question, context, objective))
    if objective is ObjectiveKind.SPAN_SELECTION:
        last_error: Exception | None = None
        for answer in example.answers:
            try:
                span = find_gold_span(v, question, context, answer)
                return PromptPair(objective, input_ids, None, span, example.id)
            except UnanswerableExampleError as err:
                last_error = err
        raise last_error if last_error is not None else UnanswerableExampleError(example.id)
    target_text = build_target(question, example.answers[0], context, objective)
    target_ids = vocab_mod.encode(v, target_text) + [EOS_ID]
    return PromptPair(objective, input_ids, target_ids, None, example.id)


def compute_seq2seq_loss(model, pair: PromptPair) -> ad.Tensor:
    """Teacher-forced negative log likelihood summed over the target tokens."""
    if pair.objective is ObjectiveKind.SPAN_SELECTION:
        raise ValueError("span selection uses compute_span_loss")
    logits = model_mod.forward_teacher_forced(model, pair.input_ids, pair.target_ids)
    return ad.cross_entropy_logits(logits, pair.target_ids)


def compute_span_loss(model, pair: PromptPair) -> ad.Tensor:
    """Cross-entropy of the gold start plus cross-entropy of the gold end."""
    if pair.objective is not ObjectiveKind.SPAN_SELECTION or pair.gold_span is None:
        raise ValueError("compute_span_loss needs a span-selection pair with a gold span")
    start_logits, end_logits = model_mod.span_head_forward(model, pair.input_ids)
    n = len(pair.input_ids)
    start_loss = ad.cross_entropy_logits(ad.reshape(start_logits, (1, n)), [pair.gold_span[0]])
    end_loss = ad.cross_entropy_logits(ad.reshape(end_logits, (1, n)), [pair.gold_span[1]])
    return ad.add(start_loss, end_loss)
