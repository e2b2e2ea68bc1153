"""QA datasets: synthetic fact-lookup generation, MRQA-style JSONL I/O, and
the few-shot train/dev sampling protocol.

The synthetic task is key-value lookup over facts "e r v ." with distractor
facts in every context; questions ask "what r e ?" and the unique value is
the answer. The companion pretraining corpus draws fact sequences from the
same grammar, with each fact echoed so that a masked value is recoverable
by copying from its twin — the behaviour span-infill pretraining must learn
for aligned fine-tuning to pay off.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass

import numpy as np

from . import vocab as vocab_mod
from .prompts import ObjectiveKind, build_input

logger = logging.getLogger(__name__)

SYNTHETIC_QUESTION_WORDS = ("what", "?")


@dataclass
class QAExample:
    """One question/context/answer-set record; answers are deduplicated."""

    id: str
    question: str
    context: str
    answers: list[str]

    def __post_init__(self):
        if not (self.id and self.question and self.context and self.answers):
            raise ValueError("QAExample fields must be non-empty")
        seen: dict[str, None] = {}
        for a in self.answers:
            if not a:
                raise ValueError("answers must be non-empty strings")
            seen.setdefault(a)
        self.answers = list(seen)


@dataclass
class FewshotSplit:
    """Equal-size train/dev plus the untouched remainder as test."""

    train: list[QAExample]
    dev: list[QAExample]
    test: list[QAExample]
    seed: int
    source_name: str

    def __post_init__(self):
        if len(self.train) != len(self.dev):
            raise ValueError("train and dev must have the same size")
        ids = [ex.id for part in (self.train, self.dev, self.test) for ex in part]
        if len(ids) != len(set(ids)):
            raise ValueError("train/dev/test must be pairwise disjoint by id")


def gen_synthetic(n_examples: int, n_entities: int = 16, n_relations: int = 4,
                  context_facts: int = 6, seed: int = 0, n_values: int | None = None,
                  n_corpus_texts: int = 6000, fact_repeats: int = 1,
                  ) -> tuple[list[str], list[QAExample]]:
    """Seed-deterministic synthetic task plus an unlabeled pretraining corpus.

    One fixed value table maps every (entity, relation) key to a value — the
    closed world shared by all texts. Contexts are `context_facts` facts with
    distinct keys (so each question has a unique answer); corpus texts are
    fact sequences from the same world with no questions attached, which is
    what lets span-corruption pretraining acquire reusable fact knowledge.
    `fact_repeats` > 1 additionally echoes each corpus fact in shuffled order.
    """
    if context_facts < 2:
        raise ValueError("context_facts must be at least 2")
    if n_entities < 1 or n_relations < 1:
        raise ValueError("need at least one entity and one relation")
    if n_entities * n_relations < context_facts:
        raise ValueError(
            f"{n_entities} entities x {n_relations} relations cannot fill "
            f"{context_facts} facts with unique answers"
        )
    n_values = n_entities if n_values is None else n_values
    if n_values < 2:
        raise ValueError("need at least two distinct values")

    rng = np.random.default_rng(seed)
    n_keys = n_entities * n_relations
    value_of = rng.integers(0, n_values, size=n_keys)

    def sample_facts(count: int) -> list[tuple[str, str, str]]:
        keys = rng.choice(n_keys, size=count, replace=False)
        return [(f"e{k // n_relations}", f"r{k % n_relations}", f"v{value_of[k]}")
                for k in keys]

    corpus: list[str] = []
    for _ in range(n_corpus_texts):
        facts = sample_facts(context_facts)
        if fact_repeats > 1:
            facts = facts * fact_repeats
            order = rng.permutation(len(facts))
            facts = [facts[i] for i in order]
        corpus.append(" ".join(f"{e} {r} {v} ." for e, r, v in facts))

    examples: list[QAExample] = []
    for i in range(n_examples):
        facts = sample_facts(context_facts)
        e, r, v = facts[int(rng.integers(0, len(facts)))]
        examples.append(QAExample(
            id=f"syn-{i:05d}",
            question=f"what {r} {e} ?",
            context=" ".join(f"{fe} {fr} {fv} ." for fe, fr, fv in facts),
            answers=[v],
        ))
    return corpus, examples


# -- MRQA-style line-delimited records ----------------------------------------


class MrqaParseError(ValueError):
    def __init__(self, line_no: int, reason: str):
        super().__init__(f"line {line_no}: {reason}")
        self.line_no = line_no


def parse_mrqa_lines(lines) -> tuple[list[QAExample], int]:
    """Parse header + records; returns examples and the skipped-record count."""
    examples: list[QAExample] = []
    skipped = 0
    saw_header = False
    for line_no, line in enumerate(lines, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as err:
            raise MrqaParseError(line_no, f"invalid JSON ({err.msg})") from err
        if not saw_header:
            if "header" not in record:
                raise MrqaParseError(line_no, "first line must be a header record")
            saw_header = True
            continue
        if "context" not in record or "qas" not in record:
            raise MrqaParseError(line_no, "record needs 'context' and 'qas'")
        context = record["context"]
        for qa in record["qas"]:
            try:
                qid, question = qa["qid"], qa["question"]
                answers = [a for a in qa["answers"] if a]
            except (KeyError, TypeError) as err:
                raise MrqaParseError(line_no, f"malformed qa entry: {err}") from err
            if not answers:
                skipped += 1
                continue
            examples.append(QAExample(id=str(qid), question=question,
                                      context=context, answers=answers))
    if not saw_header:
        raise MrqaParseError(0, "empty file")
    return examples, skipped


def load_mrqa(path) -> list[QAExample]:
    with open(path, encoding="utf-8") as fh:
        examples, skipped = parse_mrqa_lines(fh)
    if skipped:
        logger.info("skipped %d answerless questions in %s", skipped, path)
    return examples


def write_mrqa(path, examples, dataset_name: str = "synthetic") -> None:
    """Inverse of load_mrqa; consecutive examples sharing a context share a record."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"header": {"dataset": dataset_name}}) + "\n")
        block: list[QAExample] = []
        for ex in examples:
            if block and ex.context != block[0].context:
                fh.write(_mrqa_record(block) + "\n")
                block = []
            block.append(ex)
        if block:
            fh.write(_mrqa_record(block) + "\n")


def _mrqa_record(block: list[QAExample]) -> str:
    return json.dumps({
        "context": block[0].context,
        "qas": [{"qid": ex.id, "question": ex.question, "answers": ex.answers}
                for ex in block],
    })


# -- few-shot sampling protocol ------------------------------------------------


def sample_fewshot(data: list[QAExample], n: int, seed: int,
                   source_name: str = "dataset") -> FewshotSplit:
    """Uniform draw without replacement: n train, n dev, remainder test."""
    if n < 1:
        raise ValueError("n must be positive")
    if len(data) < 2 * n + 1:
        raise ValueError(f"need at least {2 * n + 1} examples, have {len(data)}")
    if len({ex.id for ex in data}) != len(data):
        raise ValueError("duplicate example ids in data")
    order = np.random.default_rng(seed).permutation(len(data))
    picked = [data[i] for i in order]
    return FewshotSplit(train=picked[:n], dev=picked[n : 2 * n],
                        test=picked[2 * n :], seed=seed, source_name=source_name)


def percentile_99(lengths) -> int:
    """Nearest-rank 99th percentile."""
    values = sorted(int(x) for x in lengths)
    if not values:
        raise ValueError("lengths must be non-empty")
    rank = math.ceil(0.99 * len(values))
    return values[rank - 1]


def compute_max_len(dev: list[QAExample], v: vocab_mod.Vocab,
                    objective: ObjectiveKind = ObjectiveKind.QUESTION_THEN_ANSWER) -> int:
    """99th-percentile tokenized full-input length over the dev set."""
    lengths = [len(vocab_mod.encode(v, build_input(ex.question, ex.context, objective)))
               for ex in dev]
    return percentile_99(lengths)


def truncate_context(example: QAExample, v: vocab_mod.Vocab,
                     objective: ObjectiveKind, max_len: int) -> QAExample | None:
    """Shorten the context so the full input fits max_len tokens.

    Returns None when nothing of the context would survive, or when a
    span-selection answer no longer occurs in the truncated context.
    """
    full = vocab_mod.encode(v, build_input(example.question, example.context, objective))
    if len(full) <= max_len:
        return example
    context_ids = vocab_mod.encode(v, example.context)
    overhead = len(full) - len(context_ids)
    keep = max_len - overhead
    if keep < 1:
        return None
    new_context = vocab_mod.decode(v, context_ids[:keep])
    if not new_context:
        return None
    truncated = QAExample(id=example.id, question=example.question,
                          context=new_context, answers=list(example.answers))
    if objective is ObjectiveKind.SPAN_SELECTION:
        from .prompts import UnanswerableExampleError, find_gold_span

        for answer in truncated.answers:
            try:
                find_gold_span(v, truncated.question, truncated.context, answer)
                return truncated
            except UnanswerableExampleError:
                continue
        return None
    return truncated
