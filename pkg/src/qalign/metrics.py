"""Answer scoring: normalization, exact match, token F1, and seed aggregation.

Normalization follows the SQuAD v1.1 convention: lowercase, strip
punctuation, drop the articles a/an/the, collapse whitespace. Corpus scores
are percentages; per-seed scores aggregate to mean and population standard
deviation.
"""

from __future__ import annotations

import re
import string
from collections import Counter
from dataclasses import dataclass

import numpy as np

_ARTICLE_RE = re.compile(r"\b(a|an|the)\b")
_PUNCT_TABLE = str.maketrans("", "", string.punctuation)


def normalize_text(s: str) -> str:
    s = s.lower()
    s = s.translate(_PUNCT_TABLE)
    s = _ARTICLE_RE.sub(" ", s)
    return " ".join(s.split())


def token_f1(prediction: str, golds) -> float:
    """Best harmonic mean of token precision/recall over the gold answers.

    Multiset token overlap on normalized text; two empty strings score 1,
    exactly one empty scores 0.
    """
    golds = list(golds)
    if not golds:
        raise ValueError("golds must be non-empty")
    pred_tokens = normalize_text(prediction).split()
    best = 0.0
    for gold in golds:
        gold_tokens = normalize_text(gold).split()
        if not pred_tokens or not gold_tokens:
            score = float(pred_tokens == gold_tokens)
        else:
            overlap = sum((Counter(pred_tokens) & Counter(gold_tokens)).values())
            if overlap == 0:
                score = 0.0
            else:
                precision = overlap / len(pred_tokens)
                recall = overlap / len(gold_tokens)
                score = 2 * precision * recall / (precision + recall)
        best = max(best, score)
    return best


def exact_match(prediction: str, golds) -> int:
    golds = list(golds)
    if not golds:
        raise ValueError("golds must be non-empty")
    normalized = normalize_text(prediction)
    return int(any(normalized == normalize_text(g) for g in golds))


@dataclass
class EvalResult:
    """Corpus-level scores in [0, 100]; per-example EM=1 implies F1=1."""

    exact_match: float
    f1: float
    n_examples: int


def evaluate_predictions(predictions, gold_sets) -> EvalResult:
    predictions = list(predictions)
    gold_sets = list(gold_sets)
    if len(predictions) != len(gold_sets) or not predictions:
        raise ValueError("need one non-empty gold set per prediction")
    em = sum(exact_match(p, g) for p, g in zip(predictions, gold_sets))
    f1 = sum(token_f1(p, g) for p, g in zip(predictions, gold_sets))
    n = len(predictions)
    return EvalResult(100.0 * em / n, 100.0 * f1 / n, n)


@dataclass
class AggregateCell:
    """Mean and population standard deviation over per-seed scores."""

    mean: float
    std: float
    n_runs: int


def aggregate(per_run_scores) -> AggregateCell:
    scores = [float(s) for s in per_run_scores]
    if not scores:
        raise ValueError("per_run_scores must be non-empty")
    return AggregateCell(float(np.mean(scores)), float(np.std(scores)), len(scores))
