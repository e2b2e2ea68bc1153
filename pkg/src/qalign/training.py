"""Training loops: corruption pretraining, few-shot fine-tuning with dev-based
checkpoint selection, and model evaluation.

The step budget honors the larger of the epoch-derived and fixed step
budgets. Reported losses are per-token means (per-pair means for span
selection); the per-pair objective itself stays a sum over target tokens.
One master seed fans out to independent streams (init, corruption, batch
order, sampling) through `derive_seed`.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from contextlib import contextmanager
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import corruption as corr
from . import data as data_mod
from . import decoding as dec
from . import metrics as metrics_mod
from . import model as model_mod
from . import prompts as prompts_mod
from . import vocab as vocab_mod
from .corruption import CorruptionStyle
from .data import FewshotSplit, QAExample
from .model import ModelConfig, Seq2SeqModel
from .prompts import ObjectiveKind, PromptPair
from .vocab import BOS_ID

logger = logging.getLogger(__name__)


class TrainingDivergedError(RuntimeError):
    """Loss went non-finite; the offending batch was dumped for inspection."""


def derive_seed(*parts) -> int:
    """Stable 63-bit seed from labeled parts; the one seed splitter."""
    blob = "\x1f".join(str(p) for p in parts).encode("utf-8")
    return int.from_bytes(hashlib.sha256(blob).digest()[:8], "little") >> 1


@dataclass
class TrainConfig:
    objective: ObjectiveKind = ObjectiveKind.QUESTION_THEN_ANSWER
    learning_rate: float = 2e-5
    batch_size: int = 4
    max_epochs: int = 35
    max_steps: int = 1000
    seed: int = 0
    eval_every: int = 50
    model: ModelConfig = field(default_factory=ModelConfig)
    pretrained_checkpoint: str | None = None

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")


def paper_mirror_config(**overrides) -> TrainConfig:
    """The source hyperparameters: lr 2e-5, batch 4, 35 epochs or 1000 steps."""
    base = dict(learning_rate=2e-5, batch_size=4, max_epochs=35, max_steps=1000,
                eval_every=50)
    base.update(overrides)
    return TrainConfig(**base)


def desk_config(**overrides) -> TrainConfig:
    """From-scratch tiny-model preset: lr 3e-4, batch 16, 300 steps, eval every 20."""
    base = dict(learning_rate=3e-4, batch_size=16, max_epochs=0, max_steps=300,
                eval_every=20)
    base.update(overrides)
    return TrainConfig(**base)


def steps_budget(n_items: int, config: TrainConfig) -> int:
    """max(epoch-derived steps, fixed step budget), honored exactly."""
    per_epoch = math.ceil(n_items / config.batch_size)
    return max(config.max_epochs * per_epoch, config.max_steps)


@contextmanager
def inference_mode(model: Seq2SeqModel):
    """Temporarily drop gradient tracking for cheap forward passes."""
    params = model.parameters()
    flags = [p.requires_grad for p in params]
    for p in params:
        p.requires_grad = False
    try:
        yield
    finally:
        for p, flag in zip(params, flags):
            p.requires_grad = flag


def build_task_vocab(texts, extra_texts=(), max_size: int = 4096) -> vocab_mod.Vocab:
    """Vocabulary over the corpus plus the prompt-template literals."""
    pool = list(texts) + list(extra_texts) + list(prompts_mod.TEMPLATE_TEXTS)
    return vocab_mod.build_vocab(pool, max_size=max_size)


_MASK_NEG = np.float32(-1e9)


def packed_teacher_forced_loss(model: Seq2SeqModel, seq_pairs) -> ad.Tensor:
    """Per-token mean NLL over (input_ids, target_ids) pairs, packed.

    All pairs run as one forward pass: sequences are concatenated, attention
    is confined to each segment by block additive masks, and positions
    restart per segment. Equivalent in expectation to averaging per-pair
    losses, at a fraction of the graph-building overhead.
    """
    cfg = model.config
    enc_ids: list[int] = []
    enc_positions: list[int] = []
    enc_seg: list[int] = []
    dec_ids: list[int] = []
    dec_positions: list[int] = []
    dec_seg: list[int] = []
    targets: list[int] = []

    for seg, (input_ids, target_ids) in enumerate(seq_pairs):
        if not input_ids or not target_ids:
            raise ValueError("packed pairs need non-empty input and target")
        if max(len(input_ids), len(target_ids)) > cfg.max_positions:
            raise ValueError(
                f"segment of {max(len(input_ids), len(target_ids))} tokens "
                f"exceeds max_positions {cfg.max_positions}")
        enc_ids.extend(input_ids)
        enc_positions.extend(range(len(input_ids)))
        enc_seg.extend([seg] * len(input_ids))
        decoder_input = [BOS_ID] + list(target_ids[:-1])
        dec_ids.extend(decoder_input)
        dec_positions.extend(range(len(decoder_input)))
        dec_seg.extend([seg] * len(decoder_input))
        targets.extend(target_ids)

    e_seg = np.asarray(enc_seg)
    d_seg = np.asarray(dec_seg)
    d_pos = np.asarray(dec_positions)
    enc_mask = np.where(e_seg[:, None] == e_seg[None, :], np.float32(0), _MASK_NEG)
    dec_mask = np.where((d_seg[:, None] == d_seg[None, :])
                        & (d_pos[None, :] <= d_pos[:, None]),
                        np.float32(0), _MASK_NEG)
    cross_mask = np.where(d_seg[:, None] == e_seg[None, :], np.float32(0), _MASK_NEG)

    enc_out = model_mod.encode(model, enc_ids, ad.tensor(enc_mask),
                               positions=enc_positions)
    states = model_mod.decoder_states(model, enc_out, dec_ids,
                                      self_mask=ad.tensor(dec_mask),
                                      cross_mask=ad.tensor(cross_mask),
                                      positions=dec_positions)
    logits = model_mod.output_logits(model, states)
    loss = ad.cross_entropy_logits(logits, targets)
    return ad.scale(loss, 1.0 / len(targets))


PACK_SIZE = 4  # larger packs waste quadratic attention on the block mask


def batched_teacher_forced_loss(model: Seq2SeqModel, seq_pairs,
                                pack_size: int = PACK_SIZE) -> ad.Tensor:
    """Per-token mean NLL over all pairs, packed in chunks of `pack_size`."""
    seq_pairs = list(seq_pairs)
    total_tokens = sum(len(target) for _, target in seq_pairs)
    loss = None
    for i in range(0, len(seq_pairs), pack_size):
        chunk = seq_pairs[i : i + pack_size]
        chunk_tokens = sum(len(target) for _, target in chunk)
        part = ad.scale(packed_teacher_forced_loss(model, chunk),
                        chunk_tokens / total_tokens)
        loss = part if loss is None else ad.add(loss, part)
    return loss


class _BatchOrder:
    """Epoch-shuffled index stream."""

    def __init__(self, n: int, seed: int):
        self._n = n
        self._rng = np.random.default_rng(seed)
        self._queue: list[int] = []

    def take(self, count: int) -> list[int]:
        out: list[int] = []
        while len(out) < count:
            if not self._queue:
                self._queue = list(self._rng.permutation(self._n))
            out.append(int(self._queue.pop(0)))
        return out

    def take_epoch_batch(self, count: int) -> list[int]:
        """Batch that never crosses an epoch boundary (last one may be short)."""
        if not self._queue:
            self._queue = list(self._rng.permutation(self._n))
        grab = min(count, len(self._queue))
        out = [int(i) for i in self._queue[:grab]]
        del self._queue[:grab]
        return out


def _dump_diverged_batch(out_dir: Path | None, step: int, payload) -> str:
    if out_dir is None:
        return "no output directory; batch not dumped"
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"diverged_step{step}.json"
    path.write_text(json.dumps(payload, indent=2))
    return str(path)


class MetricsLog:
    """Append-only JSONL: one structured record per logged event."""

    def __init__(self, path: Path | None):
        self.path = path
        self.records: list[dict] = []
        if path is not None:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text("")

    def log(self, **record) -> None:
        self.records.append(record)
        if self.path is not None:
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(record, sort_keys=True) + "\n")


# -- pretraining ---------------------------------------------------------------


def run_pretrain(corpus_texts, style: CorruptionStyle, config: TrainConfig,
                 out_dir, vocab: vocab_mod.Vocab | None = None,
                 extra_vocab_texts=(), corruption_rate: float = 0.15,
                 mean_span_len: float = 3.0, log_every: int = 25) -> Path:
    """Train a fresh model on corruption samples; returns the checkpoint path."""
    corpus_texts = [t for t in corpus_texts if t.strip()]
    if not corpus_texts:
        raise ValueError("pretraining corpus must be non-empty")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if vocab is None:
        vocab = build_task_vocab(corpus_texts, extra_vocab_texts)

    model_cfg = replace(config.model, vocab_size=len(vocab))
    model = Seq2SeqModel(model_cfg, seed=derive_seed(config.seed, "init"))
    model.training = True
    params = model.parameters()
    adam = ad.init_adam(params, learning_rate=config.learning_rate)

    token_cache = [vocab_mod.encode(vocab, t) for t in corpus_texts]
    token_cache = [ids for ids in token_cache if ids]
    corrupt_rng = np.random.default_rng(derive_seed(config.seed, "corruption"))
    order = _BatchOrder(len(token_cache), derive_seed(config.seed, "batch-order"))
    log = MetricsLog(out_dir / "pretrain_metrics.jsonl")

    budget = steps_budget(len(token_cache), config)
    for step in range(1, budget + 1):
        batch = order.take(config.batch_size)
        batch_samples = [corr.corrupt(style, token_cache[idx], corruption_rate,
                                      mean_span_len, corrupt_rng)
                         for idx in batch]
        loss = batched_teacher_forced_loss(
            model, [(s.corrupted_ids, s.target_ids) for s in batch_samples])
        if not np.isfinite(loss.data):
            where = _dump_diverged_batch(out_dir, step, [
                {"corrupted": s.corrupted_ids, "target": s.target_ids}
                for s in batch_samples])
            raise TrainingDivergedError(
                f"non-finite pretraining loss at step {step}; batch dumped to {where}")
        ad.backward(loss)
        ad.adam_step(params, adam)
        if step == 1 or step % log_every == 0 or step == budget:
            log.log(step=step, loss=float(loss.data))

    model.training = False
    ckpt = out_dir / f"pretrain-{style.value}.ckpt"
    model_mod.save_checkpoint(model, ckpt, vocab_tokens=vocab.id_to_token)
    vocab_mod.save_vocab(vocab, out_dir / "vocab.txt")
    return ckpt


# -- evaluation ----------------------------------------------------------------


def predict_answer(model: Seq2SeqModel, v: vocab_mod.Vocab, example: QAExample,
                   objective: ObjectiveKind, max_input_len: int | None = None) -> str:
    """One prediction string; empty on failure (scored as a miss)."""
    bound = model.config.max_positions
    if max_input_len is not None:
        bound = min(bound, max_input_len)
    usable = data_mod.truncate_context(example, v, objective, bound)
    if usable is None:
        return ""
    input_text = prompts_mod.build_input(usable.question, usable.context, objective)
    input_ids = vocab_mod.encode(v, input_text)
    if objective is ObjectiveKind.SPAN_SELECTION:
        start_logits, end_logits = model_mod.span_head_forward(model, input_ids)
        lo = prompts_mod.context_token_start(v, usable.question, objective)
        s, e = model_mod.predict_span(start_logits.data, end_logits.data,
                                      lo, len(input_ids) - 1)
        return vocab_mod.decode(v, input_ids[s : e + 1])
    result = dec.greedy_decode(model, v, input_ids, dec.default_max_steps(objective))
    return dec.answer_extract(result.text, objective)


def evaluate_model(model: Seq2SeqModel, v: vocab_mod.Vocab, examples,
                   objective: ObjectiveKind, max_input_len: int | None = None,
                   ) -> tuple[metrics_mod.EvalResult, list[str]]:
    examples = list(examples)
    if not examples:
        raise ValueError("cannot evaluate on zero examples")
    with inference_mode(model):
        preds = [predict_answer(model, v, ex, objective, max_input_len)
                 for ex in examples]
    result = metrics_mod.evaluate_predictions(preds, [ex.answers for ex in examples])
    return result, preds


# -- fine-tuning -----------------------------------------------------------------


@dataclass
class FinetuneResult:
    model: Seq2SeqModel
    vocab: vocab_mod.Vocab
    history: list[dict]          # one record per dev evaluation
    best_step: int
    best_dev_f1: float
    max_input_len: int
    n_skipped: int               # unusable training examples (span selection)
    checkpoint_path: str | None = None


def _batch_loss(model: Seq2SeqModel, pairs: list[PromptPair],
                objective: ObjectiveKind) -> ad.Tensor:
    if objective is ObjectiveKind.SPAN_SELECTION:
        losses = [prompts_mod.compute_span_loss(model, p) for p in pairs]
        return ad.mean_scalars(losses)
    return batched_teacher_forced_loss(
        model, [(p.input_ids, p.target_ids) for p in pairs])


def prepare_pairs(split_part, v: vocab_mod.Vocab, objective: ObjectiveKind,
                  max_input_len: int) -> tuple[list[PromptPair], int]:
    """Truncate, tokenize, and drop unusable examples (with a count)."""
    pairs: list[PromptPair] = []
    skipped = 0
    for ex in split_part:
        usable = data_mod.truncate_context(ex, v, objective, max_input_len)
        if usable is None:
            skipped += 1
            continue
        try:
            pairs.append(prompts_mod.make_prompt_pair(v, usable, objective))
        except prompts_mod.UnanswerableExampleError:
            skipped += 1
    if skipped:
        logger.info("skipped %d unusable examples for %s", skipped, objective.value)
    return pairs, skipped


def run_finetune(split: FewshotSplit, config: TrainConfig,
                 out_dir=None, vocab: vocab_mod.Vocab | None = None) -> FinetuneResult:
    """Fine-tune under the configured objective; keep the best-dev-F1 snapshot.

    Dev F1 is evaluated every `eval_every` steps and at the final step; ties
    resolve to the earliest step.
    """
    out_path = Path(out_dir) if out_dir is not None else None
    if config.pretrained_checkpoint is not None:
        model, tokens = model_mod.load_checkpoint(config.pretrained_checkpoint)
        if tokens is None and vocab is None:
            raise ValueError("checkpoint has no vocabulary and none was given")
        if tokens is not None:
            vocab = vocab_mod.Vocab(tokens)
        expected = replace(config.model, vocab_size=len(vocab))
        if model.config != expected:
            raise ValueError(
                f"checkpoint config {model.config} does not match {expected}")
    else:
        if vocab is None:
            texts = [f"{ex.question} {ex.context}" for ex in split.train + split.dev]
            vocab = build_task_vocab(texts)
        model = Seq2SeqModel(replace(config.model, vocab_size=len(vocab)),
                             seed=derive_seed(config.seed, "init"))
    if config.objective is ObjectiveKind.SPAN_SELECTION and not model.config.span_head:
        raise ValueError("span-selection fine-tuning needs a span head")

    max_input_len = min(data_mod.compute_max_len(split.dev, vocab, config.objective),
                        model.config.max_positions)
    pairs, skipped = prepare_pairs(split.train, vocab, config.objective, max_input_len)
    if not pairs:
        raise ValueError("no usable training examples after preparation")

    params = model.parameters()
    adam = ad.init_adam(params, learning_rate=config.learning_rate)
    order = _BatchOrder(len(pairs), derive_seed(config.seed, "batch-order"))
    log = MetricsLog(out_path / "finetune_metrics.jsonl" if out_path else None)

    budget = steps_budget(len(pairs), config)
    history: list[dict] = []
    best_f1, best_step = -1.0, 0
    best_snapshot = model.snapshot()
    model.training = True
    for step in range(1, budget + 1):
        batch = [pairs[i] for i in order.take_epoch_batch(config.batch_size)]
        loss = _batch_loss(model, batch, config.objective)
        if not np.isfinite(loss.data):
            where = _dump_diverged_batch(out_path, step, [
                {"input": p.input_ids, "target": p.target_ids, "span": p.gold_span}
                for p in batch])
            raise TrainingDivergedError(
                f"non-finite fine-tuning loss at step {step}; batch dumped to {where}")
        ad.backward(loss)
        ad.adam_step(params, adam)
        if step % config.eval_every == 0 or step == budget:
            model.training = False
            dev_result, _ = evaluate_model(model, vocab, split.dev, config.objective,
                                           max_input_len)
            model.training = True
            record = {"step": step, "loss": float(loss.data),
                      "dev_f1": dev_result.f1, "dev_em": dev_result.exact_match}
            history.append(record)
            log.log(**record)
            if dev_result.f1 > best_f1:
                best_f1, best_step = dev_result.f1, step
                best_snapshot = model.snapshot()

    model.training = False
    model.restore(best_snapshot)
    ckpt_path = None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)
        ckpt = out_path / f"finetune-{config.objective.value}-best.ckpt"
        model_mod.save_checkpoint(model, ckpt, vocab_tokens=vocab.id_to_token)
        ckpt_path = str(ckpt)
    return FinetuneResult(model=model, vocab=vocab, history=history,
                          best_step=best_step, best_dev_f1=best_f1,
                          max_input_len=max_input_len, n_skipped=skipped,
                          checkpoint_path=ckpt_path)
