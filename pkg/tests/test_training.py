import json
import math

import numpy as np
import pytest

from qalign import autodiff as ad
from qalign import model as M
from qalign import prompts as P
from qalign import training as T
from qalign import vocab as V
from qalign.corruption import CorruptionStyle, corrupt
from qalign.data import QAExample, gen_synthetic, sample_fewshot, SYNTHETIC_QUESTION_WORDS
from qalign.prompts import ObjectiveKind

TINY_MODEL = M.ModelConfig(n_encoder_layers=1, n_decoder_layers=1, d_model=16,
                           n_heads=2, d_ff=32, max_positions=64)


def tiny_corpus(seed=0):
    corpus, qa = gen_synthetic(n_examples=60, n_entities=8, n_relations=3,
                               context_facts=3, seed=seed, n_corpus_texts=40)
    return corpus, qa


class TestSeedSplitter:
    def test_deterministic(self):
        assert T.derive_seed(1, "a", 2) == T.derive_seed(1, "a", 2)

    def test_labels_matter(self):
        seen = {T.derive_seed(0, label) for label in ("init", "corruption", "order")}
        assert len(seen) == 3

    def test_nonnegative_63_bit(self):
        s = T.derive_seed("x")
        assert 0 <= s < 2**63


class TestBudget:
    def test_max_of_epochs_and_steps(self):
        cfg = T.TrainConfig(max_epochs=35, max_steps=1000, batch_size=4)
        assert T.steps_budget(16, cfg) == 1000  # 35 * ceil(16/4) = 140 < 1000
        cfg = T.TrainConfig(max_epochs=35, max_steps=100, batch_size=4)
        assert T.steps_budget(200, cfg) == 35 * 50

    def test_presets(self):
        paper = T.paper_mirror_config()
        assert (paper.learning_rate, paper.batch_size) == (2e-5, 4)
        assert (paper.max_epochs, paper.max_steps) == (35, 1000)
        desk = T.desk_config()
        assert desk.max_steps == 300 and desk.batch_size == 16

    def test_budget_honored_exactly(self, tmp_path):
        corpus, qa = tiny_corpus()
        vocab = T.build_task_vocab(corpus, SYNTHETIC_QUESTION_WORDS)
        split = sample_fewshot(qa, 4, seed=1, source_name="tiny")
        cfg = T.desk_config(model=TINY_MODEL, max_steps=6, eval_every=2,
                            batch_size=4, seed=0)
        result = T.run_finetune(split, cfg, vocab=vocab)
        assert [h["step"] for h in result.history] == [2, 4, 6]


class TestBatchOrder:
    def test_epoch_batches_partition_each_epoch(self):
        order = T._BatchOrder(5, seed=3)
        epoch = order.take_epoch_batch(3) + order.take_epoch_batch(3)
        assert sorted(epoch) == list(range(5))

    def test_cycling_stream(self):
        order = T._BatchOrder(3, seed=3)
        taken = order.take(7)
        assert sorted(taken[:3]) == [0, 1, 2]
        assert sorted(taken[3:6]) == [0, 1, 2]


class TestPretrain:
    def test_checkpoint_round_trip_and_loss_improves(self, tmp_path):
        corpus, _ = tiny_corpus()
        cfg = T.desk_config(model=TINY_MODEL, max_steps=60, batch_size=8,
                            learning_rate=1e-3, seed=5)
        ckpt = T.run_pretrain(corpus, CorruptionStyle.T5_SPAN_INFILL, cfg,
                              tmp_path, extra_vocab_texts=SYNTHETIC_QUESTION_WORDS)
        assert ckpt.exists()
        model, tokens = M.load_checkpoint(ckpt)
        vocab = V.Vocab(tokens)

        heldout_rng = np.random.default_rng(9)
        heldout = [V.encode(vocab, t) for t in tiny_corpus(seed=77)[0][:20]]

        def heldout_loss(m):
            total = tokens_n = 0
            for ids in heldout:
                sample = corrupt(CorruptionStyle.T5_SPAN_INFILL, ids,
                                 rng=np.random.default_rng(heldout_rng.integers(2**31)))
                logits = M.forward_teacher_forced(m, sample.corrupted_ids,
                                                  sample.target_ids)
                total += ad.cross_entropy_logits(logits, sample.target_ids).item()
                tokens_n += len(sample.target_ids)
            return total / tokens_n

        fresh = M.Seq2SeqModel(model.config, seed=T.derive_seed(5, "init"))
        assert heldout_loss(model) < heldout_loss(fresh)

        log = [json.loads(l) for l in (tmp_path / "pretrain_metrics.jsonl").open()]
        assert log[0]["step"] == 1 and log[-1]["step"] == 60

    def test_same_seed_bit_identical_checkpoints(self, tmp_path):
        corpus, _ = tiny_corpus()
        cfg = T.desk_config(model=TINY_MODEL, max_steps=8, batch_size=4, seed=3)
        a = T.run_pretrain(corpus, CorruptionStyle.BART_DENOISE, cfg, tmp_path / "a",
                           extra_vocab_texts=SYNTHETIC_QUESTION_WORDS)
        b = T.run_pretrain(corpus, CorruptionStyle.BART_DENOISE, cfg, tmp_path / "b",
                           extra_vocab_texts=SYNTHETIC_QUESTION_WORDS)
        ma, ta = M.load_checkpoint(a)
        mb, tb = M.load_checkpoint(b)
        assert ta == tb
        assert all(np.array_equal(ma.params[n].data, mb.params[n].data)
                   for n in ma.params)

    def test_divergence_dumps_batch_and_raises(self, tmp_path):
        corpus, _ = tiny_corpus()
        cfg = T.desk_config(model=TINY_MODEL, max_steps=30, batch_size=4,
                            learning_rate=1e18, seed=0)
        with pytest.raises(T.TrainingDivergedError, match="dumped"):
            T.run_pretrain(corpus, CorruptionStyle.T5_SPAN_INFILL, cfg,
                           tmp_path, extra_vocab_texts=SYNTHETIC_QUESTION_WORDS)
        assert list(tmp_path.glob("diverged_step*.json"))

    def test_empty_corpus_rejected(self, tmp_path):
        cfg = T.desk_config(model=TINY_MODEL, max_steps=2)
        with pytest.raises(ValueError):
            T.run_pretrain([], CorruptionStyle.BART_DENOISE, cfg, tmp_path)


@pytest.fixture(scope="module")
def setup():
    corpus, qa = tiny_corpus()
    vocab = T.build_task_vocab(corpus, SYNTHETIC_QUESTION_WORDS)
    split = sample_fewshot(qa, 6, seed=2, source_name="tiny")
    return vocab, split


class TestFinetune:
    def test_best_step_is_earliest_argmax(self, setup):
        vocab, split = setup
        cfg = T.desk_config(model=TINY_MODEL, max_steps=8, eval_every=2,
                            batch_size=6, learning_rate=1e-3, seed=1)
        result = T.run_finetune(split, cfg, vocab=vocab)
        f1s = [h["dev_f1"] for h in result.history]
        best = max(f1s)
        expected_step = result.history[f1s.index(best)]["step"]
        assert result.best_step == expected_step
        assert result.best_dev_f1 == best

    def test_deterministic_history(self, setup):
        vocab, split = setup
        cfg = T.desk_config(model=TINY_MODEL, max_steps=6, eval_every=3,
                            batch_size=6, seed=4)
        a = T.run_finetune(split, cfg, vocab=vocab)
        b = T.run_finetune(split, cfg, vocab=vocab)
        assert a.history == b.history

    def test_span_head_required_for_span_selection(self, setup):
        vocab, split = setup
        headless = M.ModelConfig(n_encoder_layers=1, n_decoder_layers=1, d_model=16,
                                 n_heads=2, d_ff=32, max_positions=64,
                                 span_head=False)
        cfg = T.desk_config(model=headless, objective=ObjectiveKind.SPAN_SELECTION,
                            max_steps=2, eval_every=2)
        with pytest.raises(ValueError, match="span head"):
            T.run_finetune(split, cfg, vocab=vocab)

    def test_checkpoint_config_mismatch_rejected(self, setup, tmp_path):
        vocab, split = setup
        corpus, _ = tiny_corpus()
        pre_cfg = T.desk_config(model=TINY_MODEL, max_steps=2, batch_size=4, seed=0)
        ckpt = T.run_pretrain(corpus, CorruptionStyle.T5_SPAN_INFILL, pre_cfg,
                              tmp_path, extra_vocab_texts=SYNTHETIC_QUESTION_WORDS)
        other = M.ModelConfig(n_encoder_layers=2, n_decoder_layers=1, d_model=16,
                              n_heads=2, d_ff=32, max_positions=64)
        cfg = T.desk_config(model=other, max_steps=2, eval_every=2,
                            pretrained_checkpoint=str(ckpt))
        with pytest.raises(ValueError, match="does not match"):
            T.run_finetune(split, cfg, vocab=vocab)

    def test_finetune_from_checkpoint_runs(self, setup, tmp_path):
        _, split = setup
        corpus, _ = tiny_corpus()
        pre_cfg = T.desk_config(model=TINY_MODEL, max_steps=4, batch_size=4, seed=0)
        ckpt = T.run_pretrain(corpus, CorruptionStyle.T5_SPAN_INFILL, pre_cfg,
                              tmp_path, extra_vocab_texts=SYNTHETIC_QUESTION_WORDS)
        cfg = T.desk_config(model=TINY_MODEL, max_steps=4, eval_every=2,
                            pretrained_checkpoint=str(ckpt), seed=1)
        result = T.run_finetune(split, cfg, out_dir=tmp_path / "ft")
        assert result.checkpoint_path is not None
        reloaded, tokens = M.load_checkpoint(result.checkpoint_path)
        assert tokens == result.vocab.id_to_token

    def test_span_selection_trains(self, setup):
        vocab, split = setup
        cfg = T.desk_config(model=TINY_MODEL, objective=ObjectiveKind.SPAN_SELECTION,
                            max_steps=4, eval_every=4, batch_size=6, seed=3)
        result = T.run_finetune(split, cfg, vocab=vocab)
        assert result.history[-1]["step"] == 4
        assert 0 <= result.best_dev_f1 <= 100


class TestEvaluate:
    def test_scores_and_predictions(self):
        corpus, qa = tiny_corpus()
        vocab = T.build_task_vocab(corpus, SYNTHETIC_QUESTION_WORDS)
        model = M.Seq2SeqModel(
            M.ModelConfig(n_encoder_layers=1, n_decoder_layers=1, d_model=16,
                          n_heads=2, d_ff=32, max_positions=64,
                          vocab_size=len(vocab)), seed=0)
        result, preds = T.evaluate_model(model, vocab, qa[:5],
                                         ObjectiveKind.SPAN_SELECTION)
        assert result.n_examples == 5 and len(preds) == 5
        assert 0 <= result.exact_match <= result.f1 <= 100
