"""Miniature encoder-decoder transformer with an optional span-selection head.

Single-sequence forward passes on [n, d_model] matrices: pre-norm residual
blocks, learned absolute positions for both stacks, multi-head attention via
column slicing, and an output projection tied to the token embedding. The
span head scores start/end positions over encoder states for the extractive
baseline.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, asdict

import numpy as np

from . import autodiff as ad
from .vocab import BOS_ID


@dataclass
class ModelConfig:
    n_encoder_layers: int = 2
    n_decoder_layers: int = 2
    d_model: int = 64
    n_heads: int = 4
    d_ff: int = 256
    vocab_size: int = 512
    max_positions: int = 256
    dropout_rate: float = 0.0
    span_head: bool = True

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ValueError(
                f"d_model {self.d_model} not divisible by n_heads {self.n_heads}"
            )
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")


def desk_model_config(vocab_size: int, **overrides) -> ModelConfig:
    """Default desk-scale architecture: trains in seconds, keeps every mechanism."""
    return ModelConfig(vocab_size=vocab_size, **overrides)


class Seq2SeqModel:
    """Parameter container plus forward passes; one writer, many readers."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        self.seed = seed
        self.training = False
        self.params: dict[str, ad.Tensor] = {}
        self._dropout_rng = np.random.default_rng((seed, 0xD0))
        self._init_params(np.random.default_rng(seed))

    def _add(self, name: str, data: np.ndarray) -> None:
        self.params[name] = ad.tensor(data, requires_grad=True)

    def _init_params(self, rng: np.random.Generator) -> None:
        c = self.config
        d, ff = c.d_model, c.d_ff
        # width-scaled init: at desk widths a fixed 0.02 leaves attention
        # logits too flat to train; embeddings stay small so an untrained
        # model still predicts near-uniformly
        matrix_std = 1.0 / math.sqrt(d)
        emb_std = 0.02

        def w(*shape):
            return rng.normal(0.0, matrix_std, size=shape)

        self._add("tok_emb", rng.normal(0.0, emb_std, size=(c.vocab_size, d)))
        self._add("enc_pos", rng.normal(0.0, emb_std, size=(c.max_positions, d)))
        self._add("dec_pos", rng.normal(0.0, emb_std, size=(c.max_positions, d)))

        def attn_block(prefix: str) -> None:
            for mat in ("wq", "wk", "wv", "wo"):
                self._add(f"{prefix}.{mat}", w(d, d))
            for vec in ("bq", "bk", "bv", "bo"):
                self._add(f"{prefix}.{vec}", np.zeros(d))

        def ln_block(prefix: str) -> None:
            self._add(f"{prefix}.gain", np.ones(d))
            self._add(f"{prefix}.bias", np.zeros(d))

        def ff_block(prefix: str) -> None:
            self._add(f"{prefix}.w1", w(d, ff))
            self._add(f"{prefix}.b1", np.zeros(ff))
            self._add(f"{prefix}.w2", w(ff, d))
            self._add(f"{prefix}.b2", np.zeros(d))

        for i in range(c.n_encoder_layers):
            ln_block(f"enc{i}.ln1")
            attn_block(f"enc{i}.attn")
            ln_block(f"enc{i}.ln2")
            ff_block(f"enc{i}.ff")
        ln_block("enc_final_ln")

        for i in range(c.n_decoder_layers):
            ln_block(f"dec{i}.ln1")
            attn_block(f"dec{i}.self_attn")
            ln_block(f"dec{i}.ln2")
            attn_block(f"dec{i}.cross_attn")
            ln_block(f"dec{i}.ln3")
            ff_block(f"dec{i}.ff")
        ln_block("dec_final_ln")

        if c.span_head:
            self._add("span_start", w(d))
            self._add("span_end", w(d))

    # -- bookkeeping ---------------------------------------------------------

    def parameters(self) -> list[ad.Tensor]:
        return list(self.params.values())

    def num_parameters(self) -> int:
        return sum(p.size for p in self.params.values())

    def snapshot(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.params.items()}

    def restore(self, snap: dict[str, np.ndarray]) -> None:
        for name, arr in snap.items():
            self.params[name].data = arr.copy()

    # -- internals -----------------------------------------------------------

    def _dropout(self, t: ad.Tensor) -> ad.Tensor:
        rate = self.config.dropout_rate
        if not self.training or rate == 0.0:
            return t
        keep = (self._dropout_rng.random(t.shape) >= rate) / (1.0 - rate)
        return ad.mul(t, ad.tensor(keep))

    def _ln(self, x: ad.Tensor, prefix: str) -> ad.Tensor:
        return ad.layer_norm(x, self.params[f"{prefix}.gain"], self.params[f"{prefix}.bias"])

    def _attention(self, h_q, h_kv, prefix: str, mask: ad.Tensor | None = None):
        p = self.params
        n_heads = self.config.n_heads
        dk = self.config.d_model // n_heads
        q_all = ad.add(ad.matmul(h_q, p[f"{prefix}.wq"]), p[f"{prefix}.bq"])
        k_all = ad.add(ad.matmul(h_kv, p[f"{prefix}.wk"]), p[f"{prefix}.bk"])
        v_all = ad.add(ad.matmul(h_kv, p[f"{prefix}.wv"]), p[f"{prefix}.bv"])
        heads = []
        for h in range(n_heads):
            lo, hi = h * dk, (h + 1) * dk
            q = ad.slice_columns(q_all, lo, hi)
            k = ad.slice_columns(k_all, lo, hi)
            v = ad.slice_columns(v_all, lo, hi)
            scores = ad.scale(ad.matmul(q, ad.transpose(k)), 1.0 / math.sqrt(dk))
            if mask is not None:
                scores = ad.add(scores, mask)
            heads.append(ad.matmul(ad.softmax_rows(scores), v))
        merged = ad.concat_columns(heads)
        return ad.add(ad.matmul(merged, p[f"{prefix}.wo"]), p[f"{prefix}.bo"])

    def _ff(self, x: ad.Tensor, prefix: str) -> ad.Tensor:
        p = self.params
        hidden = ad.relu(ad.add(ad.matmul(x, p[f"{prefix}.w1"]), p[f"{prefix}.b1"]))
        return ad.add(ad.matmul(hidden, p[f"{prefix}.w2"]), p[f"{prefix}.b2"])

    def _embed(self, ids, pos_table: str, positions=None) -> ad.Tensor:
        if positions is None:
            positions = np.arange(len(ids))
        tok = ad.embedding_lookup(self.params["tok_emb"], ids)
        pos = ad.embedding_lookup(self.params[pos_table], positions)
        return self._dropout(ad.add(tok, pos))

    def _check_length(self, ids, label: str) -> None:
        if len(ids) == 0:
            raise ValueError(f"{label} sequence must be non-empty")
        if len(ids) > self.config.max_positions:
            raise ValueError(
                f"{label} length {len(ids)} exceeds max_positions "
                f"{self.config.max_positions}"
            )


def _causal_mask(n: int) -> ad.Tensor:
    mask = np.triu(np.full((n, n), -1e9, dtype=np.float32), k=1)
    return ad.tensor(mask)


def encode(model: Seq2SeqModel, input_ids, self_mask: ad.Tensor | None = None,
           positions=None) -> ad.Tensor:
    """Bidirectional encoder states, shape [n, d_model]; no causal mask.

    `self_mask`/`positions` support packed batches: several sequences
    concatenated with a block-diagonal additive mask and per-segment
    positions.
    """
    if positions is None:
        model._check_length(input_ids, "input")
    h = model._embed(input_ids, "enc_pos", positions)
    for i in range(model.config.n_encoder_layers):
        x = model._ln(h, f"enc{i}.ln1")
        h = ad.add(h, model._dropout(model._attention(x, x, f"enc{i}.attn", self_mask)))
        x = model._ln(h, f"enc{i}.ln2")
        h = ad.add(h, model._dropout(model._ff(x, f"enc{i}.ff")))
    return model._ln(h, "enc_final_ln")


def decoder_states(model: Seq2SeqModel, enc_out: ad.Tensor, decoder_input_ids,
                   self_mask: ad.Tensor | None = None,
                   cross_mask: ad.Tensor | None = None,
                   positions=None) -> ad.Tensor:
    """Causally masked decoder states over the given decoder inputs."""
    if self_mask is None:
        model._check_length(decoder_input_ids, "decoder input")
        self_mask = _causal_mask(len(decoder_input_ids))
    h = model._embed(decoder_input_ids, "dec_pos", positions)
    for i in range(model.config.n_decoder_layers):
        x = model._ln(h, f"dec{i}.ln1")
        h = ad.add(h, model._dropout(
            model._attention(x, x, f"dec{i}.self_attn", self_mask)))
        x = model._ln(h, f"dec{i}.ln2")
        h = ad.add(h, model._dropout(
            model._attention(x, enc_out, f"dec{i}.cross_attn", cross_mask)))
        x = model._ln(h, f"dec{i}.ln3")
        h = ad.add(h, model._dropout(model._ff(x, f"dec{i}.ff")))
    return model._ln(h, "dec_final_ln")


def output_logits(model: Seq2SeqModel, states: ad.Tensor) -> ad.Tensor:
    """Project decoder states onto the vocabulary via the tied embedding."""
    return ad.matmul(states, ad.transpose(model.params["tok_emb"]))


def forward_teacher_forced(model: Seq2SeqModel, input_ids, target_ids) -> ad.Tensor:
    """Logits [n, vocab_size]; position i sees only target_ids[:i] plus the input."""
    if len(target_ids) == 0:
        raise ValueError("target sequence must be non-empty")
    decoder_input = [BOS_ID] + list(target_ids[:-1])
    enc_out = encode(model, input_ids)
    states = decoder_states(model, enc_out, decoder_input)
    return output_logits(model, states)


def span_head_forward(model: Seq2SeqModel, input_ids):
    """Start/end logit vectors over input positions, from encoder states."""
    if not model.config.span_head:
        raise ValueError("span head is disabled in this model's config")
    enc_out = encode(model, input_ids)
    n = len(input_ids)
    d = model.config.d_model
    start = ad.reshape(ad.matmul(enc_out, ad.reshape(model.params["span_start"], (d, 1))), (n,))
    end = ad.reshape(ad.matmul(enc_out, ad.reshape(model.params["span_end"], (d, 1))), (n,))
    return start, end


def predict_span(start_logits, end_logits, lo: int, hi: int) -> tuple[int, int]:
    """Best (s, e) with lo <= s <= e <= hi maximizing start[s] + end[e].

    Ties resolve to the earliest pair in (s, e) lexicographic order.
    """
    start = np.asarray(start_logits, dtype=np.float64)
    end = np.asarray(end_logits, dtype=np.float64)
    if not 0 <= lo <= hi < start.shape[0]:
        raise ValueError(f"invalid span bounds [{lo}, {hi}] for length {start.shape[0]}")
    best, best_score = (lo, lo), -np.inf
    for s in range(lo, hi + 1):
        for e in range(s, hi + 1):
            score = start[s] + end[e]
            if score > best_score:
                best, best_score = (s, e), score
    return best


# -- checkpointing ------------------------------------------------------------


def save_checkpoint(model: Seq2SeqModel, path, vocab_tokens: list[str] | None = None) -> None:
    """Self-describing npz: config JSON, named parameter arrays, optional vocab."""
    payload: dict[str, np.ndarray] = {
        "__config__": np.array(json.dumps(asdict(model.config), sort_keys=True)),
        "__seed__": np.array(model.seed),
    }
    for name, p in model.params.items():
        payload[f"param/{name}"] = p.data
    if vocab_tokens is not None:
        payload["__vocab__"] = np.array(vocab_tokens)
    buf = io.BytesIO()
    np.savez(buf, **payload)
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_checkpoint(path) -> tuple[Seq2SeqModel, list[str] | None]:
    with np.load(path, allow_pickle=False) as data:
        config = ModelConfig(**json.loads(str(data["__config__"])))
        model = Seq2SeqModel(config, seed=int(data["__seed__"]))
        for name in model.params:
            model.params[name].data = data[f"param/{name}"].copy()
        tokens = [str(t) for t in data["__vocab__"]] if "__vocab__" in data else None
    return model, tokens
