"""Reverse-mode automatic differentiation on flat numpy storage.

Tensors carry a row-major numpy array plus an optional gradient buffer.
Every operation that touches a gradient-requiring tensor records a backward
closure on its output; `backward` replays them in reverse topological order.
The graph is rebuilt on every forward pass (define-by-run), which keeps the
semantics trivial for variable-length sequences.

Training numerics default to float32. Pass ``dtype=np.float64`` when
constructing leaf tensors to run the whole graph in double precision; the
gradient-check tests rely on this.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

DEFAULT_DTYPE = np.float32


class Tensor:
    """A shaped value participating in the differentiation graph.

    `values` exposes the flat row-major storage; `grad`, when present, is an
    array congruent to `data`. Leaf tensors created with `requires_grad=True`
    start with a zero gradient so that parameters disconnected from a loss
    read back as all-zero after `backward`.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data).astype(dtype if dtype is not None else DEFAULT_DTYPE)
        self.data: np.ndarray = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = (
            np.zeros_like(self.data) if self.requires_grad else None
        )
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def values(self) -> np.ndarray:
        """Flat row-major view of the stored values."""
        return self.data.reshape(-1)

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad.fill(0.0)

    def accumulate_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g.astype(self.data.dtype, copy=False)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def tensor(data, requires_grad: bool = False, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def _result(data: np.ndarray, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.requires_grad = any(p.requires_grad for p in parents)
    out.grad = None
    if out.requires_grad:
        out._parents = parents
        out._backward = backward_fn
    else:
        out._parents = ()
        out._backward = None
    return out


# ---------------------------------------------------------------------------
# operations


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of a 2-D [m, k] by a 2-D [k, n] tensor."""
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    out_data = a.data @ b.data

    def backward_fn(out: Tensor) -> None:
        if a.requires_grad:
            a.accumulate_grad(out.grad @ b.data.T)
        if b.requires_grad:
            b.accumulate_grad(a.data.T @ out.grad)

    return _result(out_data, (a, b), backward_fn)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; also accepts a 1-D bias added to every row of a 2-D a."""
    bias_add = a.data.ndim == 2 and b.data.ndim == 1 and b.shape[0] == a.shape[1]
    if not bias_add and a.shape != b.shape:
        raise ValueError(f"add shape mismatch: {a.shape} + {b.shape}")
    out_data = a.data + b.data

    def backward_fn(out: Tensor) -> None:
        if a.requires_grad:
            a.accumulate_grad(out.grad)
        if b.requires_grad:
            b.accumulate_grad(out.grad.sum(axis=0) if bias_add else out.grad)

    return _result(out_data, (a, b), backward_fn)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product of same-shape tensors."""
    if a.shape != b.shape:
        raise ValueError(f"mul shape mismatch: {a.shape} * {b.shape}")
    out_data = a.data * b.data

    def backward_fn(out: Tensor) -> None:
        if a.requires_grad:
            a.accumulate_grad(out.grad * b.data)
        if b.requires_grad:
            b.accumulate_grad(out.grad * a.data)

    return _result(out_data, (a, b), backward_fn)


def scale(a: Tensor, s: float) -> Tensor:
    out_data = a.data * a.data.dtype.type(s)

    def backward_fn(out: Tensor) -> None:
        if a.requires_grad:
            a.accumulate_grad(out.grad * a.data.dtype.type(s))

    return _result(out_data, (a,), backward_fn)


def relu(a: Tensor) -> Tensor:
    out_data = np.maximum(a.data, 0)

    def backward_fn(out: Tensor) -> None:
        if a.requires_grad:
            a.accumulate_grad(out.grad * (a.data > 0))

    return _result(out_data, (a,), backward_fn)


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ValueError(f"transpose expects a 2-D tensor, got shape {a.shape}")
    out_data = np.ascontiguousarray(a.data.T)

    def backward_fn(out: Tensor) -> None:
        if a.requires_grad:
            a.accumulate_grad(out.grad.T)

    return _result(out_data, (a,), backward_fn)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    out_data = a.data.reshape(shape)

    def backward_fn(out: Tensor) -> None:
        if a.requires_grad:
            a.accumulate_grad(out.grad.reshape(a.shape))

    return _result(out_data, (a,), backward_fn)


def slice_columns(a: Tensor, start: int, stop: int) -> Tensor:
    if a.data.ndim != 2 or not (0 <= start < stop <= a.shape[1]):
        raise ValueError(f"bad column slice [{start}:{stop}] of shape {a.shape}")
    out_data = np.ascontiguousarray(a.data[:, start:stop])

    def backward_fn(out: Tensor) -> None:
        if a.requires_grad:
            g = np.zeros_like(a.data)
            g[:, start:stop] = out.grad
            a.accumulate_grad(g)

    return _result(out_data, (a,), backward_fn)


def concat_columns(parts: list[Tensor]) -> Tensor:
    if not parts:
        raise ValueError("concat_columns needs at least one tensor")
    out_data = np.concatenate([p.data for p in parts], axis=1)
    widths = [p.shape[1] for p in parts]

    def backward_fn(out: Tensor) -> None:
        offset = 0
        for p, w in zip(parts, widths):
            if p.requires_grad:
                p.accumulate_grad(out.grad[:, offset : offset + w])
            offset += w

    return _result(out_data, tuple(parts), backward_fn)


def embedding_lookup(table: Tensor, ids) -> Tensor:
    """Gather rows of `table` by integer id; gradients scatter-add back."""
    idx = np.asarray(ids, dtype=np.int64)
    if idx.ndim != 1:
        raise ValueError("embedding_lookup expects a flat id sequence")
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise IndexError(f"id out of range for table with {table.shape[0]} rows")
    out_data = table.data[idx]

    def backward_fn(out: Tensor) -> None:
        if table.requires_grad:
            g = np.zeros_like(table.data)
            np.add.at(g, idx, out.grad)
            table.accumulate_grad(g)

    return _result(out_data, (table,), backward_fn)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-row normalization over the last axis with learned gain and bias."""
    if x.data.ndim != 2 or gain.shape != (x.shape[1],) or bias.shape != (x.shape[1],):
        raise ValueError(
            f"layer_norm shape mismatch: x {x.shape}, gain {gain.shape}, bias {bias.shape}"
        )
    mu = x.data.mean(axis=1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + x.data.dtype.type(eps))
    x_hat = centered * inv_std
    out_data = x_hat * gain.data + bias.data

    def backward_fn(out: Tensor) -> None:
        g = out.grad
        if gain.requires_grad:
            gain.accumulate_grad((g * x_hat).sum(axis=0))
        if bias.requires_grad:
            bias.accumulate_grad(g.sum(axis=0))
        if x.requires_grad:
            gx_hat = g * gain.data
            # d loss / d x through x_hat = (x - mu) * inv_std
            term2 = gx_hat.mean(axis=1, keepdims=True)
            term3 = x_hat * (gx_hat * x_hat).mean(axis=1, keepdims=True)
            x.accumulate_grad((gx_hat - term2 - term3) * inv_std)

    return _result(out_data, (x, gain, bias), backward_fn)


def softmax_rows(t: Tensor) -> Tensor:
    """Row-wise softmax with max subtraction for stability."""
    if t.data.ndim != 2:
        raise ValueError(f"softmax_rows expects a 2-D tensor, got shape {t.shape}")
    shifted = t.data - t.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=1, keepdims=True)

    def backward_fn(out: Tensor) -> None:
        if t.requires_grad:
            g = out.grad
            s = out.data
            dot = (g * s).sum(axis=1, keepdims=True)
            t.accumulate_grad((g - dot) * s)

    return _result(out_data, (t,), backward_fn)


def sum_all(a: Tensor) -> Tensor:
    """Sum of all entries, as a scalar tensor."""
    out_data = np.asarray(a.data.sum(), dtype=a.data.dtype)

    def backward_fn(out: Tensor) -> None:
        if a.requires_grad:
            a.accumulate_grad(np.broadcast_to(out.grad, a.shape).copy())

    return _result(out_data, (a,), backward_fn)


def cross_entropy_logits(logits: Tensor, targets, ignore_id: int = -1) -> Tensor:
    """Sum over non-ignored positions of -log softmax(logits_i)[target_i].

    `logits` is [n, V]; `targets` is a length-n id sequence. Positions whose
    target equals `ignore_id` contribute zero loss and zero gradient.
    """
    tgt = np.asarray(targets, dtype=np.int64)
    if logits.data.ndim != 2 or tgt.ndim != 1 or tgt.shape[0] != logits.shape[0]:
        raise ValueError(
            f"cross_entropy shape mismatch: logits {logits.shape}, targets {tgt.shape}"
        )
    keep = tgt != ignore_id
    checked = tgt[keep]
    if checked.size and (checked.min() < 0 or checked.max() >= logits.shape[1]):
        raise IndexError(f"target id out of range [0, {logits.shape[1]})")

    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_z
    rows = np.arange(tgt.shape[0])
    picked = np.where(keep, log_probs[rows, np.where(keep, tgt, 0)], 0.0)
    out_data = np.asarray(-picked.sum(), dtype=logits.data.dtype)

    def backward_fn(out: Tensor) -> None:
        if logits.requires_grad:
            probs = np.exp(log_probs)
            g = probs.copy()
            g[rows[keep], tgt[keep]] -= 1.0
            g[~keep] = 0.0
            logits.accumulate_grad(g * out.grad)

    return _result(out_data, (logits,), backward_fn)


def mean_scalars(losses: list[Tensor]) -> Tensor:
    """Arithmetic mean of scalar tensors, staying on the graph."""
    if not losses:
        raise ValueError("mean_scalars needs at least one loss")
    total = losses[0]
    for extra in losses[1:]:
        total = add(total, extra)
    return scale(total, 1.0 / len(losses))


# ---------------------------------------------------------------------------
# backward pass


def backward(loss: Tensor) -> None:
    """Populate grad fields of every gradient-requiring tensor reachable from loss.

    Gradients accumulate into existing buffers; the optimizer clears them
    after each update. Traversal order is deterministic, so repeated runs on
    the same graph produce bit-identical gradients.
    """
    if loss.data.ndim != 0:
        raise ValueError(f"backward expects a scalar loss, got shape {loss.shape}")
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen and parent.requires_grad:
                stack.append((parent, False))

    loss.accumulate_grad(np.ones_like(loss.data))
    for node in reversed(order):
        if node._backward is not None:
            node._backward(node)


def assert_finite(t: Tensor, label: str = "tensor") -> None:
    if not np.isfinite(t.data).all():
        raise FloatingPointError(f"non-finite values in {label}")


# ---------------------------------------------------------------------------
# Adam optimizer


@dataclass
class AdamState:
    """Bias-corrected Adam moments for a fixed parameter list.

    `step_count` increases by exactly one per update; moment arrays stay
    congruent to their parameters. The learning rate is constant — no
    scheduling.
    """

    learning_rate: float = 2e-5
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    first_moment: list[np.ndarray] = field(default_factory=list)
    second_moment: list[np.ndarray] = field(default_factory=list)


def init_adam(params: list[Tensor], learning_rate: float = 2e-5, **kwargs) -> AdamState:
    state = AdamState(learning_rate=learning_rate, **kwargs)
    state.first_moment = [np.zeros_like(p.data) for p in params]
    state.second_moment = [np.zeros_like(p.data) for p in params]
    return state


def adam_step(params: list[Tensor], state: AdamState) -> AdamState:
    """Standard Adam update with bias correction; clears grads afterwards."""
    for i, p in enumerate(params):
        if p.grad is None:
            raise ValueError(f"parameter {i} has no gradient; run backward first")
        if state.first_moment[i].shape != p.data.shape:
            raise ValueError(f"moment/parameter shape mismatch at index {i}")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    bias1 = 1.0 - b1**t
    bias2 = 1.0 - b2**t
    for i, p in enumerate(params):
        g = p.grad
        m = state.first_moment[i]
        v = state.second_moment[i]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        m_hat = m / bias1
        v_hat = v / bias2
        p.data -= (state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)).astype(
            p.data.dtype, copy=False
        )
        p.grad.fill(0.0)
    return state
