"""Minimal dense-tensor engine with a reverse-mode gradient tape.

Define-by-run: each op closes over its parents and backward rule, and
backward() walks the recorded graph in reverse topological order. Values are
float64 throughout. Inside a no_grad() block ops compute values only.
"""
from __future__ import annotations

import contextlib
import json
from pathlib import Path

import numpy as np

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    global _GRAD_ENABLED
    previous = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = previous


class Tensor:
    """Dense real tensor. Floating inputs keep their precision (so whole
    networks can run float32 end to end); anything else becomes float64."""

    __slots__ = ("values", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, values, requires_grad: bool = False):
        vals = np.asarray(values)
        if vals.dtype.kind != "f":
            vals = vals.astype(np.float64)
        self.values = vals
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def ndim(self) -> int:
        return self.values.ndim

    def item(self) -> float:
        return float(self.values)

    def accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=self.values.dtype)
            if self.grad.shape != self.values.shape:
                self.grad = np.broadcast_to(self.grad, self.values.shape).copy()
        else:
            self.grad += g

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def parameter(values, rng: np.random.Generator | None = None) -> Tensor:
    return Tensor(values, requires_grad=True)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(values, parents, backward) -> Tensor:
    """Create an op output, recording the tape edge when grads are live."""
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out = Tensor(values, requires_grad=True)
        out._parents = tuple(parents)
        out._backward = backward
        return out
    return Tensor(values)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a gradient back to the shape numpy broadcast it from."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _check_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_same_shape(a, b, "add")
    vals = a.values + b.values

    def backward(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(g, b.shape))

    return _make(vals, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_same_shape(a, b, "mul")
    vals = a.values * b.values

    def backward(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g * b.values, a.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(g * a.values, b.shape))

    return _make(vals, (a, b), backward)


def scale(a, factor: float) -> Tensor:
    a = _as_tensor(a)
    vals = a.values * factor

    def backward(g):
        if a.requires_grad:
            a.accumulate(g * factor)

    return _make(vals, (a,), backward)


def sub(a, b) -> Tensor:
    return add(a, scale(b, -1.0))


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError(f"matmul: operands must be >= 2-D, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul: inner dims differ, {a.shape} @ {b.shape}")

    if a.ndim > 2 and b.ndim == 2:
        # Fold leading axes into one plain GEMM; batched matmul is much
        # slower than a single large one for this common projection case.
        lead = a.shape[:-1]
        a2 = a.values.reshape(-1, a.shape[-1])
        vals = (a2 @ b.values).reshape(*lead, b.shape[-1])

        def backward(g):
            g2 = g.reshape(-1, g.shape[-1])
            if a.requires_grad:
                a.accumulate((g2 @ b.values.T).reshape(a.shape))
            if b.requires_grad:
                b.accumulate(a2.T @ g2)

        return _make(vals, (a, b), backward)

    vals = a.values @ b.values

    def backward(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g @ np.swapaxes(b.values, -1, -2), a.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(np.swapaxes(a.values, -1, -2) @ g, b.shape))

    return _make(vals, (a, b), backward)


def linear(a, weight, bias=None) -> Tensor:
    """Fused y = a @ W (+ b) for 2-D or leading-batched a and 2-D W."""
    a, weight = _as_tensor(a), _as_tensor(weight)
    if weight.ndim != 2 or a.shape[-1] != weight.shape[0]:
        raise ValueError(f"linear: incompatible {a.shape} @ {weight.shape}")
    lead = a.shape[:-1]
    a2 = a.values.reshape(-1, a.shape[-1])
    out = a2 @ weight.values
    if bias is not None:
        bias = _as_tensor(bias)
        out += bias.values
    vals = out.reshape(*lead, weight.shape[-1])

    def backward(g):
        g2 = g.reshape(-1, g.shape[-1])
        if a.requires_grad:
            a.accumulate((g2 @ weight.values.T).reshape(a.shape))
        if weight.requires_grad:
            weight.accumulate(a2.T @ g2)
        if bias is not None and bias.requires_grad:
            bias.accumulate(g2.sum(axis=0))

    parents = (a, weight) if bias is None else (a, weight, bias)
    return _make(vals, parents, backward)


def transpose_last2(a) -> Tensor:
    return swap_axes(a, -1, -2)


def swap_axes(a, ax1: int, ax2: int) -> Tensor:
    a = _as_tensor(a)
    if a.ndim < 2:
        raise ValueError(f"swap_axes: need >= 2-D, got {a.shape}")
    vals = np.swapaxes(a.values, ax1, ax2)

    def backward(g):
        if a.requires_grad:
            a.accumulate(np.swapaxes(g, ax1, ax2))

    return _make(vals, (a,), backward)


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    vals = a.values.reshape(shape)

    def backward(g):
        if a.requires_grad:
            a.accumulate(g.reshape(a.shape))

    return _make(vals, (a,), backward)


def relu(a) -> Tensor:
    a = _as_tensor(a)
    vals = np.maximum(a.values, 0.0)

    def backward(g):
        if a.requires_grad:
            a.accumulate(g * (a.values > 0.0))

    return _make(vals, (a,), backward)


def exp(a) -> Tensor:
    a = _as_tensor(a)
    vals = np.exp(a.values)

    def backward(g):
        if a.requires_grad:
            a.accumulate(g * vals)

    return _make(vals, (a,), backward)


def log(a) -> Tensor:
    a = _as_tensor(a)
    if (a.values <= 0).any():
        raise ValueError("log: inputs must be strictly positive")
    vals = np.log(a.values)

    def backward(g):
        if a.requires_grad:
            a.accumulate(g / a.values)

    return _make(vals, (a,), backward)


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    vals = np.concatenate([t.values for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        pieces = np.split(g, splits, axis=axis)
        for t, piece in zip(tensors, pieces):
            if t.requires_grad:
                t.accumulate(piece)

    return _make(vals, tuple(tensors), backward)


def take_row(a, index: int) -> Tensor:
    """Select row `index` along axis 1 of a (B, T, d) tensor -> (B, d)."""
    a = _as_tensor(a)
    if a.ndim != 3:
        raise ValueError(f"take_row: need (B, T, d), got {a.shape}")
    vals = a.values[:, index, :]

    def backward(g):
        if a.requires_grad:
            full = np.zeros_like(a.values)
            full[:, index, :] = g
            a.accumulate(full)

    return _make(vals, (a,), backward)


def slice_rows(a, start: int, stop: int) -> Tensor:
    """Slice rows [start:stop] along axis 1 of a (B, T, d) tensor."""
    a = _as_tensor(a)
    if a.ndim != 3:
        raise ValueError(f"slice_rows: need (B, T, d), got {a.shape}")
    vals = a.values[:, start:stop, :]

    def backward(g):
        if a.requires_grad:
            full = np.zeros_like(a.values)
            full[:, start:stop, :] = g
            a.accumulate(full)

    return _make(vals, (a,), backward)


def select_actions(q, actions) -> Tensor:
    """Gather per-sample action columns: (B, M, A) x (B,) -> (B, M)."""
    q = _as_tensor(q)
    if q.ndim != 3:
        raise ValueError(f"select_actions: need (B, M, A), got {q.shape}")
    idx = np.asarray(actions, dtype=int)
    rows = np.arange(q.shape[0])
    vals = q.values[rows, :, idx]

    def backward(g):
        if q.requires_grad:
            full = np.zeros_like(q.values)
            full[rows, :, idx] = g
            q.accumulate(full)

    return _make(vals, (q,), backward)


def masked_softmax(logits, mask, validate: bool = True) -> Tensor:
    """Row-stochastic softmax over the last axis, restricted to mask=True.

    Masked entries get exactly zero probability and zero gradient. A row
    with no unmasked entry is a contract violation; callers that guarantee
    an always-unmasked entry may skip the check with validate=False.
    """
    logits = _as_tensor(logits)
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), logits.shape)
    if validate and not mask.any(axis=-1).all():
        raise ValueError("masked_softmax: some row has every entry masked")
    shifted = np.where(mask, logits.values, -np.inf)
    shifted -= shifted.max(axis=-1, keepdims=True)
    expd = np.exp(shifted)  # exp(-inf) is exactly 0 on masked entries
    probs = expd / expd.sum(axis=-1, keepdims=True)

    def backward(g):
        if logits.requires_grad:
            inner = (g * probs).sum(axis=-1, keepdims=True)
            logits.accumulate(probs * (g - inner))

    return _make(probs, (logits,), backward)


def masked_log_softmax(logits, mask, validate: bool = True) -> Tensor:
    """Log-probabilities over unmasked entries; masked entries are exactly 0
    (a constant, so they carry no gradient)."""
    logits = _as_tensor(logits)
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), logits.shape)
    if validate and not mask.any(axis=-1).all():
        raise ValueError("masked_log_softmax: some row has every entry masked")
    shifted = np.where(mask, logits.values, -np.inf)
    peak = shifted.max(axis=-1, keepdims=True)
    expd = np.where(mask, np.exp(shifted - peak), 0.0)
    lse = np.log(expd.sum(axis=-1, keepdims=True)) + peak
    logp = np.where(mask, logits.values - lse, 0.0)
    probs = np.where(mask, np.exp(logp), 0.0)

    def backward(g):
        if logits.requires_grad:
            gv = np.where(mask, g, 0.0)
            logits.accumulate(gv - probs * gv.sum(axis=-1, keepdims=True))

    return _make(logp, (logits,), backward)


def layer_norm(a, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean, unit variance (no affine)."""
    a = _as_tensor(a)
    mean = a.values.mean(axis=-1, keepdims=True)
    centered = a.values - mean
    var = (centered**2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    normed = centered * inv

    def backward(g):
        if a.requires_grad:
            g_mean = g.mean(axis=-1, keepdims=True)
            proj = (g * normed).mean(axis=-1, keepdims=True)
            a.accumulate(inv * (g - g_mean - normed * proj))

    return _make(normed, (a,), backward)


def residual_layer_norm(a, b, eps: float = 1e-5) -> Tensor:
    """Fused layer_norm(a + b); both inputs receive the same cotangent."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ValueError(f"residual_layer_norm: shapes {a.shape} vs {b.shape}")
    summed = a.values + b.values
    mean = summed.mean(axis=-1, keepdims=True)
    centered = summed - mean
    var = (centered**2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    normed = centered * inv

    def backward(g):
        g_mean = g.mean(axis=-1, keepdims=True)
        proj = (g * normed).mean(axis=-1, keepdims=True)
        upstream = inv * (g - g_mean - normed * proj)
        if a.requires_grad:
            a.accumulate(upstream)
        if b.requires_grad:
            b.accumulate(upstream)

    return _make(normed, (a, b), backward)


def max_pool_rows(a, mask) -> Tensor:
    """Elementwise max over the rows of (B, T, d) where mask (B, T) is True.

    Batch elements with no valid row pool to zeros (and pass no gradient).
    """
    a = _as_tensor(a)
    if a.ndim != 3:
        raise ValueError(f"max_pool_rows: need (B, T, d), got {a.shape}")
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != a.shape[:2]:
        raise ValueError(
            f"max_pool_rows: mask {mask.shape} does not match rows {a.shape[:2]}"
        )
    guarded = np.where(mask[:, :, None], a.values, -np.inf)
    any_valid = mask.any(axis=1)
    vals = guarded.max(axis=1)
    vals[~any_valid] = 0.0
    argmax = guarded.argmax(axis=1)  # (B, d), first max on ties

    def backward(g):
        if a.requires_grad:
            full = np.zeros_like(a.values)
            b_idx = np.arange(a.shape[0])[:, None]
            d_idx = np.arange(a.shape[2])[None, :]
            contrib = np.where(any_valid[:, None], g, 0.0)
            np.add.at(full, (b_idx, argmax, d_idx), contrib)
            a.accumulate(full)

    return _make(vals, (a,), backward)


def sum_all(a) -> Tensor:
    a = _as_tensor(a)
    vals = a.values.sum()

    def backward(g):
        if a.requires_grad:
            a.accumulate(np.full(a.shape, float(g)))

    return _make(vals, (a,), backward)


def mean_all(a) -> Tensor:
    a = _as_tensor(a)
    n = a.values.size
    vals = a.values.mean()

    def backward(g):
        if a.requires_grad:
            a.accumulate(np.full(a.shape, float(g) / n))

    return _make(vals, (a,), backward)


def mean_squared_error(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ValueError(f"mean_squared_error: shapes differ, {a.shape} vs {b.shape}")
    diff = a.values - b.values
    n = diff.size
    vals = (diff**2).mean()

    def backward(g):
        coeff = 2.0 * float(g) / n
        if a.requires_grad:
            a.accumulate(coeff * diff)
        if b.requires_grad:
            b.accumulate(-coeff * diff)

    return _make(vals, (a, b), backward)


def backward(loss: Tensor) -> None:
    """Reverse-accumulate gradients from a scalar loss over the tape."""
    if loss.values.ndim != 0:
        raise ValueError(f"backward: loss must be scalar, got shape {loss.shape}")
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
            if id(parent) not in seen:
                stack.append((parent, False))
    loss.accumulate(np.ones_like(loss.values))
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


class Adam:
    """Standard Adam with bias correction over a list of parameters."""

    def __init__(self, params, lr: float = 3e-4, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros_like(p.values) for p in self.params]
        self.v = [np.zeros_like(p.values) for p in self.params]

    def step(self) -> None:
        self.step_count += 1
        b1c = 1.0 - self.beta1**self.step_count
        b2c = 1.0 - self.beta2**self.step_count
        for i, p in enumerate(self.params):
            g = p.grad if p.grad is not None else np.zeros_like(p.values)
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g**2
            m_hat = self.m[i] / b1c
            v_hat = self.v[i] / b2c
            p.values -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()


# --- checkpoints --------------------------------------------------------------

CHECKPOINT_VERSION = 1


def save_checkpoint(path: str | Path, params: dict[str, Tensor], meta: dict) -> None:
    """Write named parameter tensors plus a JSON metadata header (.npz)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = dict(meta)
    header["checkpoint_version"] = CHECKPOINT_VERSION
    arrays = {name: t.values for name, t in params.items()}
    np.savez(path, __meta__=np.frombuffer(
        json.dumps(header, sort_keys=True).encode(), dtype=np.uint8
    ), **arrays)


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    with np.load(Path(path)) as data:
        meta = json.loads(bytes(data["__meta__"]).decode())
        if meta.get("checkpoint_version") != CHECKPOINT_VERSION:
            raise ValueError(
                f"unsupported checkpoint version {meta.get('checkpoint_version')}"
            )
        arrays = {name: data[name] for name in data.files if name != "__meta__"}
    return arrays, meta
