"""Dense-tensor arithmetic with reverse-mode gradients and an AdamW optimizer.

Everything runs on plain numpy arrays wrapped in a small ``Tensor`` tape.
Training uses float32; gradient checks run the same ops in float64 for
headroom. All ops are pure w.r.t. their inputs and deterministic.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "ParamStore",
    "GraphError",
    "NumericsError",
    "tensor",
    "add",
    "mul",
    "scale",
    "matmul",
    "linear",
    "transpose",
    "gelu",
    "softmax",
    "layer_norm",
    "attention",
    "multihead_attention",
    "causal_mask",
    "cross_entropy_masked",
    "embed",
    "concat_rows",
    "slice_rows",
    "slice_cols",
    "concat_cols",
    "conv1d_strided",
    "conv1d_out_len",
    "tsum",
    "backward",
    "adam_step",
    "set_debug_checks",
]


class NumericsError(ValueError):
    """Shape mismatch, non-finite values, or other op precondition failures."""


class GraphError(RuntimeError):
    """backward() called on a tensor with no recorded computation."""


_DEBUG_CHECKS = False


def set_debug_checks(enabled: bool) -> None:
    """Toggle per-op finiteness assertions (slow; used by the test suite)."""
    global _DEBUG_CHECKS
    _DEBUG_CHECKS = enabled


class Tensor:
    """A numpy array plus an optional backward closure on the tape."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(
        self,
        data: np.ndarray,
        requires_grad: bool = False,
        parents: tuple["Tensor", ...] = (),
        backward_fn: Callable[[], None] | None = None,
    ):
        self.data = data
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._backward = backward_fn

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:  # pragma: no cover
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, grad={self.requires_grad})"


def tensor(data, requires_grad: bool = False, dtype=None) -> Tensor:
    """Wrap array-like data as a leaf tensor.

    Float arrays keep their precision (float64 is the gradient-check mode);
    everything else becomes float32."""
    arr = np.asarray(data)
    if dtype is not None:
        arr = arr.astype(dtype)
    elif arr.dtype not in (np.float32, np.float64):
        arr = arr.astype(np.float32)
    return Tensor(arr, requires_grad=requires_grad)


def _finite_check(arr: np.ndarray, op: str) -> None:
    if _DEBUG_CHECKS and not np.all(np.isfinite(arr)):
        raise NumericsError(f"non-finite values produced by {op}")


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = g.astype(t.data.dtype, copy=True)
    else:
        t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum gradient over axes that were broadcast in the forward pass."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _make(out: np.ndarray, parents: tuple[Tensor, ...], backward_fn, op: str) -> Tensor:
    _finite_check(out, op)
    req = any(p.requires_grad for p in parents)
    return Tensor(out, requires_grad=req, parents=parents, backward_fn=backward_fn if req else None)


def add(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data + b.data

    def bw():
        _accum(a, _unbroadcast(out.grad, a.shape))
        _accum(b, _unbroadcast(out.grad, b.shape))

    out = _make(out_data, (a, b), bw, "add")
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data * b.data

    def bw():
        _accum(a, _unbroadcast(out.grad * b.data, a.shape))
        _accum(b, _unbroadcast(out.grad * a.data, b.shape))

    out = _make(out_data, (a, b), bw, "mul")
    return out


def scale(a: Tensor, s: float) -> Tensor:
    out_data = a.data * a.data.dtype.type(s)

    def bw():
        _accum(a, out.grad * a.data.dtype.type(s))

    out = _make(out_data, (a,), bw, "scale")
    return out


def add_const(a: Tensor, c: np.ndarray) -> Tensor:
    """Add a non-differentiable constant (e.g. an additive attention mask)."""
    out_data = a.data + c

    def bw():
        _accum(a, _unbroadcast(out.grad, a.shape))

    req = a.requires_grad
    out = Tensor(out_data, requires_grad=req, parents=(a,), backward_fn=bw if req else None)
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise NumericsError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise NumericsError(f"matmul inner dimensions differ: {a.shape} x {b.shape}")
    out_data = a.data @ b.data

    def bw():
        _accum(a, out.grad @ b.data.T)
        _accum(b, a.data.T @ out.grad)

    out = _make(out_data, (a, b), bw, "matmul")
    return out


def transpose(a: Tensor) -> Tensor:
    out_data = a.data.T.copy()

    def bw():
        _accum(a, out.grad.T)

    out = _make(out_data, (a,), bw, "transpose")
    return out


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a: Tensor) -> Tensor:
    """tanh-approximation GELU; smooth everywhere so finite differences behave."""
    x = a.data
    x2 = x * x
    t = np.tanh(_GELU_C * (x + 0.044715 * (x2 * x)))
    out_data = 0.5 * x * (1.0 + t)

    def bw():
        local = 0.5 * (1.0 + t) + (0.5 * _GELU_C) * x * (1.0 - t * t) * (1.0 + 0.134145 * x2)
        _accum(a, out.grad * local.astype(x.dtype))

    out = _make(out_data.astype(x.dtype), (a,), bw, "gelu")
    return out


def softmax(a: Tensor) -> Tensor:
    """Softmax over the last axis, with max-subtraction for stability."""
    x = a.data
    m = np.max(x, axis=-1, keepdims=True)
    e = np.exp(x - m)
    out_data = e / e.sum(axis=-1, keepdims=True)

    def bw():
        g = out.grad
        dot = np.sum(g * out_data, axis=-1, keepdims=True)
        _accum(a, (out_data * (g - dot)).astype(x.dtype))

    out = _make(out_data.astype(x.dtype), (a,), bw, "softmax")
    return out


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-row normalization to zero mean / unit variance, then affine."""
    d = x.shape[-1]
    if d < 1:
        raise NumericsError("layer_norm needs d >= 1")
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out_data = xhat * gain.data + bias.data

    def bw():
        g = out.grad
        gg = g * gain.data
        m1 = gg.mean(axis=-1, keepdims=True)
        m2 = (gg * xhat).mean(axis=-1, keepdims=True)
        dx = (gg - m1 - xhat * m2) * inv
        _accum(x, dx.astype(x.data.dtype))
        axes = tuple(range(g.ndim - 1))
        _accum(gain, (g * xhat).sum(axis=axes))
        _accum(bias, g.sum(axis=axes))

    out = _make(out_data.astype(x.data.dtype), (x, gain, bias), bw, "layer_norm")
    return out


def causal_mask(T: int, dtype=np.float32) -> np.ndarray:
    """Additive [T x T] mask: -inf above the diagonal."""
    m = np.zeros((T, T), dtype=dtype)
    m[np.triu_indices(T, k=1)] = -np.inf
    return m


def attention(q: Tensor, k: Tensor, v: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """softmax(q k^T / sqrt(d) + mask) v for a single head.

    mask is an additive [Tq x Tk] array (or None for full bidirectional
    attention). A fully masked row is an error.
    """
    d = q.shape[-1]
    scores = scale(matmul(q, transpose(k)), 1.0 / math.sqrt(d))
    if mask is not None:
        if np.any(np.all(np.isneginf(mask), axis=-1)):
            raise NumericsError("attention row with all positions masked")
        scores = add_const(scores, mask.astype(scores.data.dtype))
    w = softmax(scores)
    return matmul(w, v)


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Fused x @ w + b."""
    if x.shape[-1] != w.shape[0]:
        raise NumericsError(f"linear inner dimensions differ: {x.shape} x {w.shape}")
    out_data = x.data @ w.data + b.data

    def bw():
        g = out.grad
        _accum(w, x.data.T @ g)
        _accum(b, g.sum(axis=0))
        _accum(x, g @ w.data.T)

    out = _make(out_data, (x, w, b), bw, "linear")
    return out


def multihead_attention(
    q: Tensor, k: Tensor, v: Tensor, n_heads: int, mask: np.ndarray | None = None
) -> Tensor:
    """All heads in one op: d is split into n_heads column blocks.

    q is [Tq x d]; k, v are [Tk x d]; mask an additive [Tq x Tk] array
    shared by every head. Kept as a single tape node for speed."""
    Tq, d = q.shape
    Tk = k.shape[0]
    if d % n_heads:
        raise NumericsError(f"width {d} not divisible by {n_heads} heads")
    hd = d // n_heads
    scale_f = 1.0 / math.sqrt(hd)
    # (H, T, hd) stacks so the batched matmuls hit BLAS
    qh = np.ascontiguousarray(q.data.reshape(Tq, n_heads, hd).transpose(1, 0, 2))
    kh = np.ascontiguousarray(k.data.reshape(Tk, n_heads, hd).transpose(1, 0, 2))
    vh = np.ascontiguousarray(v.data.reshape(Tk, n_heads, hd).transpose(1, 0, 2))
    scores = (qh @ kh.transpose(0, 2, 1)) * scale_f
    if mask is not None:
        if np.any(np.all(np.isneginf(mask), axis=-1)):
            raise NumericsError("attention row with all positions masked")
        scores = scores + mask[None, :, :]
    m = scores.max(axis=-1, keepdims=True)
    e = np.exp(scores - m)
    w = e / e.sum(axis=-1, keepdims=True)
    out_data = (w @ vh).transpose(1, 0, 2).reshape(Tq, d)

    def bw():
        go = np.ascontiguousarray(out.grad.reshape(Tq, n_heads, hd).transpose(1, 0, 2))
        gw = go @ vh.transpose(0, 2, 1)
        gs = w * (gw - np.sum(w * gw, axis=-1, keepdims=True))
        gq = (gs @ kh) * scale_f
        gk = (gs.transpose(0, 2, 1) @ qh) * scale_f
        gv = w.transpose(0, 2, 1) @ go
        _accum(q, gq.transpose(1, 0, 2).reshape(Tq, d))
        _accum(k, gk.transpose(1, 0, 2).reshape(Tk, d))
        _accum(v, gv.transpose(1, 0, 2).reshape(Tk, d))

    out = _make(out_data.astype(q.data.dtype), (q, k, v), bw, "multihead_attention")
    return out


def cross_entropy_masked(
    logits: Tensor,
    targets: np.ndarray,
    select: np.ndarray,
    weight: float = 1.0,
) -> Tensor:
    """weight * sum over selected rows of -log softmax(logits)[target].

    Gradient flows only to the selected rows. An empty selection yields a
    zero loss (skipped sample).
    """
    targets = np.asarray(targets)
    select = np.asarray(select, dtype=bool)
    L, V = logits.shape
    if targets.shape != (L,) or select.shape != (L,):
        raise NumericsError(f"targets/select must be length {L}")
    idx = np.flatnonzero(select)
    dt = logits.data.dtype
    if idx.size == 0:
        out_data = np.asarray(0.0, dtype=dt)

        def bw_empty():
            _accum(logits, np.zeros_like(logits.data))

        return _make(out_data, (logits,), bw_empty, "cross_entropy_masked")

    sel = logits.data[idx]
    m = sel.max(axis=-1, keepdims=True)
    z = sel - m
    logsumexp = np.log(np.exp(z).sum(axis=-1, keepdims=True)) + m
    nll = logsumexp[:, 0] - sel[np.arange(idx.size), targets[idx]]
    out_data = np.asarray(weight * nll.sum(), dtype=dt)

    def bw():
        g = np.zeros_like(logits.data)
        p = np.exp(sel - logsumexp)
        p[np.arange(idx.size), targets[idx]] -= 1.0
        g[idx] = (weight * float(out.grad)) * p
        _accum(logits, g)

    out = _make(out_data, (logits,), bw, "cross_entropy_masked")
    return out


def embed(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row gather: out[i] = table[ids[i]]."""
    ids = np.asarray(ids, dtype=np.int64)
    out_data = table.data[ids]

    def bw():
        g = np.zeros_like(table.data)
        np.add.at(g, ids, out.grad)
        _accum(table, g)

    out = _make(out_data, (table,), bw, "embed")
    return out


def concat_rows(parts: Sequence[Tensor]) -> Tensor:
    out_data = np.concatenate([p.data for p in parts], axis=0)
    offsets = np.cumsum([0] + [p.shape[0] for p in parts])

    def bw():
        for p, a, b in zip(parts, offsets[:-1], offsets[1:]):
            _accum(p, out.grad[a:b])

    out = _make(out_data, tuple(parts), bw, "concat_rows")
    return out


def slice_rows(a: Tensor, start: int, stop: int) -> Tensor:
    out_data = a.data[start:stop].copy()

    def bw():
        g = np.zeros_like(a.data)
        g[start:stop] = out.grad
        _accum(a, g)

    out = _make(out_data, (a,), bw, "slice_rows")
    return out


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    out_data = a.data[:, start:stop].copy()

    def bw():
        g = np.zeros_like(a.data)
        g[:, start:stop] = out.grad
        _accum(a, g)

    out = _make(out_data, (a,), bw, "slice_cols")
    return out


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    out_data = np.concatenate([p.data for p in parts], axis=1)
    offsets = np.cumsum([0] + [p.shape[1] for p in parts])

    def bw():
        for p, a, b in zip(parts, offsets[:-1], offsets[1:]):
            _accum(p, out.grad[:, a:b])

    out = _make(out_data, tuple(parts), bw, "concat_cols")
    return out


def conv1d_out_len(T: int, kernel: int = 3, stride: int = 2) -> int:
    """Output length of a valid strided temporal conv."""
    return (T - kernel) // stride + 1


def conv1d_strided(x: Tensor, w: Tensor, b: Tensor, kernel: int = 3, stride: int = 2) -> Tensor:
    """Temporal conv over [T x Cin] with weights [kernel*Cin x Cout].

    Valid convolution: out[t] = concat(x[t*stride : t*stride+kernel]) @ w + b.
    """
    T, cin = x.shape
    if T < kernel:
        raise NumericsError(f"conv1d needs T >= {kernel}, got {T}")
    t_out = conv1d_out_len(T, kernel, stride)
    starts = np.arange(t_out) * stride
    win_idx = starts[:, None] + np.arange(kernel)[None, :]
    windows = x.data[win_idx].reshape(t_out, kernel * cin)
    out_data = windows @ w.data + b.data

    def bw():
        g = out.grad
        _accum(w, windows.T @ g)
        _accum(b, g.sum(axis=0))
        gw = (g @ w.data.T).reshape(t_out, kernel, cin)
        gx = np.zeros_like(x.data)
        np.add.at(gx, win_idx, gw)
        _accum(x, gx)

    out = _make(out_data, (x, w, b), bw, "conv1d_strided")
    return out


def tsum(a: Tensor) -> Tensor:
    out_data = np.asarray(a.data.sum(), dtype=a.data.dtype)

    def bw():
        _accum(a, np.full_like(a.data, float(out.grad)))

    out = _make(out_data, (a,), bw, "tsum")
    return out


def backward(loss: Tensor) -> None:
    """Reverse-mode sweep from a scalar loss; populates .grad on reachable leaves."""
    if loss.data.ndim != 0:
        raise NumericsError("backward expects a scalar loss")
    if not loss._parents:
        raise GraphError("tensor has no recorded computation graph")
    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    loss.grad = np.asarray(1.0, dtype=loss.data.dtype)
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward()


class ParamStore:
    """Named parameters with Adam moment buffers and a step counter."""

    def __init__(self):
        self.params: dict[str, Tensor] = {}
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.step_count = 0
        self.frozen: set[str] = set()

    def add(self, name: str, data: np.ndarray) -> Tensor:
        if name in self.params:
            raise NumericsError(f"parameter {name!r} already exists")
        t = Tensor(np.ascontiguousarray(data), requires_grad=True)
        self.params[name] = t
        self.m[name] = np.zeros_like(t.data)
        self.v[name] = np.zeros_like(t.data)
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def names(self, prefix: str = "") -> list[str]:
        return [n for n in self.params if n.startswith(prefix)]

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None

    def n_params(self) -> int:
        return sum(t.data.size for t in self.params.values())


def adam_step(
    store: ParamStore,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    weight_decay: float = 0.01,
    names: Iterable[str] | None = None,
) -> None:
    """One AdamW step (decoupled weight decay) over the selected parameters.

    Every selected, non-frozen parameter must have a populated gradient.
    """
    todo = list(names) if names is not None else list(store.params)
    todo = [n for n in todo if n not in store.frozen]
    for n in todo:
        if store.params[n].grad is None:
            raise NumericsError(f"missing gradient for parameter {n!r}")
    store.step_count += 1
    t = store.step_count
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for n in todo:
        p = store.params[n]
        g = p.grad
        m = store.m[n]
        v = store.v[n]
        m *= beta1
        m += (1 - beta1) * g
        v *= beta2
        v += (1 - beta2) * (g * g)
        m_hat = m / c1
        v_hat = v / c2
        if weight_decay != 0.0:
            p.data -= (lr * weight_decay) * p.data
        p.data -= lr * m_hat / (np.sqrt(v_hat) + eps)
