"""Minimal reverse-mode autodiff over float64 numpy arrays.

A `Tensor` wraps an ndarray plus the closure that routes its output
gradient to its parents.  Ops build the graph eagerly; calling
`backward()` on a scalar loss walks the graph once in reverse
topological order and accumulates gradients into every reachable node.
All arithmetic is float64 and single computation graphs are strictly
sequential, so results are reproducible bit-for-bit on one platform.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np

from ..errors import ShapeError


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn", "_backward_done")

    def __init__(
        self,
        data,
        parents: tuple["Tensor", ...] = (),
        backward_fn: Callable[[np.ndarray], None] | None = None,
    ):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        # constants get no gradient work; ops skip parents that need none
        self.requires_grad = any(p.requires_grad for p in parents)
        self._parents = parents
        self._backward_fn = backward_fn
        self._backward_done = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(()))

    def accumulate_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = g.astype(np.float64, copy=True)
        else:
            self.grad += g

    def backward(self) -> None:
        """Populate grads of everything reachable from this scalar node.

        Raises if called twice on the same node: per-step graphs are
        single-use, rebuild the graph (and zero parameter grads) instead.
        """
        if self.data.size != 1:
            raise ShapeError(f"backward requires a scalar, got shape {self.shape}")
        if self._backward_done:
            raise RuntimeError("backward already called on this node without a reset")
        order = _topo_order(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node.requires_grad and node._backward_fn is not None and node.grad is not None:
                node._backward_fn(node.grad)
        self._backward_done = True

    def __repr__(self) -> str:  # pragma: no cover
        return f"Tensor(shape={self.shape})"


class Param(Tensor):
    """A named trainable tensor; its grad buffer is always allocated."""

    __slots__ = ("name",)

    def __init__(self, data, name: str):
        super().__init__(data)
        if not np.isfinite(self.data).all():
            raise ValueError(f"parameter {name!r} initialized with non-finite values")
        self.name = name
        self.requires_grad = True
        self.grad = np.zeros_like(self.data)

    def zero_grad(self) -> None:
        self.grad[...] = 0.0

    def __repr__(self) -> str:  # pragma: no cover
        return f"Param({self.name!r}, shape={self.shape})"


def _topo_order(root: Tensor) -> list[Tensor]:
    # iterative DFS; graphs can be deeper than the recursion limit
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
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
    return order


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient down to `shape` after numpy broadcasting."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gd, sd) in enumerate(zip(g.shape, shape)) if sd == 1 and gd != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# primitive ops


def add(a: Tensor, b: Tensor) -> Tensor:
    try:
        out_data = a.data + b.data
    except ValueError as exc:
        raise ShapeError(f"add: cannot broadcast {a.shape} with {b.shape}") from exc

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(g, b.shape))

    return Tensor(out_data, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    try:
        out_data = a.data * b.data
    except ValueError as exc:
        raise ShapeError(f"mul: cannot broadcast {a.shape} with {b.shape}") from exc

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(g * a.data, b.shape))

    return Tensor(out_data, (a, b), backward)


def scale(a: Tensor, s: float) -> Tensor:
    def backward(g):
        a.accumulate_grad(g * s)

    return Tensor(a.data * s, (a,), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul requires >=2-d operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dims differ, {a.shape} @ {b.shape}")
    out_data = np.matmul(a.data, b.data)

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape))

    return Tensor(out_data, (a, b), backward)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    def backward(g):
        a.accumulate_grad(g.reshape(a.shape))

    return Tensor(a.data.reshape(shape), (a,), backward)


def transpose(a: Tensor, axes: tuple[int, ...]) -> Tensor:
    inverse = tuple(int(i) for i in np.argsort(axes))

    def backward(g):
        a.accumulate_grad(g.transpose(inverse))

    return Tensor(a.data.transpose(axes), (a,), backward)


def expand(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    """Broadcast to `shape`; the backward pass sums over expanded axes."""
    out_data = np.broadcast_to(a.data, shape).copy()

    def backward(g):
        a.accumulate_grad(_unbroadcast(g, a.shape))

    return Tensor(out_data, (a,), backward)


def concat(parts: Sequence[Tensor], axis: int) -> Tensor:
    out_data = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for part, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if not part.requires_grad:
                continue
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(int(lo), int(hi))
            part.accumulate_grad(g[tuple(idx)])

    return Tensor(out_data, tuple(parts), backward)


def slice_axis0(a: Tensor, lo: int, hi: int) -> Tensor:
    """View rows [lo, hi) along the first axis."""
    if not 0 <= lo <= hi <= a.shape[0]:
        raise ShapeError(f"slice [{lo}, {hi}) out of range for axis of {a.shape[0]}")

    def backward(g):
        acc = np.zeros_like(a.data)
        acc[lo:hi] = g
        a.accumulate_grad(acc)

    return Tensor(a.data[lo:hi], (a,), backward)


def gather_rows(table: Tensor, indices: np.ndarray) -> Tensor:
    """table[(V, d)] indexed by an integer array -> (*indices.shape, d)."""
    idx = np.asarray(indices, dtype=np.int64)
    out_data = table.data[idx]

    def backward(g):
        acc = np.zeros_like(table.data)
        np.add.at(acc, idx.reshape(-1), g.reshape(-1, table.data.shape[-1]))
        table.accumulate_grad(acc)

    return Tensor(out_data, (table,), backward)


def scatter_rows(base: Tensor, indices: np.ndarray, rows: Tensor) -> Tensor:
    """Copy of base[(B, N, d)] with rows[(B, k, d)] written at per-batch indices.

    Gradient flows to `rows` at the written positions and to `base`
    everywhere else (overwritten entries get none).
    """
    idx = np.asarray(indices, dtype=np.int64)
    if base.ndim != 3 or rows.ndim != 3 or idx.shape != rows.shape[:2]:
        raise ShapeError(
            f"scatter_rows: base {base.shape}, rows {rows.shape}, indices {idx.shape}"
        )
    batch = np.arange(base.shape[0])[:, None]
    out_data = base.data.copy()
    out_data[batch, idx] = rows.data

    def backward(g):
        if rows.requires_grad:
            rows.accumulate_grad(g[batch, idx])
        if base.requires_grad:
            g_base = g.copy()
            g_base[batch, idx] = 0.0
            base.accumulate_grad(g_base)

    return Tensor(out_data, (base, rows), backward)


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    out_data = np.empty_like(x)
    pos = x >= 0
    out_data[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out_data[~pos] = ex / (1.0 + ex)

    def backward(g):
        a.accumulate_grad(g * out_data * (1.0 - out_data))

    return Tensor(out_data, (a,), backward)


_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_A = 0.044715


def gelu(a: Tensor) -> Tensor:
    """Smooth tanh-form GELU; smoothness keeps finite-difference checks tight."""
    x = a.data
    inner = _GELU_C * (x + _GELU_A * x**3)
    t = np.tanh(inner)
    out_data = 0.5 * x * (1.0 + t)

    def backward(g):
        d_inner = _GELU_C * (1.0 + 3.0 * _GELU_A * x**2)
        local = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t**2) * d_inner
        a.accumulate_grad(g * local)

    return Tensor(out_data, (a,), backward)


def softmax(a: Tensor) -> Tensor:
    """Last-axis softmax, max-shifted for stability."""
    x = a.data
    if not np.isfinite(x).all():
        raise ValueError("softmax input contains non-finite values")
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        dot = (g * out_data).sum(axis=-1, keepdims=True)
        a.accumulate_grad((g - dot) * out_data)

    return Tensor(out_data, (a,), backward)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-12) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(f"layer_norm affine params must be ({d},)")
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered**2).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    out_data = xhat * gamma.data + beta.data

    def backward(g):
        gxh = g * gamma.data
        term = gxh - gxh.mean(axis=-1, keepdims=True) - xhat * (gxh * xhat).mean(axis=-1, keepdims=True)
        x.accumulate_grad(term * inv_std)
        reduce_axes = tuple(range(g.ndim - 1))
        gamma.accumulate_grad((g * xhat).sum(axis=reduce_axes))
        beta.accumulate_grad(g.sum(axis=reduce_axes))

    return Tensor(out_data, (x, gamma, beta), backward)


def conv2d(x: Tensor, kernels: Tensor, bias: Tensor | None = None) -> Tensor:
    """Same-padded stride-1 cross-correlation.

    x is (c_in, h, w) or (batch, c_in, h, w); kernels are
    (c_out, c_in, kh, kw) with odd kh, kw.  Internally lowered to one
    im2col matmul per direction.
    """
    squeeze = x.ndim == 3
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 4:
        raise ShapeError(f"conv2d input must be 3-d or 4-d, got {x.shape}")
    co, ci, kh, kw = kernels.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError(f"conv2d kernels must have odd size, got {kh}x{kw}")
    if xd.shape[1] != ci:
        raise ShapeError(f"conv2d: input channels {xd.shape[1]} != kernel c_in {ci}")
    b_, _, h, w = xd.shape
    ph, pw = kh // 2, kw // 2
    xp = np.pad(xd, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    cols = np.empty((b_, ci, kh * kw, h * w))
    for di in range(kh):
        for dj in range(kw):
            cols[:, :, di * kw + dj, :] = xp[:, :, di : di + h, dj : dj + w].reshape(b_, ci, h * w)
    cols = cols.reshape(b_, ci * kh * kw, h * w)
    k2 = kernels.data.reshape(co, ci * kh * kw)
    out_data = np.matmul(k2, cols).reshape(b_, co, h, w)
    if bias is not None:
        if bias.shape != (co,):
            raise ShapeError(f"conv2d bias must be ({co},), got {bias.shape}")
        out_data = out_data + bias.data[None, :, None, None]

    def backward(g):
        gb = (g[None] if squeeze else g).reshape(b_, co, h * w)
        if kernels.requires_grad:
            dk2 = np.matmul(gb, cols.transpose(0, 2, 1)).sum(axis=0)
            kernels.accumulate_grad(dk2.reshape(co, ci, kh, kw))
        if x.requires_grad:
            dcols = np.matmul(k2.T, gb).reshape(b_, ci, kh * kw, h * w)
            dxp = np.zeros_like(xp)
            for di in range(kh):
                for dj in range(kw):
                    dxp[:, :, di : di + h, dj : dj + w] += dcols[
                        :, :, di * kw + dj, :
                    ].reshape(b_, ci, h, w)
            dx = dxp[:, :, ph : ph + h, pw : pw + w]
            x.accumulate_grad(dx[0] if squeeze else dx)
        if bias is not None and bias.requires_grad:
            bias.accumulate_grad(gb.sum(axis=(0, 2)))

    parents = (x, kernels) if bias is None else (x, kernels, bias)
    return Tensor(out_data[0] if squeeze else out_data, parents, backward)


def dense_gelu_dense(x: Tensor, w1: Tensor, b1: Tensor, w2: Tensor, b2: Tensor) -> Tensor:
    """Fused feed-forward block: (x @ w1 + b1) -> GELU -> (@ w2 + b2).

    Equivalent to composing linear/gelu/linear; one node with cached
    activations halves the buffer traffic of the hot path.
    """
    h1 = np.matmul(x.data, w1.data)
    h1 += b1.data
    inner = _GELU_C * (h1 + _GELU_A * h1**3)
    t = np.tanh(inner)
    act = 0.5 * h1 * (1.0 + t)
    out_data = np.matmul(act, w2.data)
    out_data += b2.data

    def backward(g):
        reduce_axes = tuple(range(g.ndim - 1))
        if w2.requires_grad:
            w2.accumulate_grad(_unbroadcast(np.matmul(np.swapaxes(act, -1, -2), g), w2.shape))
        if b2.requires_grad:
            b2.accumulate_grad(g.sum(axis=reduce_axes))
        gact = np.matmul(g, np.swapaxes(w2.data, -1, -2))
        d_inner = _GELU_C * (1.0 + 3.0 * _GELU_A * h1**2)
        gh1 = gact * (0.5 * (1.0 + t) + 0.5 * h1 * (1.0 - t**2) * d_inner)
        if w1.requires_grad:
            w1.accumulate_grad(_unbroadcast(np.matmul(np.swapaxes(x.data, -1, -2), gh1), w1.shape))
        if b1.requires_grad:
            b1.accumulate_grad(gh1.sum(axis=reduce_axes))
        if x.requires_grad:
            x.accumulate_grad(np.matmul(gh1, np.swapaxes(w1.data, -1, -2)))

    return Tensor(out_data, (x, w1, b1, w2, b2), backward)


def attention_core(q: Tensor, k: Tensor, v: Tensor, num_heads: int) -> Tensor:
    """Fused multi-head scaled dot-product attention over (B, n, d) inputs.

    Splits merged heads, applies softmax(q k^T / sqrt(head_dim)) v per head,
    and re-merges.  One graph node with a hand-derived backward keeps the
    per-step buffer count low; the composed-op path in tests checks it.
    """
    b, n, d = q.shape
    if k.shape != (b, n, d) or v.shape != (b, n, d):
        raise ShapeError(f"attention_core: q {q.shape}, k {k.shape}, v {v.shape} must match")
    if d % num_heads:
        raise ShapeError(f"attention_core: {num_heads} heads do not divide dim {d}")
    hd = d // num_heads
    scale = 1.0 / math.sqrt(hd)

    def to_heads(t: np.ndarray) -> np.ndarray:
        return t.reshape(b, n, num_heads, hd).transpose(0, 2, 1, 3)

    qh, kh, vh = to_heads(q.data), to_heads(k.data), to_heads(v.data)
    scores = np.matmul(qh, kh.swapaxes(-1, -2))
    scores *= scale
    if not np.isfinite(scores).all():
        raise ValueError("attention scores contain non-finite values")
    scores -= scores.max(axis=-1, keepdims=True)
    attn = np.exp(scores)
    attn /= attn.sum(axis=-1, keepdims=True)
    ctx = np.matmul(attn, vh)
    out_data = ctx.transpose(0, 2, 1, 3).reshape(b, n, d)

    def backward(g):
        gctx = g.reshape(b, n, num_heads, hd).transpose(0, 2, 1, 3)
        if q.requires_grad or k.requires_grad:
            dattn = np.matmul(gctx, vh.swapaxes(-1, -2))
            ds = (dattn - (dattn * attn).sum(axis=-1, keepdims=True)) * attn
            ds *= scale
        if q.requires_grad:
            q.accumulate_grad(np.matmul(ds, kh).transpose(0, 2, 1, 3).reshape(b, n, d))
        if k.requires_grad:
            k.accumulate_grad(
                np.matmul(ds.swapaxes(-1, -2), qh).transpose(0, 2, 1, 3).reshape(b, n, d)
            )
        if v.requires_grad:
            v.accumulate_grad(
                np.matmul(attn.swapaxes(-1, -2), gctx).transpose(0, 2, 1, 3).reshape(b, n, d)
            )

    return Tensor(out_data, (q, k, v), backward)


def sum_all(a: Tensor) -> Tensor:
    """Scalar sum of every element; the default scalarizing head."""

    def backward(g):
        a.accumulate_grad(np.broadcast_to(g, a.shape).copy())

    return Tensor(np.asarray(a.data.sum()), (a,), backward)


# ---------------------------------------------------------------------------
# losses


def mse_loss(pred: Tensor, target: np.ndarray) -> Tensor:
    """Mean over all elements of the squared difference."""
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"mse_loss: prediction {pred.shape} vs target {target.shape}")
    diff = pred.data - target
    out_data = np.asarray((diff**2).mean())

    def backward(g):
        pred.accumulate_grad(g * 2.0 * diff / diff.size)

    return Tensor(out_data, (pred,), backward)


_CE_CLAMP = 1e-12
_CE_ROW_SUM_TOL = 1e-4  # loose enough that finite-difference probes stay valid


def ce_loss(probs: Tensor, onehot: np.ndarray) -> Tensor:
    """Cross entropy against one-hot targets, mean over pixels.

    `probs` holds per-pixel probability rows on the last axis (any number
    of leading axes); `onehot` must be exactly one-hot.  The log is
    clamped at 1e-12.
    """
    onehot = np.asarray(onehot, dtype=np.float64)
    if probs.shape != onehot.shape:
        raise ShapeError(f"ce_loss: prediction {probs.shape} vs target {onehot.shape}")
    p = probs.data
    rows = int(np.prod(p.shape[:-1], dtype=np.int64))
    if np.abs(p.sum(axis=-1) - 1.0).max() > _CE_ROW_SUM_TOL:
        raise ValueError("ce_loss: prediction rows must sum to 1")
    if not (np.isin(onehot, (0.0, 1.0)).all() and np.abs(onehot.sum(axis=-1) - 1.0).max() == 0.0):
        raise ValueError("ce_loss: target must be one-hot")
    clamped = np.maximum(p, _CE_CLAMP)
    out_data = np.asarray(-(onehot * np.log(clamped)).sum() / rows)

    def backward(g):
        dp = np.where(p > _CE_CLAMP, -onehot / clamped, 0.0) / rows
        probs.accumulate_grad(g * dp)

    return Tensor(out_data, (probs,), backward)
