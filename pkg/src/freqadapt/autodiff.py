"""Minimal reverse-mode gradient tape over float64 numpy arrays.

The operator set is closed and enumerated: exactly the ops the training
stack needs (conv, batch norm, relu, pooling, concat, sigmoid, Hadamard,
fully-connected, softmax cross-entropy, dropout, gradient reversal, and
the channelwise-l2 consistency loss). Each op builds a `Tensor` whose
backward closure scatters the upstream gradient into its parents;
`backward()` runs the closures in reverse topological order.

Ops with non-differentiable switches (relu sign, channel-max argmax) can
append their switch pattern to an optional ``trace`` list; the finite-
difference checker uses mismatching traces to detect kink crossings.
"""

from __future__ import annotations

import numpy as np

BN_EPS = 1e-5


class Tensor:
    __slots__ = ("value", "grad", "_parents", "_backward")

    def __init__(self, value, parents=(), backward=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.value.shape

    def _acc(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        self.grad += g


def backward(loss: Tensor) -> None:
    """Accumulate gradients of a scalar loss into every reachable tensor."""
    if loss.value.ndim != 0:
        raise ValueError("backward expects a scalar loss")
    topo: list[Tensor] = []
    seen: set[int] = set()

    def visit(t: Tensor) -> None:
        if id(t) in seen:
            return
        seen.add(id(t))
        for p in t._parents:
            visit(p)
        topo.append(t)

    visit(loss)
    loss.grad = np.ones_like(loss.value)
    for t in reversed(topo):
        if t._backward is not None:
            t._backward()


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, (gs, ss) in enumerate(zip(g.shape, shape)):
        if ss == 1 and gs != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def add(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.value + b.value, (a, b))

    def back():
        a._acc(_unbroadcast(out.grad, a.value.shape))
        b._acc(_unbroadcast(out.grad, b.value.shape))

    out._backward = back
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.value * b.value, (a, b))

    def back():
        a._acc(_unbroadcast(out.grad * b.value, a.value.shape))
        b._acc(_unbroadcast(out.grad * a.value, b.value.shape))

    out._backward = back
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.value @ b.value, (a, b))

    def back():
        a._acc(out.grad @ b.value.T)
        b._acc(a.value.T @ out.grad)

    out._backward = back
    return out


def relu(x: Tensor, trace: list | None = None) -> Tensor:
    mask = x.value > 0.0
    if trace is not None:
        trace.append(mask)
    out = Tensor(np.where(mask, x.value, 0.0), (x,))

    def back():
        x._acc(out.grad * mask)

    out._backward = back
    return out


def sigmoid(x: Tensor) -> Tensor:
    s = 1.0 / (1.0 + np.exp(-x.value))
    out = Tensor(s, (x,))

    def back():
        x._acc(out.grad * s * (1.0 - s))

    out._backward = back
    return out


def _conv_plan(in_tail: tuple[int, ...], kshape: tuple[int, ...], stride: int):
    """Gather plan for im2col: flat indices into one padded sample (C, *Spad).

    Cached per (shape, kernel, stride) because the finite-difference
    checker re-runs identical forwards tens of thousands of times.
    """
    key = (in_tail, kshape, stride)
    plan = _CONV_PLANS.get(key)
    if plan is not None:
        return plan
    c = in_tail[0]
    spatial = in_tail[1:]
    nsp = len(kshape)
    pads = tuple((k - 1) // 2 for k in kshape)
    padded = tuple(s + 2 * p for s, p in zip(spatial, pads))
    out_sp = tuple(s if stride == 1 else s // stride for s in spatial)
    # flat offset of every (c, *kernel offset) within one padded sample
    strides_p = np.cumprod((1,) + padded[::-1])[::-1]  # row-major strides of (*padded,)
    base = np.arange(c)[:, None] * int(np.prod(padded))
    koff = np.zeros((1,), dtype=np.int64)
    for j, k in enumerate(kshape):
        koff = (koff[:, None] + np.arange(k) * strides_p[j + 1]).ravel()
    cell = (base + koff).ravel()  # (C*K,)
    # flat offset of every output position's top-left corner
    pos = np.zeros((1,), dtype=np.int64)
    for j, o in enumerate(out_sp):
        pos = (pos[:, None] + np.arange(o) * stride * strides_p[j + 1]).ravel()
    gather = pos[:, None] + cell[None, :]  # (P, C*K)
    plan = (pads, padded, out_sp, gather)
    _CONV_PLANS[key] = plan
    return plan


_CONV_PLANS: dict = {}


def conv(x: Tensor, w: Tensor, b: Tensor, stride: int = 1) -> Tensor:
    """N-D 'same' convolution with odd kernels and optional stride.

    x: (N, C, *S); w: (O, C, *K) with odd K per axis; b: (O,).
    A strided block outputs floor(S/stride) per axis.
    """
    kshape = w.value.shape[2:]
    nsp = len(kshape)
    if x.value.ndim != nsp + 2:
        raise ValueError(f"input rank {x.value.ndim} vs kernel rank {nsp + 2}")
    n, c = x.value.shape[:2]
    spatial = x.value.shape[2:]
    out_sp = tuple(s if stride == 1 else s // stride for s in spatial)
    if any(s < 1 for s in out_sp):
        raise ValueError(f"spatial dims {spatial} too small for stride {stride}")
    pads, padded, out_sp, gather = _conv_plan(x.value.shape[1:], kshape, stride)
    xp = np.zeros((n, c) + padded)
    core = (slice(None), slice(None)) + tuple(
        slice(p, p + s) for p, s in zip(pads, spatial)
    )
    xp[core] = x.value
    cols = np.take(xp.reshape(n, -1), gather, axis=1).reshape(
        n * gather.shape[0], gather.shape[1]
    )
    p_total = gather.shape[0]
    ck = gather.shape[1]
    o_ch = w.value.shape[0]
    w2 = w.value.reshape(o_ch, ck)
    out2 = cols @ w2.T + b.value  # (N*P, O)
    out_val = np.moveaxis(out2.reshape(n, p_total, o_ch), 2, 1).reshape(
        (n, o_ch) + out_sp
    )
    out = Tensor(out_val, (x, w, b))

    def back():
        g2 = np.ascontiguousarray(
            np.moveaxis(out.grad.reshape(n, o_ch, p_total), 1, 2)
        ).reshape(n * p_total, o_ch)
        w._acc((g2.T @ cols).reshape(w.value.shape))
        b._acc(g2.sum(axis=0))
        dcols = (g2 @ w2).reshape((n,) + out_sp + (c,) + kshape)
        dcols = np.moveaxis(dcols, 1 + nsp, 1)  # (N, C, *Sout, *K)
        dxp = np.zeros_like(xp)
        base = (slice(None), slice(None))
        for idx in np.ndindex(*kshape):
            region = tuple(
                slice(i, i + stride * oo, stride) for i, oo in zip(idx, out_sp)
            )
            dxp[base + region] += dcols[base + (slice(None),) * nsp + idx]
        x._acc(dxp[core])

    out._backward = back
    return out


def batchnorm_train(
    x: Tensor, gamma: Tensor, beta: Tensor, eps: float = BN_EPS
) -> tuple[Tensor, np.ndarray, np.ndarray]:
    """Per-channel batch norm using batch statistics (biased variance).

    Returns (out, batch_mean, batch_var) so the caller can update running
    statistics outside the graph.
    """
    axes = (0,) + tuple(range(2, x.value.ndim))
    mean = x.value.mean(axis=axes, keepdims=True)
    var = np.maximum((x.value * x.value).mean(axis=axes, keepdims=True) - mean * mean, 0.0)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.value - mean) * inv
    shape_c = (1, x.value.shape[1]) + (1,) * (x.value.ndim - 2)
    g = gamma.value.reshape(shape_c)
    out = Tensor(g * xhat + beta.value.reshape(shape_c), (x, gamma, beta))

    def back():
        go = out.grad
        gamma._acc((go * xhat).sum(axis=axes))
        beta._acc(go.sum(axis=axes))
        gmean = go.mean(axis=axes, keepdims=True)
        gxhat_mean = (go * xhat).mean(axis=axes, keepdims=True)
        x._acc(g * inv * (go - gmean - xhat * gxhat_mean))

    out._backward = back
    return out, mean.squeeze(), var.squeeze()


def batchnorm_eval(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    eps: float = BN_EPS,
) -> Tensor:
    shape_c = (1, x.value.shape[1]) + (1,) * (x.value.ndim - 2)
    inv = 1.0 / np.sqrt(running_var.reshape(shape_c) + eps)
    xhat = (x.value - running_mean.reshape(shape_c)) * inv
    g = gamma.value.reshape(shape_c)
    out = Tensor(g * xhat + beta.value.reshape(shape_c), (x, gamma, beta))
    axes = (0,) + tuple(range(2, x.value.ndim))

    def back():
        gamma._acc((out.grad * xhat).sum(axis=axes))
        beta._acc(out.grad.sum(axis=axes))
        x._acc(out.grad * g * inv)

    out._backward = back
    return out


def channel_max(x: Tensor, trace: list | None = None) -> Tensor:
    """Max over the channel axis, keepdims; ties route to the first index."""
    idx = np.argmax(x.value, axis=1)
    if trace is not None:
        trace.append(idx)
    c = x.value.shape[1]
    mask = idx[:, None, ...] == np.arange(c).reshape((c,) + (1,) * (x.value.ndim - 2))
    out = Tensor(np.max(x.value, axis=1, keepdims=True), (x,))

    def back():
        x._acc(out.grad * mask)

    out._backward = back
    return out


def channel_mean(x: Tensor) -> Tensor:
    c = x.value.shape[1]
    out = Tensor(x.value.mean(axis=1, keepdims=True), (x,))

    def back():
        x._acc(out.grad / c)

    out._backward = back
    return out


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    ca = a.value.shape[1]
    out = Tensor(np.concatenate([a.value, b.value], axis=1), (a, b))

    def back():
        a._acc(out.grad[:, :ca])
        b._acc(out.grad[:, ca:])

    out._backward = back
    return out


def concat_batch(a: Tensor, b: Tensor) -> Tensor:
    na = a.value.shape[0]
    out = Tensor(np.concatenate([a.value, b.value], axis=0), (a, b))

    def back():
        a._acc(out.grad[:na])
        b._acc(out.grad[na:])

    out._backward = back
    return out


def global_mean_pool(x: Tensor) -> Tensor:
    """(N, C, *S) -> (N, C) mean over all spatial positions."""
    axes = tuple(range(2, x.value.ndim))
    p = int(np.prod(x.value.shape[2:]))
    nsp = x.value.ndim - 2
    out = Tensor(x.value.mean(axis=axes), (x,))

    def back():
        x._acc(out.grad.reshape(out.grad.shape + (1,) * nsp) / p)

    out._backward = back
    return out


def dropout(x: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; draws one mask from ``rng`` at call time."""
    if not (0.0 <= rate < 1.0):
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    mask = (rng.random(x.value.shape) >= rate) / (1.0 - rate)
    out = Tensor(x.value * mask, (x,))

    def back():
        x._acc(out.grad * mask)

    out._backward = back
    return out


def grad_reverse(x: Tensor, factor: float) -> Tensor:
    """Identity forward; multiplies the upstream gradient by -factor."""
    if factor < 0:
        raise ValueError(f"reversal factor must be >= 0, got {factor}")
    out = Tensor(x.value, (x,))

    def back():
        x._acc(-factor * out.grad)

    out._backward = back
    return out


def softmax_cross_entropy(logits: Tensor, labels: np.ndarray) -> tuple[Tensor, np.ndarray]:
    """Mean negative log softmax probability of the integer labels.

    Also returns the softmax probabilities as a plain array for scoring.
    """
    labels = np.asarray(labels)
    n, c = logits.value.shape
    if labels.shape != (n,):
        raise ValueError(f"labels shape {labels.shape} vs batch {n}")
    if labels.min() < 0 or labels.max() >= c:
        raise ValueError(f"labels must lie in [0, {c})")
    shifted = logits.value - logits.value.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - logz
    probs = np.exp(logp)
    loss = Tensor(-logp[np.arange(n), labels].mean(), (logits,))

    def back():
        d = probs.copy()
        d[np.arange(n), labels] -= 1.0
        logits._acc(d * (loss.grad / n))

    loss._backward = back
    return loss, probs


def channelwise_l2_mean(a: Tensor, b: Tensor) -> Tensor:
    """Mean over batch and spatial positions of the channelwise l2 difference."""
    if a.value.shape != b.value.shape:
        raise ValueError(f"shape mismatch: {a.value.shape} vs {b.value.shape}")
    d = a.value - b.value
    r = np.sqrt((d * d).sum(axis=1))  # (N, *S)
    denom = d.shape[0] * int(np.prod(d.shape[2:]))
    out = Tensor(r.sum() / denom, (a, b))

    def back():
        scale = out.grad / denom
        dd = d * (scale / np.maximum(r, 1e-30))[:, None]
        a._acc(dd)
        b._acc(-dd)

    out._backward = back
    return out


def add_weighted(terms: list[tuple[float, Tensor]]) -> Tensor:
    """Weighted sum of scalar tensors."""
    val = sum(c * t.value for c, t in terms)
    out = Tensor(val, tuple(t for _, t in terms))

    def back():
        for c, t in terms:
            t._acc(c * out.grad)

    out._backward = back
    return out
