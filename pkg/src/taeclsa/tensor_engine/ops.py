"""Differentiable layer ops.

Sequence ops take ``(T, C)`` or batched ``(B, T, C)`` arrays; time is
always axis ``-2`` and features axis ``-1``. Each op computes its output
with numpy and registers a closure mapping the output gradient to one
gradient per input (``None`` for non-differentiable inputs).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from ..errors import (
    DegenerateBatchError,
    DimensionError,
    EmptySequenceError,
    InvalidRateError,
    LabelError,
    SequenceTooShortError,
    VocabularyError,
)
from .tensor import DTYPE, Tensor, as_tensor, record

ACTIVATIONS = ("relu", "tanh", "sigmoid", "linear")


def sigmoid(z: np.ndarray) -> np.ndarray:
    # tanh form never overflows
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _activate(z: np.ndarray, activation: str) -> np.ndarray:
    if activation == "relu":
        return np.maximum(z, 0.0)
    if activation == "tanh":
        return np.tanh(z)
    if activation == "sigmoid":
        return sigmoid(z)
    return z


def _activation_grad(y: np.ndarray, activation: str) -> Optional[np.ndarray]:
    """Derivative expressed through the activation's output."""
    if activation == "relu":
        return (y > 0).astype(DTYPE)
    if activation == "tanh":
        return 1.0 - y * y
    if activation == "sigmoid":
        return y * (1.0 - y)
    return None


def _check_activation(activation: str) -> None:
    if activation not in ACTIVATIONS:
        raise ValueError(f"unknown activation {activation!r}; expected one of {ACTIVATIONS}")


# ---------------------------------------------------------------- elementwise

def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape and b.size != 1 and a.size != 1:
        raise DimensionError(f"add: shapes {a.shape} and {b.shape} differ")

    def backward(g):
        ga = g if a.size == g.size else np.sum(g).reshape(a.shape)
        gb = g if b.size == g.size else np.sum(g).reshape(b.shape)
        return ga, gb

    return record(a.data + b.data, (a, b), backward)


def scale(a: Tensor, c: float) -> Tensor:
    return record(a.data * c, (a,), lambda g: (g * c,))


def activation(x: Tensor, kind: str) -> Tensor:
    _check_activation(kind)
    y = _activate(x.data, kind)
    dy = _activation_grad(y, kind)
    return record(y, (x,), lambda g: (g if dy is None else g * dy,))


def sum_squares(a: Tensor) -> Tensor:
    return record(np.sum(a.data * a.data), (a,), lambda g: (2.0 * g * a.data,))


def weighted_sum(a: Tensor, weights: np.ndarray) -> Tensor:
    """Scalar ``sum(a * weights)`` with constant weights."""
    w = np.asarray(weights, dtype=DTYPE)
    if w.shape != a.shape:
        raise DimensionError(f"weighted_sum: weights {w.shape} vs tensor {a.shape}")
    return record(np.sum(a.data * w), (a,), lambda g: (g * w,))


# ---------------------------------------------------------------- dense

def dense(x: Tensor, W: Tensor, b: Optional[Tensor] = None, activation: str = "linear") -> Tensor:
    """``act(x @ W + b)`` applied over the last axis of ``x``."""
    _check_activation(activation)
    if W.ndim != 2 or x.shape[-1] != W.shape[0] or (b is not None and b.shape != (W.shape[1],)):
        bshape = None if b is None else b.shape
        raise DimensionError(f"dense: x{x.shape} incompatible with W{W.shape}, b{bshape}")
    z = x.data @ W.data
    if b is not None:
        z = z + b.data
    y = _activate(z, activation)

    def backward(g):
        dy = _activation_grad(y, activation)
        gz = g if dy is None else g * dy
        gz2 = gz.reshape(-1, W.shape[1])
        gW = x.data.reshape(-1, W.shape[0]).T @ gz2
        gb = gz2.sum(axis=0) if b is not None else None
        return gz @ W.data.T, gW, gb

    return record(y, (x, W, b), backward)


# ---------------------------------------------------------------- conv / pool

def conv1d(x: Tensor, filters: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """Valid (no padding) stride-1 convolution; ``filters`` is ``(K, Cin, F)``."""
    if filters.ndim != 3:
        raise DimensionError(f"conv1d: filters must be (K, Cin, F), got {filters.shape}")
    K, cin, F = filters.shape
    if x.ndim < 2 or x.shape[-1] != cin:
        raise DimensionError(f"conv1d: input {x.shape} has wrong channel count for filters {filters.shape}")
    if b is not None and b.shape != (F,):
        raise DimensionError(f"conv1d: bias {b.shape} does not match {F} filters")
    T = x.shape[-2]
    if T < K:
        raise SequenceTooShortError(f"conv1d: sequence length {T} shorter than kernel {K}")
    t_out = T - K + 1
    lead = x.shape[:-2]
    cols = np.stack([x.data[..., k:k + t_out, :] for k in range(K)], axis=-2)
    cols = cols.reshape(*lead, t_out, K * cin)
    wmat = filters.data.reshape(K * cin, F)
    y = cols @ wmat
    if b is not None:
        y = y + b.data

    def backward(g):
        g2 = g.reshape(-1, F)
        gW = (cols.reshape(-1, K * cin).T @ g2).reshape(K, cin, F)
        gb = g2.sum(axis=0) if b is not None else None
        gcols = (g @ wmat.T).reshape(*lead, t_out, K, cin)
        gx = np.zeros_like(x.data)
        for k in range(K):
            gx[..., k:k + t_out, :] += gcols[..., k, :]
        return gx, gW, gb

    return record(y, (x, filters, b), backward)


def maxpool1d(x: Tensor, pool: int = 2) -> Tensor:
    """Non-overlapping max pooling over time; a trailing remainder is dropped.

    Ties route the gradient to the first index of the window.
    """
    T = x.shape[-2]
    if T < pool:
        raise SequenceTooShortError(f"maxpool1d: sequence length {T} shorter than pool {pool}")
    t_out = T // pool
    lead, F = x.shape[:-2], x.shape[-1]
    win = x.data[..., : t_out * pool, :].reshape(*lead, t_out, pool, F)
    idx = np.argmax(win, axis=-2)[..., None, :]
    y = np.take_along_axis(win, idx, axis=-2)[..., 0, :]

    def backward(g):
        gwin = np.zeros_like(win)
        np.put_along_axis(gwin, idx, g[..., None, :], axis=-2)
        gx = np.zeros_like(x.data)
        gx[..., : t_out * pool, :] = gwin.reshape(*lead, t_out * pool, F)
        return (gx,)

    return record(y, (x,), backward)


# ---------------------------------------------------------------- normalisation / dropout

@dataclass
class BatchNormStats:
    mean: np.ndarray
    var: np.ndarray
    momentum: float = 0.9
    eps: float = 1e-5

    @classmethod
    def fresh(cls, features: int, momentum: float = 0.9, eps: float = 1e-5) -> "BatchNormStats":
        return cls(np.zeros(features, dtype=DTYPE), np.ones(features, dtype=DTYPE), momentum, eps)


def batchnorm1d(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    stats: BatchNormStats,
    mode: str = "train",
) -> Tensor:
    """Per-feature normalisation over every axis except the last.

    In train mode batch statistics are used and ``stats`` is updated as
    ``running = momentum * running + (1 - momentum) * batch``.
    """
    F = x.shape[-1]
    if gamma.shape != (F,) or beta.shape != (F,):
        raise DimensionError(f"batchnorm1d: gamma{gamma.shape}/beta{beta.shape} vs {F} features")
    axes = tuple(range(x.ndim - 1))
    eps = stats.eps
    if mode == "train":
        n = x.size // F
        if n < 2:
            raise DegenerateBatchError(f"batchnorm1d: need at least 2 timesteps in train mode, got {n}")
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        inv = 1.0 / np.sqrt(var + eps)
        xhat = (x.data - mu) * inv
        m = stats.momentum
        stats.mean = m * stats.mean + (1.0 - m) * mu
        stats.var = m * stats.var + (1.0 - m) * var

        def backward(g):
            gxhat = g * gamma.data
            gx = inv / n * (
                n * gxhat - gxhat.sum(axis=axes) - xhat * (gxhat * xhat).sum(axis=axes)
            )
            return gx, (g * xhat).sum(axis=axes), g.sum(axis=axes)
    elif mode == "infer":
        inv = 1.0 / np.sqrt(stats.var + eps)
        xhat = (x.data - stats.mean) * inv

        def backward(g):
            return g * gamma.data * inv, (g * xhat).sum(axis=axes), g.sum(axis=axes)
    else:
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
    return record(gamma.data * xhat + beta.data, (x, gamma, beta), backward)


def dropout(
    x: Tensor,
    rate: float = 0.2,
    mode: str = "train",
    rng: Union[int, np.random.Generator, None] = None,
) -> Tensor:
    """Inverted dropout. Identity (same tensor) in infer mode or at rate 0."""
    if not 0.0 <= rate < 1.0:
        raise InvalidRateError(f"dropout rate must be in [0, 1), got {rate}")
    if mode == "infer" or rate == 0.0:
        return x
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return record(x.data * mask, (x,), lambda g: (g * mask,))


# ---------------------------------------------------------------- recurrent

def lstm_forward(
    x: Tensor,
    kernel: Tensor,
    recurrent: Tensor,
    bias: Tensor,
) -> Tensor:
    """Single-layer LSTM returning every hidden state, ``h0 = c0 = 0``.

    ``kernel`` is ``(in, 4H)``, ``recurrent`` is ``(H, 4H)``, gate blocks
    ordered input, forget, candidate, output. Backward is full-length BPTT.
    """
    H = recurrent.shape[0]
    if recurrent.shape != (H, 4 * H) or kernel.ndim != 2 or kernel.shape[1] != 4 * H:
        raise DimensionError(f"lstm: kernel{kernel.shape}/recurrent{recurrent.shape} are not (in,4H)/(H,4H)")
    if x.shape[-1] != kernel.shape[0] or bias.shape != (4 * H,):
        raise DimensionError(f"lstm: input {x.shape} / bias {bias.shape} incompatible with kernel {kernel.shape}")
    squeeze = x.ndim == 2
    xs = x.data[None] if squeeze else x.data
    B, T, _ = xs.shape
    if T == 0:
        raise EmptySequenceError("lstm: empty input sequence")

    U = recurrent.data
    pre = xs @ kernel.data + bias.data
    gates = np.empty((B, T, 4 * H))
    cells = np.empty((B, T, H))
    tanh_c = np.empty((B, T, H))
    hs = np.empty((B, T, H))
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    for t in range(T):
        z = pre[:, t] + h @ U
        a = gates[:, t]
        a[:, : 2 * H] = sigmoid(z[:, : 2 * H])
        a[:, 2 * H: 3 * H] = np.tanh(z[:, 2 * H: 3 * H])
        a[:, 3 * H:] = sigmoid(z[:, 3 * H:])
        c = a[:, H: 2 * H] * c + a[:, :H] * a[:, 2 * H: 3 * H]
        cells[:, t] = c
        tanh_c[:, t] = np.tanh(c)
        h = a[:, 3 * H:] * tanh_c[:, t]
        hs[:, t] = h

    def backward(g):
        gs = g[None] if squeeze else g
        dz = np.empty_like(gates)
        dh_next = np.zeros((B, H))
        dc_next = np.zeros((B, H))
        for t in range(T - 1, -1, -1):
            a = gates[:, t]
            i, f, gg, o = a[:, :H], a[:, H: 2 * H], a[:, 2 * H: 3 * H], a[:, 3 * H:]
            tc = tanh_c[:, t]
            c_prev = cells[:, t - 1] if t > 0 else np.zeros((B, H))
            dh = gs[:, t] + dh_next
            dc = dh * o * (1.0 - tc * tc) + dc_next
            d = dz[:, t]
            d[:, :H] = dc * gg * i * (1.0 - i)
            d[:, H: 2 * H] = dc * c_prev * f * (1.0 - f)
            d[:, 2 * H: 3 * H] = dc * i * (1.0 - gg * gg)
            d[:, 3 * H:] = dh * tc * o * (1.0 - o)
            dc_next = dc * f
            dh_next = d @ U.T
        h_prev = np.concatenate([np.zeros((B, 1, H)), hs[:, :-1]], axis=1)
        dz2 = dz.reshape(-1, 4 * H)
        gU = h_prev.reshape(-1, H).T @ dz2
        gW = xs.reshape(-1, xs.shape[-1]).T @ dz2
        gx = dz @ kernel.data.T
        return (gx[0] if squeeze else gx), gW, gU, dz2.sum(axis=0)

    return record(hs[0] if squeeze else hs, (x, kernel, recurrent, bias), backward)


# ---------------------------------------------------------------- embedding

def embedding_lookup(ids, E: Tensor) -> Tensor:
    """Row gather ``E[ids]``; the backward pass scatter-adds into ``E``."""
    ids = np.asarray(ids)
    if ids.size and not np.issubdtype(ids.dtype, np.integer):
        raise VocabularyError(f"token ids must be integers, got dtype {ids.dtype}")
    ids = ids.astype(np.int64)
    V, D = E.shape
    bad = (ids < 0) | (ids >= V)
    if bad.any():
        raise VocabularyError(f"token id {int(ids[bad][0])} out of range for vocabulary of size {V}")

    def backward(g):
        gE = np.zeros_like(E.data)
        np.add.at(gE, ids.ravel(), g.reshape(-1, D))
        return (gE,)

    return record(E.data[ids], (E,), backward)


# ---------------------------------------------------------------- attention

def softmax_rows(S: Tensor) -> Tensor:
    z = S.data - S.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)
    return record(y, (S,), lambda g: (y * (g - (g * y).sum(axis=-1, keepdims=True)),))


def _t(a: np.ndarray) -> np.ndarray:
    return np.swapaxes(a, -1, -2)


def attention(Q: Tensor, K: Tensor, V: Tensor) -> tuple[Tensor, np.ndarray]:
    """Scaled dot-product attention, returning ``(Z, A)``.

    ``S = Q K^T / sqrt(d)``, ``A = softmax(S)`` row-wise, ``Z = A V``.
    """
    if Q.shape != K.shape or Q.shape[:-1] != V.shape[:-1] or Q.ndim < 2:
        raise DimensionError(f"attention: Q{Q.shape}, K{K.shape}, V{V.shape} do not conform")
    d = Q.shape[-1]
    scale_ = 1.0 / np.sqrt(d)
    S = (Q.data @ _t(K.data)) * scale_
    S = S - S.max(axis=-1, keepdims=True)
    e = np.exp(S)
    A = e / e.sum(axis=-1, keepdims=True)
    Z = A @ V.data

    def backward(g):
        gA = g @ _t(V.data)
        gV = _t(A) @ g
        gS = A * (gA - (gA * A).sum(axis=-1, keepdims=True)) * scale_
        return gS @ K.data, _t(gS) @ Q.data, gV

    return record(Z, (Q, K, V), backward), A


def self_attention(
    X: Tensor,
    Wq: Optional[Tensor] = None,
    Wk: Optional[Tensor] = None,
    Wv: Optional[Tensor] = None,
) -> tuple[Tensor, np.ndarray]:
    """Self-attention over the rows of ``X``.

    Without projections query, key and value are ``X`` itself; passing
    all three matrices gives the learnable-projection variant.
    """
    if Wq is None and Wk is None and Wv is None:
        return attention(X, X, X)
    if Wq is None or Wk is None or Wv is None:
        raise ValueError("self_attention: pass all of Wq, Wk, Wv or none of them")
    return attention(dense(X, Wq), dense(X, Wk), dense(X, Wv))


# ---------------------------------------------------------------- temporal pooling

def mean_time(x: Tensor) -> Tensor:
    T = x.shape[-2]
    y = x.data.mean(axis=-2)
    return record(y, (x,), lambda g: (np.repeat(g[..., None, :] / T, T, axis=-2),))


def last_time(x: Tensor) -> Tensor:
    def backward(g):
        gx = np.zeros_like(x.data)
        gx[..., -1, :] = g
        return (gx,)

    return record(x.data[..., -1, :].copy(), (x,), backward)


def max_time(x: Tensor) -> Tensor:
    idx = np.argmax(x.data, axis=-2)[..., None, :]
    y = np.take_along_axis(x.data, idx, axis=-2)[..., 0, :]

    def backward(g):
        gx = np.zeros_like(x.data)
        np.put_along_axis(gx, idx, g[..., None, :], axis=-2)
        return (gx,)

    return record(y, (x,), backward)


# ---------------------------------------------------------------- losses

def mse_loss(pred: Tensor, truth) -> Tensor:
    t = truth.data if isinstance(truth, Tensor) else np.asarray(truth, dtype=DTYPE)
    if pred.shape != t.shape:
        raise DimensionError(f"mse_loss: prediction {pred.shape} vs truth {t.shape}")
    diff = pred.data - t
    n = diff.size
    return record(np.mean(diff * diff), (pred,), lambda g: (g * 2.0 * diff / n,))


def _check_labels(labels, n: int, classes: int) -> np.ndarray:
    y = np.asarray(labels)
    if y.shape != (n,):
        raise DimensionError(f"expected {n} labels, got shape {y.shape}")
    y = y.astype(np.int64)
    bad = (y < 0) | (y >= classes)
    if bad.any():
        raise LabelError(f"label {int(y[bad][0])} outside [0, {classes})")
    return y


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean ``-log softmax(logits)[label]`` over rows."""
    if logits.ndim != 2:
        raise DimensionError(f"cross_entropy: logits must be (n, classes), got {logits.shape}")
    n, k = logits.shape
    y = _check_labels(labels, n, k)
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    loss = -logp[np.arange(n), y].mean()

    def backward(g):
        p = np.exp(logp)
        p[np.arange(n), y] -= 1.0
        return (g * p / n,)

    return record(loss, (logits,), backward)


def binary_cross_entropy(logits: Tensor, targets) -> Tensor:
    """Mean element-wise sigmoid cross-entropy (multi-label output head)."""
    t = np.asarray(targets, dtype=DTYPE)
    if t.shape != logits.shape:
        raise DimensionError(f"binary_cross_entropy: logits {logits.shape} vs targets {t.shape}")
    z = logits.data
    loss = np.mean(np.maximum(z, 0) - z * t + np.log1p(np.exp(-np.abs(z))))
    n = z.size
    return record(loss, (logits,), lambda g: (g * (sigmoid(z) - t) / n,))
