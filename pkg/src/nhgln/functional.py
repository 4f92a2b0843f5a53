"""Activation, normalization and loss operations with fused backward rules."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .autograd import DTYPE, Tensor, as_tensor, mul, tsum
from .errors import ContractError, DimensionError, LabelError

_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)

LN_EPS = 1e-5
BN_EPS = 1e-5
BN_MOMENTUM = 0.9


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return Tensor._make(np.maximum(x.data, 0.0), (x,), lambda g: (g * mask,), "relu")


def normal_cdf(x):
    """Standard normal CDF (scipy's ``ndtr`` evaluates it through erf/erfc)."""
    return ndtr(np.asarray(x, dtype=DTYPE))


def gelu(x) -> Tensor:
    """Exact GELU, ``x * Phi(x)`` with the Gaussian CDF computed from erf."""
    x = as_tensor(x)
    cdf = normal_cdf(x.data)

    def bw(g):
        d = x.data * x.data
        d *= -0.5
        np.exp(d, out=d)
        d *= _INV_SQRT_2PI
        d *= x.data
        d += cdf
        d *= g
        return (d,)

    return Tensor._make(x.data * cdf, (x,), bw, "gelu")


def softmax_rows(x) -> Tensor:
    """Softmax over the last axis, max-shifted for stability."""
    x = as_tensor(x)
    s = x.data - x.data.max(axis=-1, keepdims=True)
    np.exp(s, out=s)
    s /= s.sum(axis=-1, keepdims=True)

    def bw(g):
        gs = g * s
        gs -= s * gs.sum(axis=-1, keepdims=True)
        return (gs,)

    return Tensor._make(s, (x,), bw, "softmax")


def log_softmax_rows(x) -> Tensor:
    """``log(softmax_rows(x))`` computed as ``x - logsumexp(x)``."""
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))

    def bw(g):
        return (g - np.exp(out) * g.sum(axis=-1, keepdims=True),)

    return Tensor._make(out, (x,), bw, "log_softmax")


def layer_norm(x, gain, bias, eps: float = LN_EPS) -> Tensor:
    """Normalize the last axis to zero mean, unit variance, then apply gain and bias."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    d = x.shape[-1]
    if d < 2:
        raise DimensionError(f"layer_norm needs a last axis of size >= 2, got {d}")
    if gain.shape != (d,) or bias.shape != (d,):
        raise DimensionError(f"layer_norm: gain {gain.shape} / bias {bias.shape} do not match width {d}")
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = centered * rstd
    out = xhat * gain.data + bias.data
    lead = tuple(range(x.ndim - 1))

    def bw(g):
        gx = None
        if x.requires_grad:
            dxhat = g * gain.data
            gx = rstd * (
                dxhat
                - dxhat.mean(axis=-1, keepdims=True)
                - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
            )
        ggain = (g * xhat).sum(axis=lead) if gain.requires_grad else None
        gbias = g.sum(axis=lead) if bias.requires_grad else None
        return gx, ggain, gbias

    return Tensor._make(out, (x, gain, bias), bw, "layer_norm")


@dataclass
class BatchNormState:
    """Running statistics for one batch-norm site, one value per entry."""

    mean: np.ndarray
    var: np.ndarray
    momentum: float = BN_MOMENTUM
    eps: float = BN_EPS

    @classmethod
    def fresh(cls, shape) -> "BatchNormState":
        return cls(np.zeros(shape, dtype=DTYPE), np.ones(shape, dtype=DTYPE))


def batch_norm(x, state: BatchNormState, mode: str = "train", update_stats: bool = True) -> Tensor:
    """Normalize every entry of ``x[1:]`` across the leading (batch) axis.

    In ``"train"`` mode batch statistics are used and, when ``update_stats``
    is set, folded into ``state`` with ``running = m*running + (1-m)*batch``.
    In ``"eval"`` mode the running statistics are used instead.
    """
    x = as_tensor(x)
    if x.shape[1:] != state.mean.shape:
        raise DimensionError(f"batch_norm: input {x.shape} does not match state {state.mean.shape}")
    if mode == "eval":
        scale = 1.0 / np.sqrt(state.var + state.eps)
        out = (x.data - state.mean) * scale
        return Tensor._make(out, (x,), lambda g: (g * scale,), "batch_norm_eval")
    if mode != "train":
        raise ContractError(f"batch_norm mode must be 'train' or 'eval', got {mode!r}")
    b = x.shape[0]
    if b < 2:
        raise ContractError(f"batch_norm in train mode needs a batch of at least 2, got {b}")
    mu = x.data.mean(axis=0)
    centered = x.data - mu
    var = (centered * centered).mean(axis=0)
    rstd = 1.0 / np.sqrt(var + state.eps)
    xhat = centered * rstd
    if update_stats:
        m = state.momentum
        state.mean = m * state.mean + (1.0 - m) * mu
        state.var = m * state.var + (1.0 - m) * var

    def bw(g):
        return (rstd * (g - g.mean(axis=0) - xhat * (g * xhat).mean(axis=0)),)

    return Tensor._make(xhat, (x,), bw, "batch_norm")


def cross_entropy_logits(logits, labels) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under softmax(logits)."""
    logits = as_tensor(logits)
    labels = np.asarray(labels)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise DimensionError(f"cross_entropy: logits {logits.shape} vs labels {labels.shape}")
    n, c = logits.shape
    bad = np.flatnonzero((labels < 0) | (labels >= c))
    if bad.size:
        i = int(bad[0])
        raise LabelError(f"label {int(labels[i])} at index {i} is outside [0, {c})")
    labels = labels.astype(np.int64)
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - logz
    rows = np.arange(n)
    loss = -logp[rows, labels].mean()

    def bw(g):
        p = np.exp(logp)
        p[rows, labels] -= 1.0
        return (g * p / n,)

    return Tensor._make(np.asarray(loss, dtype=DTYPE), (logits,), bw, "cross_entropy")


def frobenius_sq(x) -> Tensor:
    """Sum of squared entries."""
    x = as_tensor(x)
    return tsum(mul(x, x))


def row_softmax_np(a: np.ndarray) -> np.ndarray:
    """Plain-array softmax over the last axis, for constants outside the graph."""
    shifted = a - a.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


__all__ = [
    "BatchNormState",
    "batch_norm",
    "cross_entropy_logits",
    "frobenius_sq",
    "gelu",
    "layer_norm",
    "log_softmax_rows",
    "normal_cdf",
    "relu",
    "row_softmax_np",
    "softmax_rows",
]
