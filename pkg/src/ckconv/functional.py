"""Fused differentiable layers and losses built on :mod:`ckconv.tensor`."""
from __future__ import annotations

import numpy as np

from .errors import DataError, DimensionError, SingularityError
from .tensor import Tensor, as_tensor, make_result

LAYER_NORM_EPS = 1e-5


def weight_norm(v, g) -> Tensor:
    """Rows of ``v`` rescaled to norm ``g``: ``w_i = g_i * v_i / ||v_i||``.

    ``v`` has shape (rows, cols) and ``g`` shape (rows,).
    """
    v, g = as_tensor(v), as_tensor(g)
    if v.ndim != 2 or g.shape != (v.shape[0],):
        raise DimensionError(f"weight_norm: v {v.shape} needs gains of shape ({v.shape[0]},), got {g.shape}")
    norms = np.sqrt(np.einsum("ij,ij->i", v.data, v.data))
    if np.any(norms == 0.0):
        rows = np.flatnonzero(norms == 0.0).tolist()
        raise SingularityError(f"weight_norm: zero-norm direction rows {rows}")
    unit = v.data / norms[:, None]
    out = g.data[:, None] * unit

    def bw(gw):
        dg = np.einsum("ij,ij->i", gw, unit)
        dv = (g.data / norms)[:, None] * (gw - unit * dg[:, None])
        return dv, dg

    return make_result(out, "weight_norm", (v, g), bw)


def layer_norm(x, gain, bias, eps: float = LAYER_NORM_EPS) -> Tensor:
    """Normalize ``x`` of shape (B, C, T) over the channel axis at every position."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    if x.ndim != 3:
        raise DimensionError(f"layer_norm expects (batch, channel, time), got {x.shape}")
    c = x.shape[1]
    if gain.shape != (c,) or bias.shape != (c,):
        raise DimensionError(f"layer_norm: gain/bias must have shape ({c},)")
    mu = x.data.mean(axis=1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    out = xhat * gain.data[None, :, None] + bias.data[None, :, None]

    def bw(g):
        dxhat = g * gain.data[None, :, None]
        dx = inv_std * (dxhat - dxhat.mean(axis=1, keepdims=True)
                        - xhat * (dxhat * xhat).mean(axis=1, keepdims=True))
        dgain = (g * xhat).sum(axis=(0, 2))
        dbias = g.sum(axis=(0, 2))
        return dx, dgain, dbias

    return make_result(out, "layer_norm", (x, gain, bias), bw)


def mse(pred, target) -> Tensor:
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.shape != target.shape:
        raise DimensionError(f"mse: prediction {pred.shape} vs target {target.shape}")
    diff = pred.data - target.data
    n = diff.size

    def bw(g):
        gp = g * (2.0 / n) * diff
        return gp, -gp

    return make_result(np.asarray(np.mean(diff * diff)), "mse", (pred, target), bw)


def cross_entropy(logits, target) -> Tensor:
    """Mean cross-entropy of ``logits`` (N, classes) against integer labels (N,)."""
    logits = as_tensor(logits)
    labels = np.asarray(target.data if isinstance(target, Tensor) else target)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise DimensionError(f"cross_entropy: logits {logits.shape} vs labels {labels.shape}")
    if not np.all(labels == np.round(labels)):
        raise DataError("cross_entropy: labels must be integer class indices")
    labels = labels.astype(np.intp)
    k = logits.shape[1]
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise DataError(f"cross_entropy: class index out of range [0, {k})")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(labels.size)
    loss = np.mean(lse - z[rows, labels])

    def bw(g):
        p = np.exp(z - lse[:, None])
        p[rows, labels] -= 1.0
        return (g * p / labels.size,)

    return make_result(np.asarray(loss), "cross_entropy", (logits,), bw)
