"""Numerical property reports: resolution transfer, blur taps and convolution equivalences."""
from __future__ import annotations

import math

import numpy as np

from . import functional as F
from . import tensor as tn
from .conv import (BlurFilter, CkconvLayer, causal_conv_direct, causal_conv_fft, irregular_conv,
                   linear_rnn_kernel, linear_rnn_unroll)
from .data import SequenceBatch
from .optim import Adam


def rel_l2(a, b) -> float:
    """||a - b|| / ||b|| (0 when both vanish)."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    den = np.linalg.norm(b)
    num = np.linalg.norm(a - b)
    if den == 0.0:
        return 0.0 if num == 0.0 else math.inf
    return float(num / den)


def band_limited(batch: int, channels: int, length: int, max_freq: float = 0.1, terms: int = 8,
                 seed=0) -> np.ndarray:
    """Random sums of sinusoids with angular frequencies below ``max_freq * pi`` rad per step."""
    rng = np.random.default_rng(seed)
    t = np.arange(length, dtype=np.float64)
    freq = rng.uniform(0.0, max_freq * math.pi, size=(batch, channels, terms, 1))
    phase = rng.uniform(0.0, 2 * math.pi, size=(batch, channels, terms, 1))
    amp = rng.standard_normal((batch, channels, terms, 1)) / math.sqrt(terms)
    return (amp * np.sin(freq * t + phase)).sum(axis=2)


def stride_agreement(layer: CkconvLayer, x: np.ndarray, stride: int = 2) -> dict:
    """Compare the layer's response to ``x`` with its response to ``x[..., ::stride]``.

    Returns the relative L2 error at the shared time points plus the two series.
    """
    with tn.no_grad():
        full = layer(x).data
        coarse = layer(x[:, :, ::stride], stride=stride).data
    shared = full[:, :, ::stride]
    return {"stride": stride, "rel_l2": rel_l2(coarse, shared), "time": np.arange(x.shape[2])[::stride],
            "full": shared, "strided": coarse}


def train_layer_on_response(layer: CkconvLayer, target_kernel: np.ndarray, steps: int = 300, lr: float = 3e-3,
                            length: int | None = None, seed=0) -> list[float]:
    """Fit ``layer`` so its outputs match convolution with ``target_kernel`` on band-limited inputs."""
    length = length or layer.train_max_len + 1
    history = []
    opt = Adam(layer.parameters(), lr=lr)
    rng = np.random.default_rng(seed)
    for _ in range(steps):
        x = band_limited(4, layer.in_channels, length, seed=rng)
        target = causal_conv_direct(x, target_kernel).data
        loss = F.mse(layer(x, strict=True), target)
        history.append(loss.item())
        opt.zero_grad()
        tn.backward(loss)
        opt.step()
    return history


def blur_check(ratio: int) -> dict:
    """Blur taps against the closed form exp(-k^2 / (2 * 0.25)) / sum."""
    taps = BlurFilter.for_ratio(ratio).taps
    k = np.arange(-ratio, ratio + 1, dtype=np.float64)
    closed = np.exp(-2.0 * k ** 2)
    closed /= closed.sum()
    return {"ratio": ratio, "taps": taps, "closed_form": closed, "max_abs_err": float(np.max(np.abs(taps - closed)))}


def _spectral_scale(W: np.ndarray, radius: float) -> np.ndarray:
    rho = np.max(np.abs(np.linalg.eigvals(W)))
    return W * (radius / rho) if rho > 0 else W


def rnn_equivalence(cases: int = 50, length: int = 64, max_hidden: int = 8, max_radius: float = 0.95,
                    seed=0) -> list[dict]:
    """Unrolled linear recurrences against convolution with ``W^tau U`` on random systems."""
    rng = np.random.default_rng(seed)
    out = []
    for case in range(cases):
        h = int(rng.integers(1, max_hidden + 1))
        c = int(rng.integers(1, 5))
        b = int(rng.integers(1, 4))
        W = _spectral_scale(rng.standard_normal((h, h)), rng.uniform(0.05, max_radius))
        U = rng.standard_normal((h, c))
        x = rng.standard_normal((b, c, length))
        states = linear_rnn_unroll(W, U, x)
        conv = causal_conv_direct(x, linear_rnn_kernel(W, U, length)).data
        out.append({"case": case, "hidden": h, "channels": c, "radius": float(np.max(np.abs(np.linalg.eigvals(W)))),
                    "rel_err": rel_l2(conv, states)})
    return out


def conv_equivalence(cases: int = 200, lengths=(1, 2, 17, 128, 1000), seed=0) -> list[dict]:
    """FFT convolution against the direct loop on random shapes."""
    rng = np.random.default_rng(seed)
    out = []
    for case in range(cases):
        b, c_in, c_out = (int(v) for v in rng.integers(1, 5, size=3))
        t = int(lengths[case % len(lengths)])
        k_len = int(rng.integers(1, t + 1))
        x = rng.standard_normal((b, c_in, t))
        k = rng.standard_normal((c_out, c_in, k_len))
        bias = rng.standard_normal(c_out)
        ref = causal_conv_direct(x, k, bias).data
        fft = causal_conv_fft(x, k, bias).data
        out.append({"case": case, "batch": b, "in": c_in, "out": c_out, "length": t, "kernel": k_len,
                    "rel_err": rel_l2(fft, ref)})
    return out


def irregular_degenerate(layer: CkconvLayer, x: np.ndarray) -> dict:
    """Irregular route with unit density on a full uniform grid against the direct regular route."""
    batch = SequenceBatch.regular(x)
    with tn.no_grad():
        irregular = irregular_conv(layer, batch, append_mask=False, density=np.ones(batch.positions.shape)).data
        kernel = layer.kernel(layer.grid(x.shape[2])).data
    regular = causal_conv_direct(x, kernel, layer.bias.data).data
    return {"bitwise_equal": bool(np.array_equal(irregular, regular)),
            "max_abs_diff": float(np.max(np.abs(irregular - regular)))}
