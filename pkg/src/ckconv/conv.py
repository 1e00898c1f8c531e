"""Causal convolutions with continuous kernels.

``causal_conv_direct`` is the plain-loop reference. ``causal_conv_fft`` is the
differentiable O(T log T) route used for training. ``CkconvLayer`` samples a
:class:`KernelNet` on the grid matching the input resolution before convolving.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from . import tensor as tn
from .errors import DataError, DimensionError
from .fft import conv_fft_length, irfft, rfft
from .kernelnet import (KernelNet, PositionGrid, as_ratio, init_default, init_siren,
                        init_uniform_knots, make_grid, sample_kernel, steps_to_positions)
from .tensor import Tensor, as_tensor, make_result

BLUR_SIGMA = 0.5


def _arr(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def _check_conv_shapes(x: np.ndarray, k: np.ndarray, bias) -> None:
    if x.ndim != 3 or k.ndim != 3:
        raise DimensionError(f"convolution expects x (B, C, T) and k (C_out, C_in, K); got {x.shape}, {k.shape}")
    if x.shape[1] != k.shape[1]:
        raise DimensionError(f"input has {x.shape[1]} channels but kernel expects {k.shape[1]}")
    if bias is not None and np.shape(_arr(bias)) != (k.shape[0],):
        raise DimensionError(f"bias must have shape ({k.shape[0]},)")


def causal_conv_direct(x, k, bias=None) -> Tensor:
    """Reference causal convolution ``y(t) = sum_c sum_{tau<=t} x_c(t - tau) k_c(tau) + bias``.

    Sums run channel-outer, lag-inner; past the sequence start the input is zero.
    Not differentiable.
    """
    x, k = _arr(x), _arr(k)
    _check_conv_shapes(x, k, bias)
    batch, channels, length = x.shape
    klen = min(k.shape[2], length)
    y = np.zeros((batch, k.shape[0], length))
    for c in range(channels):
        for tau in range(klen):
            y[:, :, tau:] += k[None, :, c, tau, None] * x[:, None, c, :length - tau]
    if bias is not None:
        y += _arr(bias)[None, :, None]
    return Tensor._wrap(y)


def causal_conv_fft(x, k, bias=None) -> Tensor:
    """Causal convolution via real FFTs of length >= 2T - 1; same contract as the direct form."""
    x, k = as_tensor(x), as_tensor(k)
    _check_conv_shapes(x.data, k.data, bias)
    length = x.shape[2]
    if k.shape[2] > length:
        k = k[:, :, :length]
    klen = k.shape[2]
    n = conv_fft_length(length)
    # frequency-major contiguous stacks: batched matmul on strided views is several times slower
    xf = np.ascontiguousarray(rfft(x.data, n).transpose(2, 0, 1))      # (F, B, C)
    kf = np.ascontiguousarray(rfft(k.data, n).transpose(2, 1, 0))      # (F, C, O)
    y = irfft(np.matmul(xf, kf).transpose(1, 2, 0), n)[..., :length]

    def bw(g):
        gf = np.ascontiguousarray(rfft(g, n).transpose(2, 0, 1))        # (F, B, O)
        gx = gk = None
        if x.requires_grad:
            gxf = np.matmul(gf, np.ascontiguousarray(np.conj(kf).transpose(0, 2, 1)))  # (F, B, C)
            gx = irfft(gxf.transpose(1, 2, 0), n)[..., :length]
        if k.requires_grad:
            gkf = np.matmul(np.ascontiguousarray(gf.transpose(0, 2, 1)), np.conj(xf))  # (F, O, C)
            gk = irfft(gkf.transpose(1, 2, 0), n)[..., :klen]
        return gx, gk

    out = make_result(y, "causal_conv_fft", (x, k), bw)
    if bias is not None:
        out = out + tn.reshape(as_tensor(bias), (1, -1, 1))
    return out


# ---------------------------------------------------------------------------
# resolution handling
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BlurFilter:
    """Normalized Gaussian (sigma 0.5) with taps at offsets ``-ratio..ratio``."""

    ratio: int
    taps: np.ndarray

    @classmethod
    def for_ratio(cls, ratio: int) -> "BlurFilter":
        r = int(ratio)
        offsets = np.arange(-r, r + 1, dtype=np.float64)
        raw = np.exp(-offsets ** 2 / (2.0 * BLUR_SIGMA ** 2))
        return cls(r, raw / raw.sum())

    def __len__(self):
        return len(self.taps)

    def matrix(self, length: int) -> np.ndarray:
        """Banded (length x length) matrix M with ``blurred = kernel @ M`` (zero padded)."""
        m = np.zeros((length, length))
        for off, w in zip(range(-self.ratio, self.ratio + 1), self.taps):
            idx = np.arange(max(0, -off), min(length, length - off))
            m[idx + off, idx] = w
        return m


def blur(kernel: Tensor, filt: BlurFilter) -> Tensor:
    """Smooth a sampled kernel (C_out, C_in, K) along its lag axis."""
    return tn.matmul(kernel, Tensor._wrap(filt.matrix(kernel.shape[2])))


class CkconvLayer:
    """Convolution whose kernel is a :class:`KernelNet` sampled on a position grid.

    ``train_max_len`` is the largest lag N seen at train time; lag ``s`` maps
    to ``2 s / N - 1``. ``horizon`` (in train steps) bounds the kernel extent;
    ``None`` means the kernel spans the whole input.
    """

    def __init__(self, in_channels: int, out_channels: int, train_max_len: int, omega0: float = 30.0,
                 hidden: int = 32, depth: int = 3, nonlinearity: str = "sine", horizon: int | None = None,
                 kernel_init: str = "siren", seed=0):
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.train_max_len = int(train_max_len)
        self.horizon = horizon
        self.kernel_net = KernelNet(out_channels, in_channels, hidden=hidden, depth=depth,
                                    nonlinearity=nonlinearity, omega0=omega0)
        if kernel_init == "siren":
            init_siren(self.kernel_net, seed=seed)
        elif kernel_init == "uniform_knots":
            init_uniform_knots(self.kernel_net, seed=seed)
        else:
            init_default(self.kernel_net, seed=seed)
        self.bias = Tensor(np.zeros(out_channels), requires_grad=True, name="bias")
        self._cache = None

    def parameters(self) -> dict:
        params = {f"kernel_net.{k}": v for k, v in self.kernel_net.parameters().items()}
        params["bias"] = self.bias
        return params

    def kernel_length(self, seq_len: int, spacing: Fraction) -> int:
        if self.horizon is None:
            return seq_len
        return max(1, min(seq_len, math.floor((self.horizon - 1) / spacing) + 1))

    def grid(self, seq_len: int, stride: int = 1, sr_ratio=1, strict: bool = False) -> PositionGrid:
        r = as_ratio(sr_ratio)
        klen = self.kernel_length(seq_len, Fraction(stride) / r)
        return make_grid(self.train_max_len, klen, stride, r, strict=strict)

    def kernel(self, grid: PositionGrid) -> Tensor:
        """Sampled kernel, blurred when the grid is finer than training and scaled by the grid spacing."""
        params = self.kernel_net.parameters().values()
        key = (tuple(p.version for p in params), grid.fingerprint, tn.is_grad_enabled())
        if self._cache is not None and self._cache[0] == key:
            return self._cache[1]
        k = sample_kernel(self.kernel_net, grid)
        if grid.sr_ratio > 1:
            k = blur(k, BlurFilter.for_ratio(int(grid.sr_ratio)))
        factor = float(grid.spacing)
        if factor != 1.0:
            k = tn.scale(k, factor)
        self._cache = (key, k)
        return k

    def __call__(self, x, stride: int = 1, sr_ratio=1, strict: bool = False) -> Tensor:
        return ckconv_forward(self, x, stride=stride, sr_ratio=sr_ratio, strict=strict)


def ckconv_forward(layer: CkconvLayer, x, stride: int = 1, sr_ratio=1, strict: bool = False) -> Tensor:
    """Convolve ``x`` (B, C_in, T) with the layer's kernel at the given test resolution.

    ``stride`` n means the input keeps every n-th train-time step;
    ``sr_ratio`` r > 1 means r samples per train-time step. Outputs are put
    back on the train-rate scale by multiplying the kernel by n / r.
    """
    x = as_tensor(x)
    if x.ndim != 3 or x.shape[1] != layer.in_channels:
        raise DimensionError(f"layer expects (B, {layer.in_channels}, T) input, got {x.shape}")
    grid = layer.grid(x.shape[2], stride, sr_ratio, strict)
    return causal_conv_fft(x, layer.kernel(grid), layer.bias)


# ---------------------------------------------------------------------------
# irregular sampling
# ---------------------------------------------------------------------------

def estimate_density(positions) -> np.ndarray:
    """Per-sample weights s(tau): local spacing (half the sum of adjacent gaps).

    Endpoints use their single gap. Near-uniform sampling returns ones.
    """
    p = np.asarray(positions, dtype=np.float64)
    if p.size <= 1:
        return np.ones(p.size)
    gaps = np.diff(p)
    if np.allclose(gaps, gaps[0], rtol=1e-9, atol=0.0):
        return np.ones(p.size)
    s = np.empty(p.size)
    s[0], s[-1] = gaps[0], gaps[-1]
    s[1:-1] = 0.5 * (gaps[:-1] + gaps[1:])
    return s


def _irregular_plan(batch, density=None):
    plan = []
    for b in range(batch.batch_size):
        obs = np.flatnonzero(batch.mask[b, 0] > 0)
        pos = batch.positions[b, obs]
        if np.any(np.diff(pos) <= 0):
            raise DataError(f"sample {b}: observed positions are not strictly increasing")
        if density is not None:
            s = np.asarray(density[b])[obs]
        elif batch.density is not None:
            s = batch.density[b, obs]
        else:
            s = estimate_density(pos)
        if np.any(s <= 0):
            raise DataError(f"sample {b}: sample density weights must be positive")
        lags = [pos[d:] - pos[:len(pos) - d] for d in range(len(pos))]
        plan.append((obs, s, lags))
    return plan


def irregular_conv(layer: CkconvLayer, batch, append_mask: bool = True, density=None) -> Tensor:
    """Density-weighted continuous convolution evaluated at every observed position.

    ``y(t_j) = sum_c sum_{tau_i <= t_j} s(tau_i) x_c(tau_i) psi_c(t_j - tau_i)``
    with the kernel evaluated at the exact lags. With ``append_mask`` the
    (unweighted) observation mask is convolved as an extra input channel.
    Returns (B, C_out, T) with zeros at unobserved columns.
    """
    plan = _irregular_plan(batch, density)
    all_lags = np.concatenate([np.concatenate(lags) for _, _, lags in plan if lags] or [np.zeros(0)])
    table = np.unique(all_lags)
    lag_index = [[np.searchsorted(table, lag) for lag in lags] for _, _, lags in plan]

    channels = batch.values.shape[1] + (1 if append_mask else 0)
    if channels != layer.in_channels:
        raise DimensionError(f"layer expects {layer.in_channels} input channels, batch provides {channels}")
    net = layer.kernel_net
    psi = tn.reshape(net(steps_to_positions(table, layer.train_max_len)),
                     (len(table), layer.out_channels, layer.in_channels))
    x = as_tensor(batch.values)
    n_out = layer.out_channels
    n_data = batch.values.shape[1]

    def weighted(b):
        obs, s, _ = plan[b]
        wx = s * x.data[b][:, obs]
        if append_mask:
            wx = np.concatenate([wx, np.ones((1, len(obs)))], axis=0)
        return wx

    y = np.zeros((batch.batch_size, n_out, batch.length))
    for b, (obs, _, _) in enumerate(plan):
        wx = weighted(b)
        m = len(obs)
        yb = np.zeros((n_out, m))
        for c in range(channels):
            for d in range(m):
                yb[:, d:] += psi.data[lag_index[b][d], :, c].T * wx[c, None, :m - d]
        y[b][:, obs] = yb

    def bw(g):
        gpsi = np.zeros_like(psi.data)
        gx = np.zeros_like(x.data)
        for b, (obs, s, _) in enumerate(plan):
            wx = weighted(b)
            gy = g[b][:, obs]
            m = len(obs)
            gwx = np.zeros_like(wx)
            for c in range(channels):
                for d in range(m):
                    idx = lag_index[b][d]
                    gwx[c, :m - d] += np.einsum("oj,jo->j", gy[:, d:], psi.data[idx, :, c])
                    np.add.at(gpsi[:, :, c], idx, (gy[:, d:] * wx[c, None, :m - d]).T)
            gx[b][:, obs] += s * gwx[:n_data]
        return gpsi, gx

    out = make_result(y, "irregular_conv", (psi, x), bw)
    observed = Tensor._wrap((batch.mask > 0).astype(np.float64))
    return out + tn.mul(tn.reshape(layer.bias, (1, -1, 1)), observed)


def irregular_conv_at(layer: CkconvLayer, positions, values, query, density=None) -> np.ndarray:
    """Evaluate the density-weighted convolution of one sequence at arbitrary query times.

    ``values`` is (C_in, M) observed at ``positions`` (M,). Only samples at or
    before each query contribute. Cost is linear in M per query, so this is the
    route for long, densely sampled inputs where the pairwise table is too big.
    Returns (C_out, Q) without gradient tracking.
    """
    pos = np.asarray(positions, dtype=np.float64)
    vals = np.atleast_2d(np.asarray(values, dtype=np.float64))
    if vals.shape != (layer.in_channels, pos.size):
        raise DimensionError(f"values shape {vals.shape} does not match ({layer.in_channels}, {pos.size})")
    if np.any(np.diff(pos) <= 0):
        raise DataError("positions are not strictly increasing")
    s = estimate_density(pos) if density is None else np.asarray(density, dtype=np.float64)
    if np.any(s <= 0):
        raise DataError("sample density weights must be positive")
    out = np.zeros((layer.out_channels, len(np.atleast_1d(query))))
    with tn.no_grad():
        for q, t in enumerate(np.atleast_1d(query)):
            keep = pos <= t
            lags = t - pos[keep]
            psi = layer.kernel_net(steps_to_positions(lags, layer.train_max_len)).data
            psi = psi.reshape(len(lags), layer.out_channels, layer.in_channels)
            out[:, q] = np.einsum("moc,cm->o", psi, s[keep] * vals[:, keep]) + layer.bias.data
    return out


# ---------------------------------------------------------------------------
# linear recurrent units as convolutions
# ---------------------------------------------------------------------------

def linear_rnn_kernel(W, U, length: int) -> np.ndarray:
    """Kernel (H, C, T) whose lag-tau slice is ``W^tau U``."""
    W, U = np.asarray(W, dtype=np.float64), np.asarray(U, dtype=np.float64)
    W, U = np.atleast_2d(W), np.atleast_2d(U)
    if length < 1:
        raise DimensionError(f"kernel length must be >= 1, got {length}")
    out = np.empty((U.shape[0], U.shape[1], length))
    power = U.copy()
    for tau in range(length):
        out[:, :, tau] = power
        power = W @ power
    return out


def linear_rnn_unroll(W, U, x, h_init=None) -> np.ndarray:
    """Hidden states (B, H, T) of ``h(t) = W h(t-1) + U x(t)`` with ``h(-1) = h_init`` (default 0)."""
    W, U = np.atleast_2d(np.asarray(W, dtype=np.float64)), np.atleast_2d(np.asarray(U, dtype=np.float64))
    x = np.asarray(x, dtype=np.float64)
    batch, _, length = x.shape
    h = np.zeros((batch, W.shape[0])) if h_init is None else np.array(h_init, dtype=np.float64)
    out = np.empty((batch, W.shape[0], length))
    for t in range(length):
        h = h @ W.T + x[:, :, t] @ U.T
        out[:, :, t] = h
    return out
