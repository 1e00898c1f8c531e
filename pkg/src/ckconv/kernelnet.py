"""Continuous kernels: position grids and the small MLP that maps positions to kernel values."""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from . import functional as F
from . import tensor as tn
from .errors import ConfigError, DivergenceError, HorizonError, SingularityError
from .tensor import Tensor

NONLINEARITIES = ("sine", "relu", "leaky_relu", "swish")
_MAX_RESAMPLE = 100


def as_ratio(sr_ratio) -> Fraction:
    """Validate a test/train sampling-rate ratio.

    Ratios above one must be integers (finer test grid); ratios below one
    must be reciprocals of integers (coarser test grid).
    """
    try:
        r = Fraction(sr_ratio).limit_denominator(1 << 20)
    except (TypeError, ValueError):
        raise ConfigError(f"sampling-rate ratio must be numeric, got {sr_ratio!r}") from None
    if r <= 0:
        raise ConfigError(f"sampling-rate ratio must be positive, got {sr_ratio}")
    if r.numerator != 1 and r.denominator != 1:
        raise ConfigError(f"non-integer sampling-rate ratio {sr_ratio} is not supported")
    return r


@dataclass(frozen=True)
class PositionGrid:
    """Normalized relative positions for one sampled kernel.

    ``steps`` are lags measured in train-time unit steps; ``positions`` their
    images under ``step -> 2 * step / train_max_len - 1``.
    """

    positions: np.ndarray
    steps: np.ndarray
    train_max_len: int
    stride: int
    sr_ratio: Fraction

    def __len__(self):
        return len(self.positions)

    @property
    def spacing(self) -> Fraction:
        """Distance between neighbouring samples, in train-time steps."""
        return self.stride / self.sr_ratio

    @property
    def fingerprint(self) -> tuple:
        return (len(self.positions), self.train_max_len, self.stride, self.sr_ratio)


def make_grid(train_max_len: int, kernel_len: int, stride: int = 1, sr_ratio=1,
              strict: bool = True) -> PositionGrid:
    """Positions of lags ``k * stride / sr_ratio`` for ``k < kernel_len``.

    With ``strict`` the grid may not reach past the train horizon; non-strict
    grids extrapolate beyond +1.
    """
    if kernel_len < 1:
        raise ConfigError(f"kernel length must be >= 1, got {kernel_len}")
    if stride < 1 or int(stride) != stride:
        raise ConfigError(f"stride must be a positive integer, got {stride}")
    if train_max_len < 1:
        raise ConfigError(f"train_max_len must be >= 1, got {train_max_len}")
    r = as_ratio(sr_ratio)
    stride = int(stride)
    k = np.arange(kernel_len, dtype=np.int64)
    num = k * stride * r.denominator
    den = r.numerator * train_max_len
    if strict and (kernel_len - 1) * stride * r.denominator > den:
        raise HorizonError(
            f"kernel of {kernel_len} samples at stride {stride} spans past the train horizon {train_max_len}")
    positions = (2.0 * num) / den - 1.0
    steps = num / r.numerator
    return PositionGrid(positions, steps, int(train_max_len), stride, r)


def steps_to_positions(steps, train_max_len: int) -> np.ndarray:
    """Map lags in train-time steps onto the normalized kernel coordinate."""
    return (2.0 * np.asarray(steps, dtype=np.float64)) / train_max_len - 1.0


class KernelNet:
    """Point-wise MLP from a scalar relative position to an (N_out x N_in) kernel value.

    Hidden layers use ``nonlinearity``; the Sine variant computes
    ``sin(omega0 * (W x + b))``. Every layer is weight-normalized.
    """

    def __init__(self, out_channels: int, in_channels: int, hidden: int = 32, depth: int = 3,
                 nonlinearity: str = "sine", omega0: float = 30.0, linear_output: bool = True,
                 widths: list[int] | None = None):
        if nonlinearity not in NONLINEARITIES:
            raise ConfigError(f"unknown kernel nonlinearity '{nonlinearity}'")
        if omega0 <= 0:
            raise ConfigError(f"omega0 must be positive, got {omega0}")
        self.out_channels = out_channels
        self.in_channels = in_channels
        self.nonlinearity = nonlinearity
        self.omega0 = float(omega0)
        self.linear_output = linear_output
        if widths is None:
            if depth < 1:
                raise ConfigError(f"kernel net depth must be >= 1, got {depth}")
            widths = [1] + [hidden] * (depth - 1) + [out_channels * in_channels]
        self.widths = list(widths)
        self.v, self.g, self.b = [], [], []
        for i, (fan_in, fan_out) in enumerate(zip(self.widths[:-1], self.widths[1:])):
            self.v.append(Tensor(np.ones((fan_out, fan_in)), requires_grad=True, name=f"layers.{i}.v"))
            self.g.append(Tensor(np.full(fan_out, math.sqrt(fan_in)), requires_grad=True, name=f"layers.{i}.g"))
            self.b.append(Tensor(np.zeros(fan_out), requires_grad=True, name=f"layers.{i}.b"))

    @property
    def num_layers(self) -> int:
        return len(self.v)

    def parameters(self) -> dict:
        out = {}
        for i in range(self.num_layers):
            out[f"layers.{i}.v"] = self.v[i]
            out[f"layers.{i}.g"] = self.g[i]
            out[f"layers.{i}.b"] = self.b[i]
        return out

    def weight(self, i: int) -> Tensor:
        return F.weight_norm(self.v[i], self.g[i])

    def effective_weights(self, i: int) -> np.ndarray:
        v, g = self.v[i].data, self.g[i].data
        return g[:, None] * v / np.linalg.norm(v, axis=1, keepdims=True)

    def _activate(self, z: Tensor) -> Tensor:
        if self.nonlinearity == "sine":
            return tn.sin(tn.scale(z, self.omega0))
        if self.nonlinearity == "relu":
            return tn.relu(z)
        if self.nonlinearity == "leaky_relu":
            return tn.leaky_relu(z)
        return tn.swish(z)

    def preactivations(self, positions) -> list[Tensor]:
        """Affine outputs ``W h + b`` of every layer for inputs of shape (P,)."""
        h = Tensor(np.asarray(positions, dtype=np.float64).reshape(-1, 1))
        pre = []
        for i in range(self.num_layers):
            z = tn.rowwise_linear(h, self.weight(i)) + self.b[i]
            pre.append(z)
            last = i == self.num_layers - 1
            h = z if (last and self.linear_output) else self._activate(z)
        return pre

    def __call__(self, positions) -> Tensor:
        """Network output of shape (P, widths[-1])."""
        h = Tensor(np.asarray(positions, dtype=np.float64).reshape(-1, 1))
        for i in range(self.num_layers):
            z = tn.rowwise_linear(h, self.weight(i)) + self.b[i]
            last = i == self.num_layers - 1
            h = z if (last and self.linear_output) else self._activate(z)
        return h

    def load_dense(self, weights: list, biases: list) -> None:
        """Set layers from plain matrices (gains chosen so the effective matrix equals them)."""
        for i, (w, b) in enumerate(zip(weights, biases)):
            w = np.array(w, dtype=np.float64)
            norms = np.linalg.norm(w, axis=1)
            if np.any(norms == 0):
                raise SingularityError(f"layer {i} has a zero-norm weight row")
            self.v[i].data[...] = w
            self.g[i].data[...] = norms
            self.b[i].data[...] = np.asarray(b, dtype=np.float64)
            for p in (self.v[i], self.g[i], self.b[i]):
                p.version += 1


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def _uniform_rows(rng, shape, bound) -> np.ndarray:
    """Uniform matrix whose rows are all nonzero (resampling the offending rows)."""
    w = rng.uniform(-bound, bound, size=shape)
    for _ in range(_MAX_RESAMPLE):
        bad = np.linalg.norm(w, axis=1) == 0
        if not bad.any():
            return w
        w[bad] = rng.uniform(-bound, bound, size=(int(bad.sum()), shape[1]))
    raise SingularityError("could not draw nonzero weight rows after 100 attempts")


def init_siren(net: KernelNet, omega0: float | None = None, seed=0) -> KernelNet:
    """SIREN initialization with biases spread uniformly across each unit's period.

    First layer ``U(-1, 1)``; later layers ``U(+-sqrt(6 / fan_in) / omega0)``;
    Sine-layer biases ``U(+-pi / ||W_i||)``. The linear output layer starts
    with zero bias.
    """
    if omega0 is not None:
        if omega0 <= 0:
            raise ConfigError(f"omega0 must be positive, got {omega0}")
        net.omega0 = float(omega0)
    rng = _rng(seed)
    weights, biases = [], []
    for i in range(net.num_layers):
        fan_out, fan_in = net.v[i].shape
        bound = 1.0 / fan_in if i == 0 else math.sqrt(6.0 / fan_in) / net.omega0
        w = _uniform_rows(rng, (fan_out, fan_in), bound)
        sine_layer = not (i == net.num_layers - 1 and net.linear_output)
        if sine_layer:
            half = math.pi / np.linalg.norm(w, axis=1)
            b = rng.uniform(-half, half)
        else:
            b = np.zeros(fan_out)
        weights.append(w)
        biases.append(b)
    net.load_dense(weights, biases)
    return net


def init_default(net: KernelNet, seed=0) -> KernelNet:
    """Fan-in uniform weights with zero biases: every knot sits at the origin."""
    rng = _rng(seed)
    weights = []
    for i in range(net.num_layers):
        fan_out, fan_in = net.v[i].shape
        weights.append(_uniform_rows(rng, (fan_out, fan_in), 1.0 / math.sqrt(fan_in)))
    net.load_dense(weights, [np.zeros(w.shape[0]) for w in weights])
    return net


def init_uniform_knots(net: KernelNet, x_range=(-1.0, 1.0), seed=0) -> KernelNet:
    """Place one knot per hidden unit at equispaced inputs over ``x_range``.

    Unit ``i`` of layer ``l`` gets ``b_i = -W_i . h_{l-1}(x_i)``, where
    ``h_{l-1}`` is the output of the already-initialized layers below.
    """
    if net.nonlinearity == "sine":
        raise ConfigError("uniform-knot initialization applies to piecewise nonlinearities only")
    init_default(net, seed)
    hidden = net.num_layers - 1 if net.linear_output else net.num_layers
    for i in range(hidden):
        width = net.v[i].shape[0]
        knots = np.linspace(x_range[0], x_range[1], width)
        with tn.no_grad():
            net.b[i].data[...] = 0.0
            below = _hidden_output(net, knots, i)
        w = net.effective_weights(i)
        net.b[i].data[...] = -np.einsum("ij,ij->i", w, below)
        net.b[i].version += 1
    return net


def _hidden_output(net: KernelNet, x: np.ndarray, layer: int) -> np.ndarray:
    """Input fed to ``layer`` for each network input in ``x``, shape (len(x), fan_in)."""
    if layer == 0:
        return x.reshape(-1, 1)
    pre = net.preactivations(x)[layer - 1]
    return net._activate(pre).data


def sample_kernel(net: KernelNet, grid: PositionGrid) -> Tensor:
    """Kernel tensor of shape (N_out, N_in, K) sampled on ``grid``."""
    if len(grid) == 0:
        raise ConfigError("cannot sample a kernel on an empty grid")
    values = net(grid.positions)
    if not np.isfinite(values.data).all():
        raise DivergenceError(f"kernel net produced non-finite values (omega0={net.omega0})")
    k = tn.reshape(values, (len(grid), net.out_channels, net.in_channels))
    return tn.transpose(k, (1, 2, 0))


def kernel_rows(kernel: np.ndarray, grid: PositionGrid):
    """Flatten a sampled kernel into CSV rows (position, out_channel, in_channel, value)."""
    n_out, n_in, _ = kernel.shape
    for k, pos in enumerate(grid.positions):
        for o in range(n_out):
            for i in range(n_in):
                yield float(pos), o, i, float(kernel[o, i, k])
