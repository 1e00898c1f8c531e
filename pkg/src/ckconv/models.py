"""CKCNN: residual blocks of continuous-kernel convolutions plus a linear head."""
from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import functional as F
from . import tensor as tn
from .conv import CkconvLayer, estimate_density
from .data import SequenceBatch
from .errors import ConfigError, DataError, DimensionError
from .kernelnet import NONLINEARITIES
from .tensor import Tensor

BACKBONE_NONLINEARITIES = ("relu", "leaky_relu", "swish")
HEADS = ("label", "sequence")


@dataclass
class CkcnnConfig:
    num_blocks: int = 2
    hidden_channels: int = 30
    omega0: float = 30.0
    dropout: float = 0.0
    input_dropout: float = 0.0
    nonlinearity: str = "relu"
    head: str = "label"
    horizon: int | None = None
    kernel_hidden: int = 32
    kernel_depth: int = 3
    kernel_nonlinearity: str = "sine"
    kernel_init: str = "siren"
    mask_channel: bool = False
    density_weighting: bool = False

    @classmethod
    def from_dict(cls, d: dict) -> "CkcnnConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown model config keys: {unknown}")
        cfg = cls(**d)
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        return asdict(self)

    def validate(self) -> None:
        bad = []
        if not isinstance(self.num_blocks, int) or self.num_blocks < 1:
            bad.append("num_blocks")
        if not isinstance(self.hidden_channels, int) or self.hidden_channels < 1:
            bad.append("hidden_channels")
        if not 1.0 <= self.omega0 <= 100.0:
            bad.append("omega0")
        if not 0.0 <= self.dropout < 1.0:
            bad.append("dropout")
        if not 0.0 <= self.input_dropout < 1.0:
            bad.append("input_dropout")
        if self.nonlinearity not in BACKBONE_NONLINEARITIES:
            bad.append("nonlinearity")
        if self.head not in HEADS:
            bad.append("head")
        if self.horizon is not None and self.horizon < 1:
            bad.append("horizon")
        if self.kernel_hidden < 1:
            bad.append("kernel_hidden")
        if self.kernel_depth < 1:
            bad.append("kernel_depth")
        if self.kernel_nonlinearity not in NONLINEARITIES:
            bad.append("kernel_nonlinearity")
        if self.kernel_init not in ("siren", "uniform_knots", "default"):
            bad.append("kernel_init")
        if bad:
            raise ConfigError(f"invalid model config: {', '.join(bad)}")
        if not 1.0 <= self.omega0 <= 70.0:
            warnings.warn(f"omega0={self.omega0} lies outside the usual range [1, 70]", stacklevel=2)


def _act(name: str, x: Tensor) -> Tensor:
    if name == "relu":
        return tn.relu(x)
    if name == "leaky_relu":
        return tn.leaky_relu(x)
    return tn.swish(x)


class ResidualBlock:
    """Two [CKConv -> LayerNorm -> nonlinearity -> dropout] stages plus a shortcut."""

    def __init__(self, in_channels: int, out_channels: int, config: CkcnnConfig, train_max_len: int, seeds):
        conv_kw = dict(train_max_len=train_max_len, omega0=config.omega0, hidden=config.kernel_hidden,
                       depth=config.kernel_depth, nonlinearity=config.kernel_nonlinearity,
                       horizon=config.horizon, kernel_init=config.kernel_init)
        self.conv1 = CkconvLayer(in_channels, out_channels, seed=seeds[0], **conv_kw)
        self.conv2 = CkconvLayer(out_channels, out_channels, seed=seeds[1], **conv_kw)
        self.norms = [(Tensor(np.ones(out_channels), True), Tensor(np.zeros(out_channels), True))
                      for _ in range(2)]
        self.shortcut = None
        if in_channels != out_channels:
            rng = np.random.default_rng(seeds[2])
            bound = 1.0 / math.sqrt(in_channels)
            self.shortcut = (Tensor(rng.uniform(-bound, bound, (out_channels, in_channels)), True),
                             Tensor(rng.uniform(-bound, bound, out_channels), True))

    def parameters(self) -> dict:
        params = {}
        for i, conv in enumerate((self.conv1, self.conv2), start=1):
            params.update({f"conv{i}.{k}": v for k, v in conv.parameters().items()})
        for i, (gain, bias) in enumerate(self.norms, start=1):
            params[f"norm{i}.gain"] = gain
            params[f"norm{i}.bias"] = bias
        if self.shortcut is not None:
            params["shortcut.weight"], params["shortcut.bias"] = self.shortcut
        return params

    def __call__(self, x: Tensor, config: CkcnnConfig, training: bool, rng, stride=1, sr_ratio=1,
                 strict=False) -> Tensor:
        h = x
        for conv, (gain, bias) in zip((self.conv1, self.conv2), self.norms):
            h = conv(h, stride=stride, sr_ratio=sr_ratio, strict=strict)
            h = F.layer_norm(h, gain, bias)
            h = _act(config.nonlinearity, h)
            h = tn.dropout(h, config.dropout, training, rng)
        return h + self.project(x)

    def project(self, x: Tensor) -> Tensor:
        if self.shortcut is None:
            return x
        weight, bias = self.shortcut
        return tn.einsum("bct,oc->bot", x, weight) + tn.reshape(bias, (1, -1, 1))


class CkcnnModel:
    def __init__(self, config: CkcnnConfig, in_channels: int, out_dim: int, train_max_len: int, seed: int = 0):
        config.validate()
        self.config = config
        self.in_channels = in_channels
        self.out_dim = out_dim
        self.train_max_len = int(train_max_len)
        self.seed = seed
        seq = np.random.SeedSequence(seed)
        block_seeds, head_seed, dropout_seed = seq.spawn(3)
        per_block = block_seeds.spawn(config.num_blocks)
        self.blocks = []
        c_in = self.input_channels
        for i in range(config.num_blocks):
            seeds = [np.random.default_rng(s) for s in per_block[i].spawn(3)]
            self.blocks.append(ResidualBlock(c_in, config.hidden_channels, config, train_max_len, seeds))
            c_in = config.hidden_channels
        rng = np.random.default_rng(head_seed)
        bound = 1.0 / math.sqrt(config.hidden_channels)
        self.head_weight = Tensor(rng.uniform(-bound, bound, (out_dim, config.hidden_channels)), True)
        self.head_bias = Tensor(rng.uniform(-bound, bound, out_dim), True)
        self.rng = np.random.default_rng(dropout_seed)

    @property
    def input_channels(self) -> int:
        return self.in_channels + (1 if self.config.mask_channel else 0)

    def parameters(self) -> dict:
        params = {}
        for i, block in enumerate(self.blocks):
            params.update({f"blocks.{i}.{k}": v for k, v in block.parameters().items()})
        params["head.weight"] = self.head_weight
        params["head.bias"] = self.head_bias
        return params

    def decay_parameters(self) -> set:
        """Names subject to weight decay (everything except norm gains and biases)."""
        return {n for n in self.parameters() if not (".norm" in n or n.endswith("bias") or n.endswith(".b"))}

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters().values())

    def __call__(self, batch, mode: str = "eval", stride: int = 1, sr_ratio=1) -> Tensor:
        return forward(self, batch, mode, stride, sr_ratio)


def build(config: CkcnnConfig, in_channels: int, out_dim: int, train_max_len: int, seed: int = 0) -> CkcnnModel:
    """Deterministically initialized CKCNN; ``train_max_len`` is the largest train-time lag (T - 1)."""
    return CkcnnModel(config, in_channels, out_dim, train_max_len, seed)


def count_parameters(config: CkcnnConfig, in_channels: int, out_dim: int) -> int:
    """Closed-form parameter count of :func:`build`'s model."""
    kh, depth = config.kernel_hidden, config.kernel_depth

    def kernel_net(n_out: int) -> int:
        widths = [1] + [kh] * (depth - 1) + [n_out]
        return sum(a * b + 2 * b for a, b in zip(widths[:-1], widths[1:]))

    def ckconv(c_in: int, c_out: int) -> int:
        return kernel_net(c_in * c_out) + c_out

    h = config.hidden_channels
    c_in = in_channels + (1 if config.mask_channel else 0)
    total = 0
    for _ in range(config.num_blocks):
        total += ckconv(c_in, h) + ckconv(h, h) + 4 * h
        if c_in != h:
            total += c_in * h + h
        c_in = h
    return total + h * out_dim + out_dim


def model_inputs(model: CkcnnModel, batch: SequenceBatch) -> Tensor:
    """Input tensor for ``model``: optionally density-weighted values plus the mask channel."""
    values = batch.values
    if model.config.density_weighting and not batch.fully_observed:
        weights = np.zeros(batch.positions.shape)
        for b in range(batch.batch_size):
            obs = np.flatnonzero(batch.mask[b, 0] > 0)
            weights[b, obs] = (batch.density[b, obs] if batch.density is not None
                               else estimate_density(batch.positions[b, obs]))
        values = values * weights[:, None, :]
    if model.config.mask_channel:
        values = np.concatenate([values, batch.mask], axis=1)
    return Tensor._wrap(np.ascontiguousarray(values))


def forward(model: CkcnnModel, batch, mode: str = "eval", stride: int = 1, sr_ratio=1) -> Tensor:
    """Predictions: (B, out_dim) for the label head, (B, T, out_dim) for the sequence head.

    ``stride``/``sr_ratio`` describe the resolution of ``batch`` relative to training.
    """
    if mode not in ("train", "eval"):
        raise ConfigError(f"mode must be 'train' or 'eval', got {mode!r}")
    if not isinstance(batch, SequenceBatch):
        batch = SequenceBatch.regular(np.asarray(batch, dtype=np.float64))
    if batch.length == 0:
        raise DataError("cannot run a model on a zero-length sequence")
    if batch.channels != model.in_channels:
        raise DimensionError(f"model was built for {model.in_channels} channels, batch has {batch.channels}")
    training = mode == "train"
    cfg = model.config
    h = tn.dropout(model_inputs(model, batch), cfg.input_dropout, training, model.rng)
    for block in model.blocks:
        h = block(h, cfg, training, model.rng, stride=stride, sr_ratio=sr_ratio, strict=training)
    if cfg.head == "label":
        last = h[:, :, -1]
        return tn.matmul(last, tn.transpose(model.head_weight)) + model.head_bias
    return tn.einsum("bct,oc->bto", h, model.head_weight) + model.head_bias
