"""Adam and the reduce-on-plateau learning-rate rule."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DivergenceError
from .tensor import Tensor


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


class Adam:
    """Bias-corrected Adam over a name -> Tensor mapping.

    ``weight_decay`` is applied L2-style only to names listed in ``decay``.
    """

    def __init__(self, params: dict, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8, weight_decay: float = 0.0, decay: set | None = None):
        if lr <= 0:
            raise ConfigError(f"learning rate must be positive, got {lr}")
        self.params = dict(params)
        self.state = AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps)
        for name, p in self.params.items():
            self.state.m[name] = np.zeros_like(p.data)
            self.state.v[name] = np.zeros_like(p.data)
        self.weight_decay = weight_decay
        self.decay = set(self.params) if decay is None else set(decay)

    @property
    def lr(self) -> float:
        return self.state.lr

    @lr.setter
    def lr(self, value: float) -> None:
        self.state.lr = float(value)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        grads = {}
        for name, p in self.params.items():
            g = np.zeros_like(p.data) if p.grad is None else p.grad
            if not np.isfinite(g).all():
                raise DivergenceError(f"non-finite gradient for parameter '{name}'")
            if self.weight_decay and name in self.decay:
                g = g + self.weight_decay * p.data
            grads[name] = g
        adam_step(self.params, grads, self.state)


def adam_step(params: dict, grads: dict, state: AdamState) -> None:
    """One in-place Adam update; increments ``state.t`` once."""
    for name, g in grads.items():
        if not np.isfinite(g).all():
            raise DivergenceError(f"non-finite gradient for parameter '{name}'")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for name, p in params.items():
        g = grads[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m = state.m[name] = b1 * state.m[name] + (1.0 - b1) * g
        v = state.v[name] = b2 * state.v[name] + (1.0 - b2) * (g * g)
        p.data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.version += 1


@dataclass
class PlateauScheduler:
    """Divide the learning rate by ``decay_factor`` after ``patience`` flat epochs.

    Lower metric is better. An epoch counts as an improvement only when the
    metric beats the best seen so far by more than ``min_delta``.
    """

    lr: float
    patience: int = 20
    decay_factor: float = 5.0
    min_delta: float = 1e-5
    best: float = float("inf")
    bad_epochs: int = 0

    def __post_init__(self):
        if self.decay_factor <= 1:
            raise ConfigError(f"scheduler decay factor must exceed 1, got {self.decay_factor}")
        if self.patience < 1:
            raise ConfigError(f"scheduler patience must be >= 1, got {self.patience}")

    def step(self, metric: float) -> float:
        if metric < self.best - self.min_delta:
            self.best = metric
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
            if self.bad_epochs >= self.patience:
                self.lr /= self.decay_factor
                self.bad_epochs = 0
        return self.lr


def plateau_step(scheduler: PlateauScheduler, val_metric: float) -> float:
    return scheduler.step(val_metric)


def check_finite(params: dict[str, Tensor]) -> None:
    for name, p in params.items():
        if not np.isfinite(p.data).all():
            raise DivergenceError(f"parameter '{name}' became non-finite")
