import numpy as np
import pytest
from hypothesis import settings

from ckconv import tensor as tn

settings.register_profile("repro", derandomize=True, deadline=None)
settings.load_profile("repro")


def numeric_grad(f, param, eps=1e-5):
    """Central differences of the scalar ``f()`` with respect to tensor ``param`` (perturbed in place).

    The version counter is bumped on every perturbation so cached kernels are resampled.
    """
    arr = param.data
    grad = np.zeros_like(arr)
    it = np.nditer(arr, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = arr[i]
        arr[i] = old + eps
        param.version += 1
        hi = f()
        arr[i] = old - eps
        param.version += 1
        lo = f()
        arr[i] = old
        param.version += 1
        grad[i] = (hi - lo) / (2 * eps)
    return grad


def rel_err(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-12))


def check_grads(loss_fn, params, eps=1e-5):
    """Largest relative error between autodiff and central differences over ``params``."""
    for p in params:
        p.grad = None
    loss = loss_fn()
    tn.backward(loss)
    worst = 0.0
    for p in params:
        with tn.no_grad():
            num = numeric_grad(lambda: loss_fn().item(), p, eps)
        worst = max(worst, rel_err(p.grad, num))
    return worst


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
