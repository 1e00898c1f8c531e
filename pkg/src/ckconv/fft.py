"""Real FFT helpers (numpy.fft underneath) with explicit length checks."""
from __future__ import annotations

import numpy as np

from .errors import DimensionError


def rfft(x, out_len: int | None = None) -> np.ndarray:
    """Half spectrum of ``x`` along the last axis, zero-padded to ``out_len``."""
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[-1]
    out_len = n if out_len is None else int(out_len)
    if out_len < n or out_len < 1:
        raise DimensionError(f"rfft: transform length {out_len} shorter than input length {n}")
    return np.fft.rfft(x, n=out_len, axis=-1)


def irfft(spectrum, out_len: int) -> np.ndarray:
    out_len = int(out_len)
    if out_len < 1 or np.shape(spectrum)[-1] != out_len // 2 + 1:
        raise DimensionError(f"irfft: {np.shape(spectrum)[-1]} bins do not match length {out_len}")
    return np.fft.irfft(spectrum, n=out_len, axis=-1)


def next_pow2(n: int) -> int:
    return 1 if n <= 1 else 1 << (int(n) - 1).bit_length()


def conv_fft_length(seq_len: int) -> int:
    """Power of two >= 2T - 1, so circular products hold the whole causal convolution."""
    return next_pow2(2 * seq_len - 1)
