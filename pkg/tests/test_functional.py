import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ckconv import functional as F
from ckconv import tensor as tn
from ckconv.data import gen_adding_problem
from ckconv.errors import DataError, DimensionError, SingularityError
from ckconv.fft import conv_fft_length, irfft, next_pow2, rfft
from ckconv.tensor import Tensor

from conftest import check_grads


class TestWeightNorm:
    def test_gauge_identity(self, rng):
        v = rng.standard_normal((4, 3))
        w = F.weight_norm(v, np.linalg.norm(v, axis=1)).data
        np.testing.assert_allclose(w, v, rtol=1e-14, atol=1e-15)

    def test_hand_norm(self):
        w = F.weight_norm(np.array([[3.0, 4.0]]), np.array([1.0])).data
        np.testing.assert_allclose(w, [[0.6, 0.8]], rtol=1e-15)

    def test_scale_invariance(self, rng):
        v, g = rng.standard_normal((3, 5)), rng.uniform(0.5, 2, 3)
        np.testing.assert_allclose(F.weight_norm(2 * v, g).data, F.weight_norm(v, g).data, rtol=1e-14)

    def test_zero_row(self):
        with pytest.raises(SingularityError):
            F.weight_norm(np.array([[0.0, 0.0], [1.0, 0.0]]), np.ones(2))

    def test_gradient(self, rng):
        v = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
        g = Tensor(rng.uniform(0.5, 2, 3), requires_grad=True)
        w = rng.standard_normal((3, 4))
        assert check_grads(lambda: tn.tsum(F.weight_norm(v, g) * w), [v, g]) < 1e-6


class TestLayerNorm:
    def test_constant_channels_give_zero(self):
        x = np.full((1, 4, 3), 2.5)
        out = F.layer_norm(x, np.ones(4), np.zeros(4)).data
        assert np.array_equal(out, np.zeros_like(x))

    def test_two_point(self):
        x = np.array([[[1.0], [3.0]]])
        expected = 1.0 / math.sqrt(1.0 + 1e-5)
        np.testing.assert_allclose(F.layer_norm(x, np.ones(2), np.zeros(2)).data[0, :, 0],
                                   [-expected, expected], rtol=1e-14)

    def test_idempotent_on_normalized(self, rng):
        x = rng.standard_normal((2, 6, 5))
        once = F.layer_norm(x, np.ones(6), np.zeros(6)).data
        twice = F.layer_norm(once, np.ones(6), np.zeros(6)).data
        np.testing.assert_allclose(twice, once, atol=1e-4)

    def test_statistics(self, rng):
        x = rng.standard_normal((2, 8, 5)) * 3 + 1
        out = F.layer_norm(x, np.ones(8), np.zeros(8)).data
        np.testing.assert_allclose(out.mean(axis=1), 0, atol=1e-12)
        np.testing.assert_allclose(out.var(axis=1), 1, atol=1e-5)

    def test_gradient(self, rng):
        x = Tensor(rng.standard_normal((2, 4, 3)), requires_grad=True)
        gain = Tensor(rng.uniform(0.5, 2, 4), requires_grad=True)
        bias = Tensor(rng.standard_normal(4), requires_grad=True)
        w = rng.standard_normal((2, 4, 3))
        assert check_grads(lambda: tn.tsum(F.layer_norm(x, gain, bias) * w), [x, gain, bias]) < 1e-6


class TestLosses:
    def test_mse_self(self, rng):
        x = rng.standard_normal(5)
        assert F.mse(x, x).item() == 0.0

    def test_uniform_cross_entropy(self):
        logits = np.zeros((3, 10))
        assert F.cross_entropy(logits, np.array([0, 4, 9])).item() == pytest.approx(math.log(10), abs=1e-12)
        assert math.log(10) == pytest.approx(2.302585, abs=1e-6)

    def test_cross_entropy_stable_for_large_logits(self):
        logits = np.array([[1000.0, 0.0], [0.0, -1000.0]])
        loss = F.cross_entropy(logits, np.array([0, 0])).item()
        assert loss == pytest.approx(0.0, abs=1e-12)

    def test_out_of_range_label(self):
        with pytest.raises(DataError):
            F.cross_entropy(np.zeros((2, 3)), np.array([0, 3]))

    def test_non_integer_label(self):
        with pytest.raises(DataError):
            F.cross_entropy(np.zeros((2, 3)), np.array([0.5, 1]))

    def test_gradients(self, rng):
        logits = Tensor(rng.standard_normal((5, 4)), requires_grad=True)
        labels = rng.integers(0, 4, 5)
        assert check_grads(lambda: F.cross_entropy(logits, labels), [logits]) < 1e-6
        pred = Tensor(rng.standard_normal(6), requires_grad=True)
        target = rng.standard_normal(6)
        assert check_grads(lambda: F.mse(pred, target), [pred]) < 1e-6

    def test_adding_constant_baseline_is_one_sixth(self):
        # Var(U1 + U2) = 2 / 12 for two independent U[0, 1] marker values
        labels = gen_adding_problem(100, 100_000, seed=3).labels
        mse = F.mse(np.ones_like(labels), labels).item()
        assert mse == pytest.approx(1.0 / 6.0, abs=0.003)

    @pytest.mark.xfail(strict=True, reason="constant-1 MSE is 1/6 = 0.1667 analytically; the quoted 0.1767 "
                                           "lies 0.01 away, outside the +-0.005 band")
    def test_adding_constant_baseline_quoted_value(self):
        labels = gen_adding_problem(100, 100_000, seed=3).labels
        assert F.mse(np.ones_like(labels), labels).item() == pytest.approx(0.1767, abs=0.005)


class TestFFT:
    def test_zero(self):
        assert np.array_equal(rfft(np.zeros(4), 4), np.zeros(3, dtype=complex))

    def test_delta(self):
        np.testing.assert_array_equal(rfft(np.array([1.0, 0, 0, 0]), 4), np.ones(3, dtype=complex))

    def test_round_trip_padded(self, rng):
        x = rng.standard_normal(5)
        back = irfft(rfft(x, 8), 8)
        expected = np.concatenate([x, np.zeros(3)])
        assert np.max(np.abs(back - expected)) <= 1e-12

    def test_round_trip_all_lengths(self, rng):
        for n in range(1, 1025):
            x = rng.standard_normal(n)
            size = n + int(rng.integers(0, 5))
            back = irfft(rfft(x, size), size)
            assert np.max(np.abs(back[:n] - x)) <= 1e-12, n
            assert np.max(np.abs(back[n:]), initial=0.0) <= 1e-12, n

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 300), st.floats(-5, 5), st.floats(-5, 5), st.integers(0, 2**31 - 1))
    def test_linearity(self, n, a, b, seed):
        r = np.random.default_rng(seed)
        x, y = r.standard_normal(n), r.standard_normal(n)
        lhs = rfft(a * x + b * y, 2 * n)
        rhs = a * rfft(x, 2 * n) + b * rfft(y, 2 * n)
        assert np.max(np.abs(lhs - rhs)) <= 1e-12

    def test_short_length_rejected(self):
        with pytest.raises(DimensionError):
            rfft(np.ones(5), 4)

    def test_lengths(self):
        assert [next_pow2(n) for n in (1, 2, 3, 5, 8, 9)] == [1, 2, 4, 8, 8, 16]
        assert conv_fft_length(1) == 1
        assert conv_fft_length(100) == 256
        for t in range(1, 600):
            n = conv_fft_length(t)
            assert n >= 2 * t - 1 and n & (n - 1) == 0
