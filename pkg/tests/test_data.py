import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ckconv.data import (CsvSchema, SequenceBatch, gen_adding_problem, gen_copy_memory, gen_targets,
                         gen_waveforms, load_csv, random_drop, subsample, write_csv)
from ckconv.errors import ConfigError, DataError


class TestCopyMemory:
    @pytest.mark.parametrize("T", [1, 5, 100])
    def test_layout(self, T):
        batch = gen_copy_memory(T, 4, seed=0)
        tokens = batch.values[:, 0].astype(int)
        assert batch.length == T + 20 == 10 + (T - 1) + 11
        assert np.all((tokens[:, :10] >= 1) & (tokens[:, :10] <= 8))
        assert np.all(tokens[:, 10:T + 9] == 0)
        assert np.all(tokens[:, -11:] == 9)

    def test_targets_recall_digits(self):
        batch = gen_copy_memory(30, 8, seed=1)
        tokens = batch.values[:, 0].astype(int)
        assert np.all((batch.labels != 0).sum(axis=1) == 10)
        np.testing.assert_array_equal(batch.labels[:, -10:], tokens[:, :10])
        assert np.all(batch.labels[:, :-10] == 0)

    def test_zero_baseline_accuracy(self):
        T = 100
        labels = gen_copy_memory(T, 50, seed=2).labels
        assert np.mean(labels == 0) == pytest.approx((T + 10) / (T + 20), abs=1e-12)

    def test_onehot(self):
        batch = gen_copy_memory(5, 3, seed=0, encoding="onehot")
        assert batch.channels == 10
        np.testing.assert_array_equal(batch.values.sum(axis=1), 1.0)
        np.testing.assert_array_equal(batch.values.argmax(axis=1), gen_copy_memory(5, 3, seed=0).values[:, 0])

    def test_bad_args(self):
        with pytest.raises(ConfigError):
            gen_copy_memory(0, 1)
        with pytest.raises(ConfigError):
            gen_copy_memory(5, 1, encoding="ascii")


class TestAdding:
    def test_bounds_and_markers(self):
        batch = gen_adding_problem(100, 500, seed=0)
        assert np.all((batch.labels >= 0) & (batch.labels <= 2))
        markers = batch.values[:, 1]
        assert np.all(markers.sum(axis=1) == 2)
        assert np.all(markers[:, :50].sum(axis=1) == 1)
        np.testing.assert_allclose(batch.labels, (batch.values[:, 0] * markers).sum(axis=1), rtol=1e-15)

    def test_mean_target(self):
        assert gen_adding_problem(100, 100_000, seed=1).labels.mean() == pytest.approx(1.0, abs=0.01)

    def test_too_short(self):
        with pytest.raises(ConfigError):
            gen_adding_problem(1, 1)


class TestTargets:
    def test_step(self):
        y = gen_targets("step", 10)
        np.testing.assert_array_equal(y, [-1] * 5 + [1] * 5)

    def test_sawtooth(self):
        y = gen_targets("sawtooth", 256)
        assert y.min() == -1 and y.max() == 1
        np.testing.assert_array_equal(y[:32], y[32:64])
        teeth = np.flatnonzero(np.diff(y) < 0) + 1
        np.testing.assert_array_equal(teeth, np.arange(32, 256, 32))

    def test_random_noise(self):
        a = gen_targets("random_noise", 500, seed=3)
        assert np.array_equal(a, gen_targets("random_noise", 500, seed=3))
        assert not np.array_equal(a, gen_targets("random_noise", 500, seed=4))
        assert np.all(np.abs(a) <= 1)

    @pytest.mark.parametrize("kind", ["gaussian", "step", "sawtooth", "sine", "random_noise"])
    def test_range(self, kind):
        y = gen_targets(kind, 64, seed=0)
        assert y.shape == (64,) and np.all(np.abs(y) <= 1.0)

    def test_errors(self):
        with pytest.raises(ConfigError):
            gen_targets("triangle", 10)
        with pytest.raises(ConfigError):
            gen_targets("sine", 1)


class TestWaveforms:
    def test_classes_and_shape(self):
        batch = gen_waveforms(64, 30, seed=0)
        assert batch.values.shape == (30, 1, 64)
        assert set(np.unique(batch.labels)) <= {0, 1, 2}

    def test_rate_interleaves(self):
        coarse = gen_waveforms(40, 5, seed=2, noise=0.0)
        fine = gen_waveforms(40, 5, seed=2, rate=2, noise=0.0)
        assert fine.length == 80
        np.testing.assert_allclose(fine.values[:, :, ::2], coarse.values, rtol=1e-12, atol=1e-12)
        np.testing.assert_array_equal(fine.positions[0, ::2], coarse.positions[0])


class TestSubsample:
    def test_identity(self):
        batch = gen_adding_problem(10, 2, seed=0)
        assert subsample(batch, 1) is batch

    @pytest.mark.parametrize("n", [2, 4, 8])
    def test_listing(self, n):
        batch = SequenceBatch.regular(np.arange(182.0)[None, None, :])
        sub = subsample(batch, n)
        one_indexed = (sub.positions[0] + 1).astype(int).tolist()
        assert one_indexed == list(range(1, 183, n))
        assert sub.length == math.ceil(182 / n)
        np.testing.assert_array_equal(sub.values[0, 0], sub.positions[0])

    def test_listing_stride_eight(self):
        sub = subsample(SequenceBatch.regular(np.zeros((1, 1, 182))), 8)
        listing = (sub.positions[0] + 1).astype(int).tolist()
        assert listing[:3] == [1, 9, 17] and listing[-3:] == [161, 169, 177]

    def test_length_four(self):
        assert subsample(SequenceBatch.regular(np.zeros((1, 1, 182))), 4).length == 46

    @given(st.integers(1, 5), st.integers(1, 5), st.integers(1, 200))
    def test_composition(self, a, b, t):
        batch = SequenceBatch.regular(np.zeros((1, 1, t)))
        np.testing.assert_array_equal(subsample(subsample(batch, a), b).positions,
                                      subsample(batch, a * b).positions)

    def test_sequence_labels_follow(self):
        sub = subsample(gen_copy_memory(4, 2, seed=0), 2)
        assert sub.labels.shape == (2, 12)

    def test_bad_factor(self):
        with pytest.raises(ConfigError):
            subsample(SequenceBatch.regular(np.zeros((1, 1, 4))), 0)


class TestRandomDrop:
    def test_zero_rate(self, rng):
        batch = SequenceBatch.regular(rng.standard_normal((2, 3, 50)))
        out = random_drop(batch, 0.0, seed=1)
        assert np.all(out.mask == 1) and np.array_equal(out.values, batch.values)

    def test_kept_fraction(self, rng):
        out = random_drop(SequenceBatch.regular(rng.standard_normal((1, 1, 10_000))), 0.5, seed=2)
        assert out.mask.mean() == pytest.approx(0.5, abs=0.02)

    def test_dropped_are_zero(self, rng):
        out = random_drop(SequenceBatch.regular(rng.standard_normal((3, 2, 100)) + 5.0), 0.7, seed=3)
        dropped = out.mask[:, 0] == 0
        assert dropped.any()
        assert np.all(out.values.transpose(1, 0, 2)[:, dropped] == 0)

    def test_protected_steps_survive(self, rng):
        protect = np.zeros((2, 40), dtype=bool)
        protect[:, [3, 30]] = True
        out = random_drop(SequenceBatch.regular(rng.standard_normal((2, 1, 40))), 0.9, seed=0, protect=protect)
        assert np.all(out.mask[:, 0, [3, 30]] == 1)

    def test_reproducible(self, rng):
        batch = SequenceBatch.regular(rng.standard_normal((2, 1, 100)))
        assert np.array_equal(random_drop(batch, 0.3, seed=9).mask, random_drop(batch, 0.3, seed=9).mask)

    @pytest.mark.parametrize("p", [-0.1, 1.0])
    def test_bad_rate(self, p):
        with pytest.raises(ConfigError):
            random_drop(SequenceBatch.regular(np.zeros((1, 1, 3))), p)


class TestBatch:
    def test_unobserved_nonzero_rejected(self):
        with pytest.raises(DataError):
            SequenceBatch(np.ones((1, 1, 2)), np.array([[[1.0, 0.0]]]), np.array([[0.0, 1.0]]))

    def test_positions_increasing(self):
        with pytest.raises(DataError):
            SequenceBatch(np.ones((1, 1, 2)), np.ones((1, 1, 2)), np.array([[1.0, 1.0]]))

    def test_non_finite(self):
        with pytest.raises(DataError):
            SequenceBatch.regular(np.array([[[np.nan]]]))


def test_generators_are_pure():
    for gen in (gen_copy_memory, gen_adding_problem, gen_waveforms):
        a, b = gen(12, 3, seed=5), gen(12, 3, seed=5)
        assert np.array_equal(a.values, b.values) and np.array_equal(a.labels, b.labels)


class TestCsv:
    def test_three_rows(self, tmp_path):
        path = tmp_path / "a.csv"
        path.write_text("x,y\n1,2\n3,4\n5,6\n")
        batch = load_csv(path)
        assert batch.values.shape == (1, 2, 3)
        assert np.all(batch.mask == 1)
        np.testing.assert_array_equal(batch.values[0], [[1, 3, 5], [2, 4, 6]])

    def test_empty_cell_masked(self, tmp_path):
        path = tmp_path / "a.csv"
        path.write_text("x,y\n1,2\n3,\n5,6\n")
        batch = load_csv(path)
        np.testing.assert_array_equal(batch.mask[0, 0], [1, 0, 1])
        assert np.all(batch.values[0, :, 1] == 0)

    def test_groups_and_labels(self, tmp_path):
        path = tmp_path / "a.csv"
        path.write_text("id,t,x,label\na,0,1,0\na,1,2,1\nb,0,3,2\nb,2.5,4,2\nb,3,5,2\n")
        batch = load_csv(path)
        assert batch.values.shape == (2, 1, 3)
        np.testing.assert_array_equal(batch.labels, [1, 2])
        np.testing.assert_array_equal(batch.positions[1], [0, 2.5, 3])
        assert batch.positions[0, 2] > batch.positions[0, 1]

    def test_round_trip(self, tmp_path, rng):
        batch = random_drop(SequenceBatch.regular(rng.standard_normal((3, 2, 20)), rng.standard_normal(3)),
                            0.3, seed=1)
        path = tmp_path / "b.csv"
        write_csv(batch, path)
        back = load_csv(path)
        assert np.max(np.abs(back.values - batch.values)) <= 1e-12
        np.testing.assert_array_equal(back.mask, batch.mask)
        np.testing.assert_array_equal(back.positions, batch.positions)
        np.testing.assert_array_equal(back.labels, batch.labels)

    def test_malformed_row_line_number(self, tmp_path):
        path = tmp_path / "a.csv"
        path.write_text("x,y\n1,2\n3,abc\n")
        with pytest.raises(DataError, match="line 3"):
            load_csv(path)

    def test_wrong_field_count(self, tmp_path):
        path = tmp_path / "a.csv"
        path.write_text("x,y\n1,2\n3\n")
        with pytest.raises(DataError, match="line 3"):
            load_csv(path)

    def test_missing_column(self, tmp_path):
        path = tmp_path / "a.csv"
        path.write_text("x,y\n1,2\n")
        with pytest.raises(DataError, match="schema"):
            load_csv(path, CsvSchema(channels=["x", "z"]))

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError):
            load_csv(tmp_path / "none.csv")
