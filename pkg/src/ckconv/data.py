"""Sequence batches, synthetic task generators, resampling transforms and CSV I/O."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError

COPY_MEMORY_TOKENS = 10
COPY_MEMORY_CLASSES = 9
COPY_MEMORY_RECALL = 10
TARGET_KINDS = ("gaussian", "step", "sawtooth", "sine", "random_noise")


@dataclass
class SequenceBatch:
    """Batched multichannel sequences.

    values (B, C, T); mask (B, 1, T) with 1 where observed; positions (B, T)
    time stamps in train-time unit steps; labels either (B,) or (B, T);
    density optional (B, T) sample weights.
    """

    values: np.ndarray
    mask: np.ndarray
    positions: np.ndarray
    labels: np.ndarray | None = None
    density: np.ndarray | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 3:
            raise DataError(f"values must have shape (batch, channel, time), got {self.values.shape}")
        b, _, t = self.values.shape
        self.mask = np.asarray(self.mask, dtype=np.float64)
        self.positions = np.asarray(self.positions, dtype=np.float64)
        if self.mask.shape != (b, 1, t):
            raise DataError(f"mask must have shape {(b, 1, t)}, got {self.mask.shape}")
        if self.positions.shape != (b, t):
            raise DataError(f"positions must have shape {(b, t)}, got {self.positions.shape}")
        if not np.isin(self.mask, (0.0, 1.0)).all():
            raise DataError("mask entries must be 0 or 1")
        if np.any((self.mask == 0) & (self.values != 0)):
            raise DataError("unobserved entries must hold value 0")
        if t > 1 and np.any(np.diff(self.positions, axis=1) <= 0):
            raise DataError("positions must be strictly increasing within every sample")
        if not np.isfinite(self.values).all():
            raise DataError("values contain NaN or Inf")
        if self.density is not None:
            self.density = np.asarray(self.density, dtype=np.float64)
            if self.density.shape != (b, t):
                raise DataError(f"density must have shape {(b, t)}")

    @classmethod
    def regular(cls, values, labels=None) -> "SequenceBatch":
        values = np.asarray(values, dtype=np.float64)
        b, _, t = values.shape
        positions = np.broadcast_to(np.arange(t, dtype=np.float64), (b, t)).copy()
        return cls(values, np.ones((b, 1, t)), positions, labels)

    @property
    def batch_size(self) -> int:
        return self.values.shape[0]

    @property
    def channels(self) -> int:
        return self.values.shape[1]

    @property
    def length(self) -> int:
        return self.values.shape[2]

    @property
    def fully_observed(self) -> bool:
        return bool(self.mask.all())

    def take(self, index) -> "SequenceBatch":
        index = np.asarray(index)
        return SequenceBatch(
            self.values[index], self.mask[index], self.positions[index],
            None if self.labels is None else self.labels[index],
            None if self.density is None else self.density[index])

    def observed(self, b: int):
        """(positions, values (C, M)) of the observed columns of sample ``b``."""
        obs = np.flatnonzero(self.mask[b, 0] > 0)
        return self.positions[b, obs], self.values[b][:, obs]


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def gen_copy_memory(T: int, batch: int, seed=0, encoding: str = "integer") -> SequenceBatch:
    """Copy-memory sequences of length T + 20.

    Ten digits from {1..8}, T - 1 zeros, then eleven 9s. Targets are zero
    except the last ten steps, which repeat the leading digits.
    """
    if T < 1:
        raise ConfigError(f"copy-memory delay T must be >= 1, got {T}")
    rng = _rng(seed)
    length = T + 20
    digits = rng.integers(1, 9, size=(batch, COPY_MEMORY_RECALL))
    tokens = np.zeros((batch, length), dtype=np.int64)
    tokens[:, :COPY_MEMORY_RECALL] = digits
    tokens[:, T + 9:] = 9
    labels = np.zeros((batch, length), dtype=np.int64)
    labels[:, -COPY_MEMORY_RECALL:] = digits
    if encoding == "integer":
        values = tokens[:, None, :].astype(np.float64)
    elif encoding == "onehot":
        values = np.eye(COPY_MEMORY_TOKENS)[tokens].transpose(0, 2, 1)
    else:
        raise ConfigError(f"unknown copy-memory encoding '{encoding}'")
    return SequenceBatch.regular(values, labels)


def gen_adding_problem(T: int, batch: int, seed=0) -> SequenceBatch:
    """Adding-problem sequences (B, 2, T): uniform values plus two markers, one per half."""
    if T < 2:
        raise ConfigError(f"adding-problem length must be >= 2, got {T}")
    rng = _rng(seed)
    values = rng.uniform(0.0, 1.0, size=(batch, T))
    first = rng.integers(0, T // 2, size=batch)
    second = rng.integers(T // 2, T, size=batch)
    markers = np.zeros((batch, T))
    rows = np.arange(batch)
    markers[rows, first] = 1.0
    markers[rows, second] = 1.0
    labels = values[rows, first] + values[rows, second]
    return SequenceBatch.regular(np.stack([values, markers], axis=1), labels)


def gen_waveforms(T: int, batch: int, seed=0, rate: int = 1, noise: float = 0.05) -> SequenceBatch:
    """Band-limited three-class signals: Gaussian bump, 2-period and 4-period sines.

    Phases, bump centres and amplitudes are random. ``rate`` draws ``rate``
    samples per unit step (T * rate samples over the same time span), so one
    seed gives the same underlying signals at every rate.
    """
    if T < 2:
        raise ConfigError(f"waveform length must be >= 2, got {T}")
    if rate < 1 or int(rate) != rate:
        raise ConfigError(f"sampling rate must be a positive integer, got {rate}")
    rng = _rng(seed)
    labels = rng.integers(0, 3, size=batch)
    phase = rng.uniform(0.0, 2 * math.pi, size=batch)
    centre = rng.uniform(0.2, 0.8, size=batch)
    amp = rng.uniform(0.7, 1.3, size=batch)
    jitter = rng.standard_normal((batch, 8))
    u = np.arange(T * int(rate)) / (rate * (T - 1))        # time in [0, ~1]
    out = np.empty((batch, u.size))
    for b in range(batch):
        if labels[b] == 0:
            y = np.exp(-(u - centre[b]) ** 2 / (2 * 0.08 ** 2))
        else:
            y = np.sin(2 * math.pi * (2 if labels[b] == 1 else 4) * u + phase[b])
        smooth = sum(jitter[b, k] * np.sin(math.pi * (k + 1) * u) for k in range(8)) / 8
        out[b] = amp[b] * y + noise * smooth
    return SequenceBatch(out[:, None, :], np.ones((batch, 1, u.size)),
                         np.tile(np.arange(u.size) / rate, (batch, 1)), labels)


def _rescale(y: np.ndarray) -> np.ndarray:
    lo, hi = y.min(), y.max()
    return 2.0 * (y - lo) / (hi - lo) - 1.0


def gen_targets(kind: str, length: int, seed=0, teeth: int = 8, periods: int = 4) -> np.ndarray:
    """1-D fitting targets on ``length`` equispaced points, in [-1, 1]."""
    if length < 2:
        raise ConfigError(f"target length must be >= 2, got {length}")
    x = np.linspace(-1.0, 1.0, length)
    if kind == "gaussian":
        return _rescale(np.exp(-x ** 2 / (2 * 0.2 ** 2)))
    if kind == "step":
        return np.where(np.arange(length) < length // 2, -1.0, 1.0)
    if kind == "sawtooth":
        period = length / teeth
        return _rescale(np.floor(np.arange(length) % period))
    if kind == "sine":
        return _rescale(np.sin(math.pi * periods * x))
    if kind == "random_noise":
        return _rng(seed).uniform(-1.0, 1.0, size=length)
    raise ConfigError(f"unknown target kind '{kind}' (expected one of {', '.join(TARGET_KINDS)})")


def subsample(batch: SequenceBatch, n: int) -> SequenceBatch:
    """Keep columns 0, n, 2n, ...; positions keep their original time stamps."""
    if n < 1 or int(n) != n:
        raise ConfigError(f"subsampling factor must be a positive integer, got {n}")
    if n == 1:
        return batch
    labels = batch.labels
    if labels is not None and labels.ndim == 2:
        labels = labels[:, ::n]
    return SequenceBatch(batch.values[:, :, ::n], batch.mask[:, :, ::n], batch.positions[:, ::n], labels,
                         None if batch.density is None else batch.density[:, ::n])


def random_drop(batch: SequenceBatch, p: float, seed=0, protect=None) -> SequenceBatch:
    """Drop each time step independently with probability ``p`` (value and mask set to 0).

    ``protect`` is an optional (B, T) boolean array of steps that are never dropped.
    """
    if not 0.0 <= p < 1.0:
        raise ConfigError(f"drop rate must lie in [0, 1), got {p}")
    keep = _rng(seed).random((batch.batch_size, 1, batch.length)) >= p
    if protect is not None:
        keep |= np.asarray(protect, dtype=bool)[:, None, :]
    keep = keep.astype(np.float64)
    mask = batch.mask * keep
    return replace(batch, values=batch.values * mask, mask=mask, density=None)


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------

@dataclass
class CsvSchema:
    """Column roles. ``channels=None`` takes every non-reserved column, in file order.

    ``label_mode`` is "sequence" (label of the last row) or "step" (one per row).
    """

    channels: list | None = None
    time_column: str = "t"
    mask_column: str = "mask"
    label_column: str = "label"
    id_column: str | None = "id"
    label_mode: str = "sequence"
    required: list = field(default_factory=list)


def _parse(cell: str, line: int, column: str) -> float | None:
    cell = cell.strip()
    if cell == "" or cell.lower() == "nan":
        return None
    try:
        return float(cell)
    except ValueError:
        raise DataError(f"line {line}: column '{column}' holds non-numeric value {cell!r}") from None


def load_csv(path, schema: CsvSchema | None = None) -> SequenceBatch:
    """Read one sequence per file, or one per distinct ``id`` value."""
    schema = schema or CsvSchema()
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such file: {path}")
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        rows = [(i, r) for i, r in enumerate(reader, start=2) if r and any(c.strip() for c in r)]

    reserved = {schema.time_column, schema.mask_column, schema.label_column, schema.id_column}
    channels = schema.channels or [h for h in header if h not in reserved]
    missing = [c for c in list(channels) + list(schema.required) if c not in header]
    if missing:
        raise DataError(f"{path}: schema error, missing required column(s) {missing}")
    if not channels:
        raise DataError(f"{path}: schema error, no data channels")
    col = {h: i for i, h in enumerate(header)}

    groups: dict = {}
    for line, row in rows:
        if len(row) != len(header):
            raise DataError(f"line {line}: expected {len(header)} fields, found {len(row)}")
        key = row[col[schema.id_column]].strip() if schema.id_column in col else ""
        groups.setdefault(key, []).append((line, row))

    seqs = []
    for key, grp in groups.items():
        vals = np.zeros((len(channels), len(grp)))
        mask = np.ones(len(grp))
        times = np.arange(len(grp), dtype=np.float64)
        labels = []
        for j, (line, row) in enumerate(grp):
            for c, name in enumerate(channels):
                v = _parse(row[col[name]], line, name)
                if v is None:
                    mask[j] = 0.0
                else:
                    vals[c, j] = v
            if schema.mask_column in col:
                m = _parse(row[col[schema.mask_column]], line, schema.mask_column)
                if m is not None and m == 0:
                    mask[j] = 0.0
            if schema.time_column in col:
                t = _parse(row[col[schema.time_column]], line, schema.time_column)
                if t is None:
                    raise DataError(f"line {line}: missing time stamp")
                times[j] = t
            if schema.label_column in col:
                labels.append(_parse(row[col[schema.label_column]], line, schema.label_column))
        vals *= mask
        seqs.append((vals, mask, times, labels))

    length = max(len(s[2]) for s in seqs)
    b = len(seqs)
    values = np.zeros((b, len(channels), length))
    masks = np.zeros((b, 1, length))
    positions = np.zeros((b, length))
    has_labels = schema.label_column in col
    step_labels = np.zeros((b, length))
    seq_labels = np.zeros(b)
    for i, (vals, mask, times, labels) in enumerate(seqs):
        m = len(times)
        values[i, :, :m] = vals
        masks[i, 0, :m] = mask
        positions[i, :m] = times
        positions[i, m:] = times[-1] + np.arange(1, length - m + 1)
        if has_labels:
            lab = np.array([np.nan if v is None else v for v in labels])
            step_labels[i, :m] = np.nan_to_num(lab)
            seq_labels[i] = lab[-1]
    labels = None
    if has_labels:
        labels = step_labels if schema.label_mode == "step" else seq_labels
    return SequenceBatch(values, masks, positions, labels)


def write_csv(batch: SequenceBatch, path, channel_names=None) -> None:
    """Write ``batch`` in the layout :func:`load_csv` reads (unobserved cells left empty)."""
    names = channel_names or [f"x{c}" for c in range(batch.channels)]
    header = ["id", "t"] + list(names) + ["mask"]
    labels = batch.labels
    if labels is not None:
        header.append("label")
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for b in range(batch.batch_size):
            for j in range(batch.length):
                observed = batch.mask[b, 0, j] > 0
                row = [b, repr(float(batch.positions[b, j]))]
                row += [repr(float(v)) if observed else "" for v in batch.values[b, :, j]]
                row.append(int(observed))
                if labels is not None:
                    lab = labels[b, j] if labels.ndim == 2 else labels[b]
                    row.append(repr(float(lab)))
                w.writerow(row)
