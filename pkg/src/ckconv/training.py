"""Experiment configuration, the training loop, evaluation, kernel fitting and checkpoints."""
from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Callable

import numpy as np

from . import functional as F
from . import tensor as tn
from .data import (COPY_MEMORY_CLASSES, COPY_MEMORY_RECALL, CsvSchema, SequenceBatch, gen_adding_problem,
                   gen_copy_memory, gen_targets, gen_waveforms, load_csv, random_drop, subsample)
from .errors import CompatibilityError, ConfigError, DataError, DivergenceError
from .kernelnet import KernelNet, init_default, init_siren, init_uniform_knots, make_grid, sample_kernel
from .models import CkcnnConfig, CkcnnModel, build
from .optim import Adam, PlateauScheduler, check_finite
from .tensor import Tensor

TASKS = ("adding", "copy_memory", "waveforms", "linear_regression", "csv")
SUCCESS_LOSS = 1e-4
EVAL_CHUNK = 512


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

def _from_dict(cls, d: dict, where: str):
    if not isinstance(d, dict):
        raise ConfigError(f"'{where}' must be a JSON object")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(d) - known)
    if unknown:
        raise ConfigError(f"unknown keys in '{where}': {unknown}")
    try:
        return cls(**d)
    except TypeError as exc:
        raise ConfigError(f"bad '{where}' section: {exc}") from None


@dataclass
class TaskSpec:
    """Which data to train on.

    ``samples`` sequences are generated per seed; ``val_fraction`` of them are
    held out. ``protect_markers`` keeps adding-problem markers observed when
    data are dropped, so the target stays a function of the observed inputs.
    """

    name: str = "adding"
    length: int = 100
    samples: int = 10000
    val_fraction: float = 0.1
    encoding: str = "integer"
    protect_markers: bool = True
    train_path: str | None = None
    val_path: str | None = None
    label_mode: str = "sequence"
    loss: str = "cross_entropy"
    classes: int | None = None

    def validate(self) -> None:
        bad = []
        if self.name not in TASKS:
            bad.append("task.name")
        if self.length < 2:
            bad.append("task.length")
        if self.samples < 2 and self.name != "csv":
            bad.append("task.samples")
        if not 0.0 < self.val_fraction < 1.0:
            bad.append("task.val_fraction")
        if self.loss not in ("mse", "cross_entropy"):
            bad.append("task.loss")
        if self.name == "csv" and not self.train_path:
            bad.append("task.train_path")
        if bad:
            raise ConfigError(f"invalid task config: {', '.join(bad)}")


@dataclass
class ResampleSpec:
    """Resolution relative to training: keep every ``stride``-th step, ``sr_ratio`` samples per
    train step, and drop a fraction ``drop`` of the steps at random."""

    stride: int = 1
    sr_ratio: float = 1
    drop: float = 0.0
    drop_seed: int = 0

    def validate(self) -> None:
        bad = []
        if int(self.stride) != self.stride or self.stride < 1:
            bad.append("resample.stride")
        if self.sr_ratio <= 0:
            bad.append("resample.sr_ratio")
        if not 0.0 <= self.drop < 1.0:
            bad.append("resample.drop")
        if bad:
            raise ConfigError(f"invalid resampling config: {', '.join(bad)}")


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 32
    lr: float = 1e-3
    weight_decay: float = 0.0
    patience: int = 20
    decay_factor: float = 5.0
    seed: int = 0
    model_type: str = "ckcnn"
    task: TaskSpec = field(default_factory=TaskSpec)
    model: CkcnnConfig = field(default_factory=CkcnnConfig)
    resample: ResampleSpec = field(default_factory=ResampleSpec)
    max_wall_time: float | None = None
    success_stop: bool = True
    stop_at: float | None = None
    out_dir: str | None = None
    deterministic: bool = False

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        task = _from_dict(TaskSpec, d.pop("task", {}), "task")
        model = _from_dict(CkcnnConfig, d.pop("model", {}), "model")
        resample = _from_dict(ResampleSpec, d.pop("resample", {}), "resample")
        cfg = _from_dict(cls, d, "train")
        cfg.task, cfg.model, cfg.resample = task, model, resample
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        return asdict(self)

    def validate(self) -> None:
        bad = []
        if not isinstance(self.epochs, int) or self.epochs < 1:
            bad.append("epochs")
        if not isinstance(self.batch_size, int) or self.batch_size < 1:
            bad.append("batch_size")
        if not self.lr > 0:
            bad.append("lr")
        if self.weight_decay < 0:
            bad.append("weight_decay")
        if not isinstance(self.patience, int) or self.patience < 1:
            bad.append("patience")
        if not self.decay_factor > 1:
            bad.append("decay_factor")
        if self.model_type not in ("ckcnn", "linear"):
            bad.append("model_type")
        if self.max_wall_time is not None and self.max_wall_time <= 0:
            bad.append("max_wall_time")
        if self.stop_at is not None and not math.isfinite(self.stop_at):
            bad.append("stop_at")
        if bad:
            raise ConfigError(f"invalid training config: {', '.join(bad)}")
        self.task.validate()
        self.resample.validate()
        if self.resample.sr_ratio != 1:
            raise ConfigError("resample.sr_ratio must be 1 for training (it describes test data)")
        self.model.validate()


# ---------------------------------------------------------------------------
# tasks
# ---------------------------------------------------------------------------

@dataclass
class TaskData:
    """Train/validation batches plus how to score them."""

    train: SequenceBatch
    val: SequenceBatch
    kind: str            # "regression" or "classification"
    head: str            # "label" or "sequence"
    out_dim: int
    metric_name: str
    scored_steps: int | None = None   # classification: score only the last n steps

    @property
    def in_channels(self) -> int:
        return self.train.channels

    @property
    def train_max_len(self) -> int:
        return max(1, self.train.length - 1)

    @property
    def higher_is_better(self) -> bool:
        return self.kind == "classification"


def _split(batch: SequenceBatch, val_fraction: float, seed) -> tuple[SequenceBatch, SequenceBatch]:
    n = batch.batch_size
    n_val = max(1, int(round(n * val_fraction)))
    order = np.random.default_rng(seed).permutation(n)
    return batch.take(np.sort(order[n_val:])), batch.take(np.sort(order[:n_val]))


def _linear_regression(length: int, samples: int, seed) -> SequenceBatch:
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((samples, 1, length))
    y = 1.5 * x[:, 0, -1] - 0.5 + 0.01 * rng.standard_normal(samples)
    return SequenceBatch.regular(x, y)


def generate_task(task: TaskSpec, seed: int, rate: int = 1) -> SequenceBatch:
    """Full generated dataset (before the train/validation split)."""
    if rate != 1 and task.name != "waveforms":
        raise ConfigError(f"task '{task.name}' has no generator for finer sampling rates")
    if task.name == "adding":
        return gen_adding_problem(task.length, task.samples, seed)
    if task.name == "copy_memory":
        return gen_copy_memory(task.length, task.samples, seed, encoding=task.encoding)
    if task.name == "waveforms":
        return gen_waveforms(task.length, task.samples, seed, rate=rate)
    if task.name == "linear_regression":
        return _linear_regression(task.length, task.samples, seed)
    raise ConfigError(f"task '{task.name}' is not generated")


def _apply_drop(batch: SequenceBatch, task: TaskSpec, p: float, seed) -> SequenceBatch:
    if p == 0:
        return batch
    protect = None
    if task.name == "adding" and task.protect_markers:
        protect = batch.values[:, 1, :] > 0
    return random_drop(batch, p, seed, protect=protect)


def prepare_task(config: TrainConfig, rate: int = 1) -> TaskData:
    """Build train/validation data for ``config`` with its training-time resampling applied."""
    task = config.task
    seeds = np.random.SeedSequence(config.seed).spawn(4)
    data_seed, split_seed, drop_seed = (np.random.default_rng(s) for s in seeds[:3])
    if task.name == "csv":
        schema = CsvSchema(label_mode="sequence" if task.label_mode == "sequence" else "step")
        train = load_csv(task.train_path, schema)
        if task.val_path:
            val = load_csv(task.val_path, schema)
        else:
            train, val = _split(train, task.val_fraction, split_seed)
        if train.labels is None:
            raise DataError(f"{task.train_path}: no label column")
    else:
        train, val = _split(generate_task(task, data_seed, rate), task.val_fraction, split_seed)
    stride = config.resample.stride
    train, val = subsample(train, stride), subsample(val, stride)
    train = _apply_drop(train, task, config.resample.drop, drop_seed)
    val = _apply_drop(val, task, config.resample.drop, drop_seed)

    if task.name == "adding" or task.name == "linear_regression":
        return TaskData(train, val, "regression", "label", 1, "mse")
    if task.name == "copy_memory":
        return TaskData(train, val, "classification", "sequence", COPY_MEMORY_CLASSES, "accuracy",
                        scored_steps=COPY_MEMORY_RECALL)
    if task.name == "waveforms":
        return TaskData(train, val, "classification", "label", 3, "accuracy")
    head = "label" if train.labels.ndim == 1 else "sequence"
    if task.loss == "mse":
        return TaskData(train, val, "regression", head, 1, "mse")
    classes = task.classes or int(np.max(train.labels)) + 1
    return TaskData(train, val, "classification", head, classes, "accuracy")


# ---------------------------------------------------------------------------
# models
# ---------------------------------------------------------------------------

class LinearReadout:
    """Affine map of the last time step; a convex baseline for smoke tests."""

    def __init__(self, in_channels: int, out_dim: int, seed: int = 0):
        rng = np.random.default_rng(seed)
        bound = 1.0 / math.sqrt(in_channels)
        self.in_channels = in_channels
        self.weight = Tensor(rng.uniform(-bound, bound, (out_dim, in_channels)), True)
        self.bias = Tensor(np.zeros(out_dim), True)

    def parameters(self) -> dict:
        return {"linear.weight": self.weight, "linear.bias": self.bias}

    def decay_parameters(self) -> set:
        return {"linear.weight"}

    def num_parameters(self) -> int:
        return self.weight.size + self.bias.size

    def __call__(self, batch: SequenceBatch, mode: str = "eval", stride: int = 1, sr_ratio=1) -> Tensor:
        last = Tensor._wrap(batch.values[:, :, -1])
        return tn.matmul(last, tn.transpose(self.weight)) + self.bias


def make_model(config: TrainConfig, data: TaskData):
    if config.model_type == "linear":
        return LinearReadout(data.in_channels, data.out_dim, config.seed)
    model_cfg = replace(config.model, head=data.head)
    if config.resample.drop > 0 and not model_cfg.mask_channel:
        model_cfg = replace(model_cfg, mask_channel=True)
    return build(model_cfg, data.in_channels, data.out_dim, data.train_max_len, config.seed)


# ---------------------------------------------------------------------------
# losses and metrics
# ---------------------------------------------------------------------------

def task_loss(pred: Tensor, batch: SequenceBatch, data: TaskData) -> Tensor:
    if data.kind == "regression":
        return F.mse(tn.reshape(pred, (-1,)), batch.labels.reshape(-1).astype(np.float64))
    return F.cross_entropy(tn.reshape(pred, (-1, data.out_dim)), batch.labels.reshape(-1))


def task_metric(pred: np.ndarray, batch: SequenceBatch, data: TaskData) -> float:
    if data.kind == "regression":
        return float(np.mean((pred.reshape(-1) - batch.labels.reshape(-1)) ** 2))
    guess = pred.argmax(axis=-1)
    labels = batch.labels
    if data.scored_steps:
        guess, labels = guess[:, -data.scored_steps:], labels[:, -data.scored_steps:]
    return float(np.mean(guess == labels))


def predict(model, batch: SequenceBatch, stride: int = 1, sr_ratio=1) -> np.ndarray:
    """Eval-mode predictions, computed in chunks without recording gradients."""
    outs = []
    with tn.no_grad():
        for start in range(0, batch.batch_size, EVAL_CHUNK):
            chunk = batch.take(np.arange(start, min(start + EVAL_CHUNK, batch.batch_size)))
            outs.append(model(chunk, "eval", stride, sr_ratio).data)
    return np.concatenate(outs, axis=0)


def score(model, batch: SequenceBatch, data: TaskData, stride: int = 1, sr_ratio=1) -> tuple[float, float]:
    """(loss, metric) of ``model`` on ``batch``."""
    pred = predict(model, batch, stride, sr_ratio)
    loss = task_loss(Tensor._wrap(pred), batch, data).item()
    return loss, task_metric(pred, batch, data)


def succeeded(loss: float, metric: float, data: TaskData) -> bool:
    """Success rule: perfect accuracy, or a loss at or below 1e-4 for regression."""
    if data.kind == "classification":
        return metric >= 1.0
    return loss <= SUCCESS_LOSS


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def _rng_state(rng: np.random.Generator) -> dict:
    return rng.bit_generator.state


def save_checkpoint(path, model, optimizer: Adam | None, config: dict, step: int, epoch: int = 0,
                    extra: dict | None = None) -> Path:
    """Write parameters, optimizer moments and metadata to one ``.npz`` archive."""
    path = Path(path)
    arrays = {f"param/{k}": p.data for k, p in model.parameters().items()}
    meta = {"config": config, "seed": config.get("seed"), "step": step, "epoch": epoch, "extra": extra or {}}
    if optimizer is not None:
        st = optimizer.state
        for k in st.m:
            arrays[f"adam_m/{k}"] = st.m[k]
            arrays[f"adam_v/{k}"] = st.v[k]
        meta["optimizer"] = {"t": st.t, "lr": st.lr, "beta1": st.beta1, "beta2": st.beta2, "eps": st.eps,
                             "weight_decay": optimizer.weight_decay}
    if isinstance(model, CkcnnModel):
        meta["dropout_rng"] = _rng_state(model.rng)
    arrays["meta"] = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
    tmp = path.with_name(path.name + ".tmp.npz")
    np.savez(tmp, **arrays)
    tmp.replace(path)
    return path


@dataclass
class Checkpoint:
    meta: dict
    params: dict
    adam_m: dict
    adam_v: dict

    @property
    def config(self) -> dict:
        return self.meta["config"]

    @property
    def step(self) -> int:
        return self.meta["step"]


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise DataError(f"checkpoint {path} does not exist")
    try:
        with np.load(path) as z:
            files = {k: z[k].copy() for k in z.files}
        meta = json.loads(files.pop("meta").tobytes().decode())
    except (OSError, ValueError, KeyError) as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from None
    groups = {"param": {}, "adam_m": {}, "adam_v": {}}
    for key, arr in files.items():
        group, name = key.split("/", 1)
        groups[group][name] = arr
    return Checkpoint(meta, groups["param"], groups["adam_m"], groups["adam_v"])


def load_parameters(model, params: dict) -> None:
    """Copy arrays into ``model``; names and shapes must match exactly."""
    own = model.parameters()
    if set(own) != set(params):
        missing, surplus = sorted(set(own) - set(params)), sorted(set(params) - set(own))
        raise CompatibilityError(f"checkpoint does not fit the model (missing {missing[:5]}, "
                                 f"unexpected {surplus[:5]})")
    for name, p in own.items():
        if p.data.shape != params[name].shape:
            raise CompatibilityError(f"parameter '{name}' has shape {params[name].shape}, "
                                     f"model expects {p.data.shape}")
    for name, p in own.items():
        p.data[...] = params[name]
        p.version += 1


def restore(path) -> tuple[TrainConfig, object, TaskData, Checkpoint]:
    """Rebuild the model of a checkpoint along with its task data."""
    ckpt = load_checkpoint(path)
    config = TrainConfig.from_dict(ckpt.config)
    data = prepare_task(config)
    model = make_model(config, data)
    load_parameters(model, ckpt.params)
    if isinstance(model, CkcnnModel) and "dropout_rng" in ckpt.meta:
        model.rng.bit_generator.state = ckpt.meta["dropout_rng"]
    return config, model, data, ckpt


def restore_optimizer(optimizer: Adam, ckpt: Checkpoint) -> None:
    st = optimizer.state
    opt = ckpt.meta["optimizer"]
    st.t, st.lr, st.beta1, st.beta2, st.eps = opt["t"], opt["lr"], opt["beta1"], opt["beta2"], opt["eps"]
    for k in st.m:
        st.m[k] = ckpt.adam_m[k].copy()
        st.v[k] = ckpt.adam_v[k].copy()


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

@dataclass
class TrainResult:
    model: object
    records: list
    status: str                 # "success", "target", "completed", "budget" or "diverged"
    best_metric: float
    best_epoch: int
    steps: int
    data: TaskData
    out_dir: Path | None = None


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def train(config: TrainConfig, on_epoch: Callable[[dict], None] | None = None) -> TrainResult:
    """Run ``config`` to completion.

    Writes ``config.json`` (the resolved config), ``metrics.jsonl`` (one record
    per epoch) and ``best.npz`` into ``config.out_dir`` when it is set. Stops
    early once the validation data meet the success rule, or reach ``stop_at``
    (a validation-metric threshold), or the wall-clock budget runs out. A non-finite loss
    raises :class:`DivergenceError` after recording the status; ``best.npz``
    then holds the last good parameters.
    """
    config.validate()
    out = Path(config.out_dir) if config.out_dir else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out / "config.json", config.to_dict())
        (out / "metrics.jsonl").write_text("")
    data = prepare_task(config)
    model = make_model(config, data)
    params = model.parameters()
    opt = Adam(params, lr=config.lr, weight_decay=config.weight_decay, decay=model.decay_parameters())
    sched = PlateauScheduler(config.lr, patience=config.patience, decay_factor=config.decay_factor)
    shuffle = np.random.default_rng(np.random.SeedSequence(config.seed).spawn(4)[3])
    n = data.train.batch_size
    sign = -1.0 if data.higher_is_better else 1.0
    best, best_epoch, step = math.inf, 0, 0
    records, status = [], "completed"
    start = time.perf_counter()
    cfg_dict = config.to_dict()

    def finish(status: str) -> TrainResult:
        if out is not None:
            _write_json(out / "summary.json", {
                "status": status, "best_epoch": best_epoch, "best_val_metric": sign * best,
                "metric": data.metric_name, "steps": step, "epochs_run": len(records),
                "parameters": model.num_parameters(), "wall_time": time.perf_counter() - start})
        return TrainResult(model, records, status, sign * best, best_epoch, step, data, out)

    for epoch in range(1, config.epochs + 1):
        order = shuffle.permutation(n)
        losses = []
        for lo in range(0, n, config.batch_size):
            batch = data.train.take(order[lo:lo + config.batch_size])
            loss = task_loss(model(batch, "train"), batch, data)
            value = loss.item() if np.isfinite(loss.data).all() else math.nan
            if not math.isfinite(value):
                finish("diverged")
                raise DivergenceError(f"non-finite training loss at epoch {epoch}, step {step + 1}")
            opt.zero_grad()
            tn.backward(loss)
            try:
                opt.step()
                check_finite(params)
            except DivergenceError:
                finish("diverged")
                raise
            step += 1
            losses.append(value)
        val_loss, val_metric = score(model, data.val, data)
        if not math.isfinite(val_loss):
            finish("diverged")
            raise DivergenceError(f"non-finite validation loss at epoch {epoch}")
        record = {"epoch": epoch, "train_loss": float(np.mean(losses)), "val_loss": val_loss,
                  "val_metric": val_metric, "lr": opt.lr, "wall_time": time.perf_counter() - start}
        records.append(record)
        if out is not None:
            with open(out / "metrics.jsonl", "a") as fh:
                fh.write(json.dumps(record) + "\n")
        if on_epoch is not None:
            on_epoch(record)
        if sign * val_metric < best:
            best, best_epoch = sign * val_metric, epoch
            if out is not None:
                save_checkpoint(out / "best.npz", model, opt, cfg_dict, step, epoch)
        opt.lr = sched.step(val_loss)
        if config.success_stop and succeeded(val_loss, val_metric, data):
            status = "success"
            break
        if config.stop_at is not None and sign * val_metric <= sign * config.stop_at:
            status = "target"
            break
        if config.max_wall_time is not None and time.perf_counter() - start > config.max_wall_time:
            status = "budget"
            break
    if out is not None:
        save_checkpoint(out / "last.npz", model, opt, cfg_dict, step, len(records))
    return finish(status)


def read_metrics(path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

def resample_batch(batch: SequenceBatch, spec: ResampleSpec, task: TaskSpec | None = None) -> SequenceBatch:
    """Apply test-time stride and random drop (sampling-rate changes come from the generator)."""
    out = subsample(batch, int(spec.stride))
    if spec.drop > 0:
        out = _apply_drop(out, task or TaskSpec(name="csv", train_path="-"), spec.drop, spec.drop_seed)
    return out


def evaluate(model, batch: SequenceBatch, data: TaskData, spec: ResampleSpec | None = None,
             task: TaskSpec | None = None) -> dict:
    """Metrics of ``model`` on ``batch`` after resampling it by ``spec``.

    ``batch`` must already be at ``spec.sr_ratio`` samples per train step.
    """
    spec = spec or ResampleSpec()
    spec.validate()
    if isinstance(model, CkcnnModel) and spec.drop > 0 and not model.config.mask_channel:
        raise CompatibilityError("dropped-sample evaluation needs a model trained with a mask channel")
    test = resample_batch(batch, spec, task)
    loss, metric = score(model, test, data, int(spec.stride), spec.sr_ratio)
    kept = test.mask.mean(axis=(1, 2))
    return {"loss": loss, data.metric_name: metric, "metric": data.metric_name, "samples": test.batch_size,
            "length": test.length, "stride": int(spec.stride), "sr_ratio": spec.sr_ratio, "drop": spec.drop,
            "kept_fraction_mean": float(kept.mean()), "kept_fraction_min": float(kept.min()),
            "kept_fraction_max": float(kept.max())}


def evaluation_set(config: TrainConfig, rate: int = 1) -> SequenceBatch:
    """Validation split of ``config``'s task at the training stride, before any random drop.

    ``rate`` > 1 regenerates the same signals with ``rate`` samples per train step.
    """
    task = config.task
    stride = config.resample.stride
    if rate != 1 and stride != 1:
        raise ConfigError("finer-rate evaluation of a model trained on strided data is not supported")
    seeds = np.random.SeedSequence(config.seed).spawn(4)
    data_seed, split_seed = (np.random.default_rng(s) for s in seeds[:2])
    if task.name == "csv":
        schema = CsvSchema(label_mode="sequence" if task.label_mode == "sequence" else "step")
        if task.val_path:
            val = load_csv(task.val_path, schema)
        else:
            val = _split(load_csv(task.train_path, schema), task.val_fraction, split_seed)[1]
    else:
        val = _split(generate_task(task, data_seed, rate), task.val_fraction, split_seed)[1]
    return subsample(val, stride)


# ---------------------------------------------------------------------------
# kernel fitting
# ---------------------------------------------------------------------------

@dataclass
class FitResult:
    kind: str
    nonlinearity: str
    init: str
    positions: np.ndarray
    target: np.ndarray
    fitted: np.ndarray
    history: list
    net: KernelNet

    @property
    def final_mse(self) -> float:
        return float(np.mean((self.fitted - self.target) ** 2))


def fit_kernel(kind: str, nonlinearity: str = "sine", init: str | None = None, omega0: float = 30.0,
               hidden: int = 32, depth: int = 3, steps: int = 2000, lr: float = 1e-3, length: int = 256,
               seed: int = 0, tol: float = 0.0, target: np.ndarray | None = None) -> FitResult:
    """Fit a scalar kernel network to a 1-D target sampled on ``length`` points of [-1, 1].

    ``init`` defaults to "siren" for Sine nets and "default" (zero biases) otherwise.
    Full-batch Adam on the mean squared error; stops early once the MSE is below ``tol``.
    """
    if target is None:
        target = gen_targets(kind, length, seed)
    target = np.asarray(target, dtype=np.float64)
    grid = make_grid(len(target) - 1, len(target))
    net = KernelNet(1, 1, hidden=hidden, depth=depth, nonlinearity=nonlinearity, omega0=omega0)
    init = init or ("siren" if nonlinearity == "sine" else "default")
    if init == "siren":
        init_siren(net, seed=seed)
    elif init == "uniform_knots":
        init_uniform_knots(net, seed=seed)
    elif init == "default":
        init_default(net, seed=seed)
    else:
        raise ConfigError(f"unknown kernel init '{init}'")
    opt = Adam(net.parameters(), lr=lr)
    history = []
    for step in range(1, steps + 1):
        pred = tn.reshape(sample_kernel(net, grid), (-1,))
        loss = F.mse(pred, target)
        history.append({"step": step, "mse": loss.item()})
        if loss.item() < tol:
            break
        opt.zero_grad()
        tn.backward(loss)
        opt.step()
    with tn.no_grad():
        fitted = sample_kernel(net, grid).data.reshape(-1)
    return FitResult(kind, nonlinearity, init, grid.positions, target, fitted, history, net)


# ---------------------------------------------------------------------------
# omega0 sweep
# ---------------------------------------------------------------------------

def sweep_omega0(config: TrainConfig, lo: float = 1.0, hi: float = 100.0, points: int = 5, rounds: int = 2,
                 on_trial: Callable[[dict], None] | None = None) -> list[dict]:
    """Coarse-to-fine grid search of omega0 by validation metric.

    Each round evaluates ``points`` equispaced values in [lo, hi], then narrows
    the interval to the neighbours of the best value.
    """
    if points < 2 or rounds < 1 or not 1.0 <= lo < hi <= 100.0:
        raise ConfigError("sweep needs points >= 2, rounds >= 1 and 1 <= lo < hi <= 100")
    trials, seen = [], {}
    best_value = None
    for rnd in range(rounds):
        grid = np.linspace(lo, hi, points)
        for w in grid:
            w = round(float(w), 6)
            if w in seen:
                continue
            trial_cfg = replace(config, model=replace(config.model, omega0=w), out_dir=None)
            result = train(trial_cfg)
            last = result.records[-1]
            rec = {"round": rnd, "omega0": w, "best_val_metric": result.best_metric,
                   "val_loss": last["val_loss"], "status": result.status}
            seen[w] = rec
            trials.append(rec)
            if on_trial is not None:
                on_trial(rec)
        sign = -1.0 if result.data.higher_is_better else 1.0
        best_value = min(seen.values(), key=lambda r: sign * r["best_val_metric"])["omega0"]
        step = (hi - lo) / (points - 1)
        lo, hi = max(1.0, best_value - step), min(100.0, best_value + step)
    for rec in trials:
        rec["best"] = rec["omega0"] == best_value
    return trials
