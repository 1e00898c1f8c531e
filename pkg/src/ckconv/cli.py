"""Command line entry point: ``ckconv <subcommand> ...``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 divergence.
"""
from __future__ import annotations

import argparse
import contextlib
import csv
import json
import sys
from pathlib import Path

import numpy as np

from .errors import CkconvError, ConfigError, DataError

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGED = 0, 2, 3, 4

# flag -> (section, key, type); section None means a top-level TrainConfig field
TRAIN_FLAGS = {
    "epochs": (None, "epochs", int),
    "batch_size": (None, "batch_size", int),
    "lr": (None, "lr", float),
    "weight_decay": (None, "weight_decay", float),
    "patience": (None, "patience", int),
    "decay_factor": (None, "decay_factor", float),
    "max_wall_time": (None, "max_wall_time", float),
    "task": ("task", "name", str),
    "length": ("task", "length", int),
    "samples": ("task", "samples", int),
    "train_path": ("task", "train_path", str),
    "val_path": ("task", "val_path", str),
    "hidden_channels": ("model", "hidden_channels", int),
    "omega0": ("model", "omega0", float),
    "num_blocks": ("model", "num_blocks", int),
    "dropout": ("model", "dropout", float),
    "mask_channel": ("model", "mask_channel", bool),
    "stride": ("resample", "stride", int),
    "drop": ("resample", "drop", float),
}


def _read_json(path) -> dict:
    try:
        with open(path) as fh:
            obj = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
    if not isinstance(obj, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    return obj


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON training config")
    for flag, (_, _, typ) in TRAIN_FLAGS.items():
        if typ is bool:
            p.add_argument(f"--{flag.replace('_', '-')}", dest=flag, action="store_true", default=None)
        else:
            p.add_argument(f"--{flag.replace('_', '-')}", dest=flag, type=typ)


def _train_config(args, require_out: bool = True):
    from .training import TrainConfig

    raw = _read_json(args.config) if args.config else {}
    for flag, (section, key, _) in TRAIN_FLAGS.items():
        value = getattr(args, flag, None)
        if value is None:
            continue
        if section is None:
            raw[key] = value
        else:
            raw.setdefault(section, {})[key] = value
    if args.seed is not None:
        raw["seed"] = args.seed
    elif "seed" not in raw:
        raise ConfigError("--seed is required")
    if args.out_dir is not None:
        raw["out_dir"] = args.out_dir
    elif require_out and not raw.get("out_dir"):
        raise ConfigError("--out-dir is required")
    raw["deterministic"] = bool(args.deterministic or raw.get("deterministic", False))
    return TrainConfig.from_dict(raw)


def _out_dir(args) -> Path:
    if not args.out_dir:
        raise ConfigError("--out-dir is required")
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_jsonl(path: Path, rows) -> None:
    with open(path, "w") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")


def _write_rows(path: Path, header: list, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _echo(out: Path, name: str, args) -> None:
    cfg = {k: v for k, v in vars(args).items() if k != "func"}
    (out / name).write_text(json.dumps(cfg, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_train(args) -> int:
    from .plotting import plot_training_curves
    from .training import train

    config = _train_config(args)
    log = (lambda r: print(json.dumps(r), flush=True)) if args.verbose else None
    result = train(config, on_epoch=log)
    if result.records:
        plot_training_curves(result.records, Path(config.out_dir) / "training_curves.png")
    print(json.dumps({"status": result.status, "best_val_metric": result.best_metric,
                      "best_epoch": result.best_epoch, "epochs": len(result.records),
                      "out_dir": str(result.out_dir)}))
    return EXIT_OK


def cmd_evaluate(args) -> int:
    from .training import ResampleSpec, evaluate, evaluation_set, restore

    config, model, data, ckpt = restore(args.checkpoint)
    if args.sr_ratio < 1:
        raise ConfigError("coarser test rates are expressed with --stride")
    spec = ResampleSpec(stride=args.stride, sr_ratio=args.sr_ratio, drop=args.drop, drop_seed=args.drop_seed)
    spec.validate()
    batch = evaluation_set(config, rate=int(args.sr_ratio))
    metrics = evaluate(model, batch, data, spec, config.task)
    metrics.update({"checkpoint": str(args.checkpoint), "step": ckpt.step})
    if args.out_dir:
        out = _out_dir(args)
        _echo(out, "evaluate_config.json", args)
        with open(out / "evaluation.jsonl", "a") as fh:
            fh.write(json.dumps(metrics) + "\n")
        if args.dump_kernels:
            _dump_kernels(model, out, metrics["length"], spec)
    print(json.dumps(metrics))
    return EXIT_OK


def _dump_kernels(model, out: Path, length: int, spec) -> None:
    from . import tensor as tn
    from .kernelnet import kernel_rows
    from .models import CkcnnModel

    if not isinstance(model, CkcnnModel):
        raise ConfigError("kernel dumps need a CKCNN checkpoint")
    with tn.no_grad():
        for i, block in enumerate(model.blocks):
            for name, conv in (("conv1", block.conv1), ("conv2", block.conv2)):
                grid = conv.grid(length, int(spec.stride), spec.sr_ratio)
                rows = ((repr(p), o, c, repr(v)) for p, o, c, v in kernel_rows(conv.kernel(grid).data, grid))
                _write_rows(out / f"kernel_block{i}_{name}.csv", ["position", "out_channel", "in_channel", "value"],
                            rows)


def cmd_fit_kernel(args) -> int:
    from .plotting import plot_fit, plot_fit_history
    from .training import fit_kernel

    out = _out_dir(args)
    _echo(out, "fit_config.json", args)
    res = fit_kernel(args.target, nonlinearity=args.nonlinearity, init=args.init, omega0=args.omega0,
                     hidden=args.hidden, depth=args.depth, steps=args.steps, lr=args.lr, length=args.length,
                     seed=args.seed)
    _write_jsonl(out / "fit.jsonl", res.history)
    _write_rows(out / "curve.csv", ["position", "target", "fit"],
                ((repr(float(p)), repr(float(t)), repr(float(f)))
                 for p, t, f in zip(res.positions, res.target, res.fitted)))
    label = f"{args.target}, {args.nonlinearity} ({res.init})"
    plot_fit(res.positions, res.target, res.fitted, out / "fit.png", title=f"{label}: MSE {res.final_mse:.2e}")
    plot_fit_history({label: res.history}, out / "fit_history.png")
    print(json.dumps({"target": args.target, "nonlinearity": args.nonlinearity, "init": res.init,
                      "steps": len(res.history), "final_mse": res.final_mse}))
    return EXIT_OK


def cmd_generate(args) -> int:
    from .data import gen_adding_problem, gen_copy_memory, gen_waveforms, random_drop, write_csv

    if args.task == "adding":
        batch = gen_adding_problem(args.length, args.samples, args.seed)
    elif args.task == "copy_memory":
        batch = gen_copy_memory(args.length, args.samples, args.seed, encoding=args.encoding)
    else:
        batch = gen_waveforms(args.length, args.samples, args.seed)
    if args.drop:
        batch = random_drop(batch, args.drop, args.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_csv(batch, out)
    print(json.dumps({"task": args.task, "samples": batch.batch_size, "length": batch.length, "path": str(out)}))
    return EXIT_OK


def cmd_resample_test(args) -> int:
    from .conv import CkconvLayer
    from .plotting import plot_responses
    from .reports import band_limited, blur_check, stride_agreement

    out = _out_dir(args)
    _echo(out, "resample_config.json", args)
    if args.checkpoint:
        from .training import restore
        _, model, _, _ = restore(args.checkpoint)
        layers = [(f"block{i}.{name}", conv) for i, block in enumerate(model.blocks)
                  for name, conv in (("conv1", block.conv1), ("conv2", block.conv2))]
    else:
        layers = [("layer", CkconvLayer(1, 1, train_max_len=args.length - 1, omega0=args.omega0, seed=args.seed))]
    rows, reports = [], []
    for layer_name, layer in layers:
        x = band_limited(2, layer.in_channels, args.length, max_freq=args.max_freq, seed=args.seed)
        for stride in args.strides:
            rep = stride_agreement(layer, x, stride)
            reports.append({"check": "stride", "layer": layer_name, "stride": stride, "rel_l2": rep["rel_l2"]})
            for i, t in enumerate(rep["time"]):
                rows.append((layer_name, stride, int(t), repr(float(rep["full"][0, 0, i])),
                             repr(float(rep["strided"][0, 0, i]))))
            plot_responses({"stride 1": (rep["time"], rep["full"][0, 0]),
                            f"stride {stride}": (rep["time"], rep["strided"][0, 0])},
                           out / f"{layer_name}_stride_{stride}.png",
                           title=f"{layer_name}: relative L2 {rep['rel_l2']:.3%}")
    for r in (2, 4):
        b = blur_check(r)
        reports.append({"check": "blur", "ratio": r, "taps": b["taps"].tolist(), "max_abs_err": b["max_abs_err"]})
    _write_rows(out / "responses.csv", ["layer", "stride", "t", "stride1", "strided"], rows)
    _write_jsonl(out / "report.jsonl", reports)
    for rep in reports:
        print(json.dumps(rep))
    return EXIT_OK


def cmd_equivalence_test(args) -> int:
    from .conv import CkconvLayer
    from .plotting import plot_errors
    from .reports import conv_equivalence, irregular_degenerate, rnn_equivalence

    out = _out_dir(args)
    _echo(out, "equivalence_config.json", args)
    rnn = rnn_equivalence(args.cases, length=args.length, seed=args.seed)
    conv = conv_equivalence(args.cases, seed=args.seed)
    layer = CkconvLayer(2, 3, train_max_len=args.length - 1, seed=args.seed)
    x = np.random.default_rng(args.seed).standard_normal((2, 2, args.length))
    irr = irregular_degenerate(layer, x)
    _write_jsonl(out / "rnn_equivalence.jsonl", rnn)
    _write_jsonl(out / "conv_equivalence.jsonl", conv)
    plot_errors({"linear RNN vs convolution": [r["rel_err"] for r in rnn],
                 "FFT vs direct": [r["rel_err"] for r in conv]}, out / "errors.png")
    summary = {"rnn_cases": len(rnn), "rnn_max_rel_err": max(r["rel_err"] for r in rnn),
               "conv_cases": len(conv), "conv_max_rel_err": max(r["rel_err"] for r in conv),
               "irregular_bitwise_equal": irr["bitwise_equal"], "irregular_max_abs_diff": irr["max_abs_diff"]}
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(json.dumps(summary))
    return EXIT_OK


def cmd_sweep(args) -> int:
    from .plotting import plot_sweep
    from .training import sweep_omega0

    config = _train_config(args)
    out = _out_dir(args)
    (out / "config.json").write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n")
    log = (lambda r: print(json.dumps(r), flush=True)) if args.verbose else None
    trials = sweep_omega0(config, args.lo, args.hi, args.points, args.rounds, on_trial=log)
    _write_jsonl(out / "sweep.jsonl", trials)
    plot_sweep(trials, out / "sweep.png")
    print(json.dumps(next(t for t in trials if t["best"])))
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ckconv", description="Continuous kernel convolution experiments")
    parser.add_argument("--deterministic", action="store_true", help="single-threaded, bit-reproducible numerics")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seed_default=None):
        p.add_argument("--seed", type=int, default=seed_default)
        p.add_argument("--out-dir")
        p.add_argument("--deterministic", action="store_true", default=argparse.SUPPRESS)

    p = sub.add_parser("train", help="train a model on a task")
    common(p)
    _add_train_flags(p)
    p.add_argument("--verbose", action="store_true", help="print each epoch record")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="evaluate a checkpoint, optionally at another resolution")
    common(p, 0)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--stride", type=int, default=1)
    p.add_argument("--sr-ratio", type=float, default=1)
    p.add_argument("--drop", type=float, default=0.0)
    p.add_argument("--drop-seed", type=int, default=0)
    p.add_argument("--dump-kernels", action="store_true", help="write every layer's sampled kernel as CSV")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("fit-kernel", help="fit a kernel network to a 1-D target")
    common(p, 0)
    p.add_argument("--target", required=True)
    p.add_argument("--nonlinearity", default="sine")
    p.add_argument("--init", default=None, choices=["siren", "uniform_knots", "default"])
    p.add_argument("--omega0", type=float, default=30.0)
    p.add_argument("--hidden", type=int, default=32)
    p.add_argument("--depth", type=int, default=3)
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--length", type=int, default=256)
    p.set_defaults(func=cmd_fit_kernel)

    p = sub.add_parser("generate", help="write a synthetic dataset as CSV")
    common(p, 0)
    p.add_argument("--task", required=True, choices=["adding", "copy_memory", "waveforms"])
    p.add_argument("--length", type=int, default=100)
    p.add_argument("--samples", type=int, default=16)
    p.add_argument("--encoding", default="integer", choices=["integer", "onehot"])
    p.add_argument("--drop", type=float, default=0.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("resample-test", help="compare responses across sampling strides")
    common(p, 0)
    p.add_argument("--checkpoint")
    p.add_argument("--length", type=int, default=512)
    p.add_argument("--omega0", type=float, default=30.0)
    p.add_argument("--max-freq", type=float, default=0.1)
    p.add_argument("--strides", type=int, nargs="+", default=[2])
    p.set_defaults(func=cmd_resample_test)

    p = sub.add_parser("equivalence-test", help="linear recurrence / FFT / irregular-path equivalence report")
    common(p, 0)
    p.add_argument("--cases", type=int, default=50)
    p.add_argument("--length", type=int, default=64)
    p.set_defaults(func=cmd_equivalence_test)

    p = sub.add_parser("sweep", help="coarse-to-fine omega0 grid search")
    common(p)
    _add_train_flags(p)
    p.add_argument("--lo", type=float, default=1.0)
    p.add_argument("--hi", type=float, default=100.0)
    p.add_argument("--points", type=int, default=5)
    p.add_argument("--rounds", type=int, default=2)
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_sweep)
    return parser


def _limits(deterministic: bool):
    if not deterministic:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=1)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    args.deterministic = bool(getattr(args, "deterministic", False))
    try:
        with _limits(args.deterministic):
            return args.func(args)
    except CkconvError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (OSError, UnicodeDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
