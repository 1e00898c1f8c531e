"""Figures written next to the CSV/JSONL reports. Uses the non-interactive Agg backend."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def plot_training_curves(records: list[dict], path, metric: str = "val_metric") -> Path:
    epochs = [r["epoch"] for r in records]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 3.8))
    ax1.plot(epochs, [r["train_loss"] for r in records], label="train")
    ax1.plot(epochs, [r["val_loss"] for r in records], label="validation")
    ax1.set_yscale("log")
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("loss")
    ax1.legend()
    ax2.plot(epochs, [r[metric] for r in records], color="C2")
    ax2.set_xlabel("epoch")
    ax2.set_ylabel(metric)
    ax3 = ax2.twinx()
    ax3.plot(epochs, [r["lr"] for r in records], color="C3", ls="--", lw=1)
    ax3.set_yscale("log")
    ax3.set_ylabel("learning rate", color="C3")
    return _save(fig, path)


def plot_fit(positions, target, fitted, path, title: str = "") -> Path:
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(positions, target, color="k", lw=1.5, label="target")
    ax.plot(positions, fitted, color="C1", lw=1, label="fit")
    ax.set_xlabel("relative position")
    ax.set_title(title)
    ax.legend()
    return _save(fig, path)


def plot_fit_history(histories: dict, path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 3.5))
    for label, hist in histories.items():
        ax.plot([h["step"] for h in hist], [h["mse"] for h in hist], label=label)
    ax.set_yscale("log")
    ax.set_xlabel("step")
    ax.set_ylabel("MSE")
    ax.legend()
    return _save(fig, path)


def plot_responses(series: dict, path, title: str = "") -> Path:
    """Overlay of (time, value) series, e.g. responses at two sampling strides."""
    fig, ax = plt.subplots(figsize=(7, 3.5))
    for i, (label, (t, y)) in enumerate(series.items()):
        ax.plot(t, y, lw=1.2 if i == 0 else 0, marker=None if i == 0 else ".", ms=3, label=label)
    ax.set_xlabel("time (train steps)")
    ax.set_title(title)
    ax.legend()
    return _save(fig, path)


def plot_errors(errors: dict, path, title: str = "") -> Path:
    """Histogram of per-case relative errors for each named check."""
    fig, ax = plt.subplots(figsize=(6, 3.5))
    for label, values in errors.items():
        v = np.log10(np.maximum(np.asarray(values, dtype=np.float64), 1e-18))
        ax.hist(v, bins=30, alpha=0.6, label=label)
    ax.set_xlabel("log10 relative error")
    ax.set_ylabel("cases")
    ax.set_title(title)
    ax.legend()
    return _save(fig, path)


def plot_sweep(trials: list[dict], path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 3.5))
    for rnd in sorted({t["round"] for t in trials}):
        pts = sorted((t["omega0"], t["best_val_metric"]) for t in trials if t["round"] == rnd)
        ax.plot(*zip(*pts), marker="o", label=f"round {rnd}")
    ax.set_xlabel("omega0")
    ax.set_ylabel("best validation metric")
    ax.legend()
    return _save(fig, path)
