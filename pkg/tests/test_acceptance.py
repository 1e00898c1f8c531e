"""Acceptance suite: one test per criterion, each printing a single PASS / PARTIAL / FAIL line.

The two long training runs (adding problem, copy memory) take up to an hour each
on one CPU core. Everything runs single-threaded for bit reproducibility.
"""
import json
import math
import time

import numpy as np
import pytest
from scipy import stats
from threadpoolctl import threadpool_limits

from ckconv import functional as F
from ckconv import tensor as tn
from ckconv.cli import main as cli_main
from ckconv.conv import CkconvLayer
from ckconv.data import SequenceBatch, subsample
from ckconv.kernelnet import KernelNet, init_siren, sample_kernel
from ckconv.models import CkcnnConfig, build
from ckconv.reports import (band_limited, blur_check, conv_equivalence, irregular_degenerate, rnn_equivalence,
                            stride_agreement, train_layer_on_response)
from ckconv.training import TrainConfig, fit_kernel, read_metrics, restore, score, train

from conftest import check_grads

ADDING_BASELINE = 0.1767
HOUR = 3600.0


@pytest.fixture(autouse=True)
def single_thread():
    with threadpool_limits(limits=1):
        yield


@pytest.fixture
def report(capsys):
    def emit(number, name, verdict, detail):
        with capsys.disabled():
            print(f"\nACCEPTANCE {number:02d} {name}: {verdict} ({detail})", flush=True)
    return emit


def verdict(ok):
    return "PASS" if ok else "FAIL"


def test_fft_matches_direct(report):
    start = time.perf_counter()
    cases = conv_equivalence(200, lengths=(1, 2, 17, 128, 1000), seed=0)
    elapsed = time.perf_counter() - start
    worst = max(c["rel_err"] for c in cases)
    ok = len(cases) == 200 and worst <= 1e-9 and elapsed < 10
    report(1, "fft-vs-direct convolution", verdict(ok), f"200 cases, max rel L2 {worst:.2e}, {elapsed:.1f} s")
    assert ok


def test_linear_rnn_is_a_convolution(report):
    start = time.perf_counter()
    cases = rnn_equivalence(50, length=64, max_hidden=8, max_radius=0.95, seed=0)
    elapsed = time.perf_counter() - start
    worst = max(c["rel_err"] for c in cases)
    radius = max(c["radius"] for c in cases)
    ok = worst <= 1e-10 and radius <= 0.95 + 1e-12 and elapsed < 5
    report(2, "linear recurrence equivalence", verdict(ok),
           f"50 systems, max spectral radius {radius:.3f}, max rel err {worst:.2e}, {elapsed:.2f} s")
    assert ok


def test_whole_model_gradient_check(report):
    start = time.perf_counter()
    model = build(CkcnnConfig(num_blocks=2, hidden_channels=4, omega0=10.0, kernel_init="siren"), 4, 1, 15, seed=0)
    rng = np.random.default_rng(0)
    batch = SequenceBatch.regular(rng.standard_normal((2, 4, 16)), rng.standard_normal(2))
    params = list(model.parameters().values())
    worst = check_grads(lambda: F.mse(tn.reshape(model(batch), (-1,)), batch.labels), params, eps=1e-5)
    elapsed = time.perf_counter() - start
    ok = worst < 1e-4 and elapsed < 60
    report(3, "whole-model gradient check", verdict(ok),
           f"{model.num_parameters()} parameters, max rel err {worst:.2e}, {elapsed:.1f} s")
    assert ok


def test_siren_bias_initialization(report):
    within, total, scaled = 0, 0, []
    seed = 0
    while len(scaled) < 10_000:
        net = init_siren(KernelNet(1, 1, hidden=32, omega0=30.0), seed=seed)
        for i in range(net.num_layers - 1):
            norms = np.linalg.norm(net.effective_weights(i), axis=1)
            b = net.b[i].data
            within += int(np.sum(np.abs(b) <= math.pi / norms))
            total += b.size
            scaled.extend((b * norms / math.pi).tolist())
        seed += 1
    p = stats.kstest(np.array(scaled[:10_000]), stats.uniform(loc=-1, scale=2).cdf).pvalue
    ok = within == total and p > 0.01
    report(4, "SIREN bias bounds", verdict(ok), f"{within}/{total} within bound, KS p={p:.3f} over 10^4 draws")
    assert ok


def test_kernel_fitting_comparison(report):
    start = time.perf_counter()
    sine_saw = fit_kernel("sawtooth", "sine", steps=2000).final_mse
    sine_noise = fit_kernel("random_noise", "sine", steps=5000).final_mse
    relu_saw = fit_kernel("sawtooth", "relu", init="default", steps=2000).final_mse
    knots_saw = fit_kernel("sawtooth", "relu", init="uniform_knots", steps=2000).final_mse
    elapsed = time.perf_counter() - start
    ok = (sine_saw < 1e-3 and sine_noise < 1e-2 and relu_saw >= 10 * sine_saw and knots_saw < relu_saw
          and elapsed < 300)
    report(5, "kernel fitting Sine vs ReLU", verdict(ok),
           f"sawtooth sine {sine_saw:.2e}, noise sine {sine_noise:.2e}, sawtooth relu {relu_saw:.2e} "
           f"({relu_saw / sine_saw:.0f}x), relu uniform-knots {knots_saw:.2e}, {elapsed:.0f} s")
    assert ok


ADDING_RUN = {"epochs": 500, "batch_size": 32, "lr": 1e-3, "patience": 5, "decay_factor": 5, "seed": 0,
              "task": {"name": "adding", "length": 100, "samples": 10000},
              "model": {"hidden_channels": 25, "omega0": 14.55}, "deterministic": True}


@pytest.mark.slow
def test_adding_problem(report, tmp_path):
    cfg = TrainConfig.from_dict({**ADDING_RUN, "max_wall_time": HOUR - 300, "out_dir": str(tmp_path)})
    result = train(cfg)
    best = result.best_metric
    wall = result.records[-1]["wall_time"]
    if best <= 1e-4:
        label = "PASS"
    elif best <= 1e-2:
        label = "PARTIAL"
    else:
        label = "FAIL"
    report(6, "adding problem T=100", label,
           f"best val MSE {best:.2e} at epoch {result.best_epoch} (target 1e-4, floor 1e-2, baseline "
           f"{ADDING_BASELINE}), {result.steps} steps, {wall / 60:.1f} min, status {result.status}")
    assert best <= 1e-2


COPY_RUN = {"epochs": 500, "batch_size": 32, "lr": 5e-4, "seed": 0, "patience": 1000,
            "task": {"name": "copy_memory", "length": 100, "samples": 10000},
            "model": {"hidden_channels": 10, "omega0": 19.20}, "deterministic": True}


@pytest.mark.slow
def test_copy_memory(report, tmp_path):
    cfg = TrainConfig.from_dict({**COPY_RUN, "max_wall_time": HOUR - 300, "out_dir": str(tmp_path)})
    result = train(cfg)
    best = result.best_metric
    wall = result.records[-1]["wall_time"]
    label = "PASS" if best >= 1.0 else "PARTIAL" if best >= 0.99 else "FAIL"
    report(7, "copy memory T=100", label,
           f"best recall accuracy {best:.4f} at epoch {result.best_epoch}, {result.steps} steps, "
           f"{wall / 60:.1f} min, status {result.status}")
    assert best >= 0.99


WAVEFORM_RUN = {"epochs": 8, "batch_size": 32, "lr": 3e-3, "seed": 0, "success_stop": False,
                "task": {"name": "waveforms", "length": 256, "samples": 600},
                "model": {"hidden_channels": 8, "omega0": 30.0}, "deterministic": True}


def test_resolution_transfer(report):
    x = band_limited(4, 1, 256, max_freq=0.1, seed=0)
    untrained = CkconvLayer(1, 1, train_max_len=255, omega0=30.0, seed=0)
    err_untrained = stride_agreement(untrained, x, 2)["rel_l2"]

    # trained layers: every CKConv of a network trained on the band-limited waveform task
    result = train(TrainConfig.from_dict(WAVEFORM_RUN))
    errs = []
    for block in result.model.blocks:
        for conv in (block.conv1, block.conv2):
            xc = band_limited(4, conv.in_channels, 256, max_freq=0.1, seed=0)
            errs.append(stride_agreement(conv, xc, 2)["rel_l2"])
    err_trained = max(errs)

    # diagnostic only: a single layer fitted to a decaying cosine kernel with large psi(0)
    fitted = CkconvLayer(1, 1, train_max_len=255, omega0=30.0, seed=1)
    lags = np.arange(256)
    target = (np.exp(-lags / 60.0) * np.cos(2 * np.pi * lags / 80.0) / 20.0)[None, None, :]
    train_layer_on_response(fitted, target, steps=300, lr=3e-3, seed=2)
    err_fitted = stride_agreement(fitted, x, 2)["rel_l2"]

    blur = blur_check(2)
    ok = err_untrained <= 0.05 and err_trained <= 0.05 and blur["max_abs_err"] <= 1e-12
    report(8, "resolution transfer stride 1 vs 2", verdict(ok),
           f"rel L2 untrained {err_untrained:.2%}, trained max {err_trained:.2%} over {len(errs)} layers "
           f"(val acc {result.records[-1]['val_metric']:.3f}), fitted-kernel diagnostic {err_fitted:.2%}, "
           f"blur taps r=2 max err {blur['max_abs_err']:.1e}")
    assert ok


def test_subsampling_alignment(report):
    batch = SequenceBatch.regular(np.zeros((1, 1, 182)))
    listings_ok = True
    for n in (2, 4, 8):
        listing = (subsample(batch, n).positions[0] + 1).astype(int).tolist()
        listings_ok &= listing == list(range(1, 183, n))
    eighth = (subsample(batch, 8).positions[0] + 1).astype(int).tolist()
    listings_ok &= eighth[:3] == [1, 9, 17] and eighth[-3:] == [161, 169, 177]

    layer = CkconvLayer(2, 3, train_max_len=181, omega0=30.0, seed=0)
    kernels_ok = True
    with tn.no_grad():
        full = sample_kernel(layer.kernel_net, layer.grid(182)).data
        for n in (2, 4, 8):
            coarse = sample_kernel(layer.kernel_net, layer.grid(math.ceil(182 / n), stride=n)).data
            kernels_ok &= np.array_equal(coarse, full[:, :, ::n])
    ok = listings_ok and kernels_ok
    report(9, "subsampling alignment", verdict(ok),
           f"listings n=2,4,8 exact: {listings_ok}; stride-n kernel samples bitwise equal: {kernels_ok}")
    assert ok


DROP_RUN = {"epochs": 60, "batch_size": 32, "lr": 1e-3, "seed": 0, "stop_at": ADDING_BASELINE / 5,
            "task": {"name": "adding", "length": 100, "samples": 10000, "protect_markers": True},
            "model": {"hidden_channels": 25, "omega0": 14.55, "mask_channel": True},
            "resample": {"drop": 0.3}, "deterministic": True}


@pytest.mark.slow
def test_irregular_sampling(report):
    rng = np.random.default_rng(0)
    layer = CkconvLayer(2, 3, train_max_len=99, omega0=30.0, seed=0)
    degenerate = irregular_degenerate(layer, rng.standard_normal((2, 2, 100)))

    cfg = TrainConfig.from_dict({**DROP_RUN, "max_wall_time": 1800.0})
    result = train(cfg)
    kept = float(result.data.train.mask.mean())
    final = result.records[-1]["val_loss"]
    ok = degenerate["bitwise_equal"] and final <= ADDING_BASELINE / 5
    report(10, "irregular sampling", verdict(ok),
           f"unit-density irregular path bitwise equal: {degenerate['bitwise_equal']}; 30% drop "
           f"(kept {kept:.1%}) adding val MSE {final:.4f} vs {ADDING_BASELINE / 5:.4f} needed "
           f"({ADDING_BASELINE / final:.1f}x below baseline) after {len(result.records)} epochs")
    assert ok


def test_reproducibility(report, tmp_path):
    args = ["--task", "adding", "--length", "30", "--samples", "200", "--epochs", "3", "--batch-size", "16",
            "--hidden-channels", "6", "--omega0", "12", "--drop", "0.2"]
    assert cli_main(["train", "--seed", "7", "--out-dir", str(tmp_path / "a"), "--deterministic", *args]) == 0
    assert cli_main(["train", "--config", str(tmp_path / "a" / "config.json"), "--out-dir", str(tmp_path / "b"),
                     "--deterministic"]) == 0
    strip = lambda rows: [{k: v for k, v in r.items() if k != "wall_time"} for r in rows]
    first = strip(read_metrics(tmp_path / "a" / "metrics.jsonl"))
    second = strip(read_metrics(tmp_path / "b" / "metrics.jsonl"))
    logs_equal = first == second and len(first) == 3

    config, model, data, _ = restore(tmp_path / "a" / "last.npz")
    reloaded = score(model, data.val, data)
    logged = (first[-1]["val_loss"], first[-1]["val_metric"])
    params_equal = all(
        np.array_equal(np.load(tmp_path / "a" / "last.npz")[f"param/{k}"], v.data)
        for k, v in model.parameters().items())
    ok = logs_equal and reloaded == logged and params_equal
    report(11, "reproducibility", verdict(ok),
           f"re-run from config echo bit-identical: {logs_equal}; checkpoint round-trip evaluation exact: "
           f"{reloaded == logged}; parameters exact: {params_equal}")
    assert ok
