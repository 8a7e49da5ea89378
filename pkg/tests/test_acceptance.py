"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Criterion 9 needs the MNIST IDX files and hours of CPU time; it runs only
when ``ELDROP_MNIST_DIR`` points at a directory holding the four files.
"""

import math
import os
import time
from pathlib import Path

import numpy as np
import pytest

from eldrop.data import Dataset, load_idx, split, synth_gaussians
from eldrop.inference import error_rate, gap_statistics
from eldrop.network import Network, count_dropout_units, enumerate_expectation, propagate, sample_masks
from eldrop.objective import check_gradients
from eldrop.tensor import MASK_STREAM, RngStream
from eldrop.theory import check_layered_bound, jensen_check, network_gap, penalty_exact, penalty_mc, scale_to_linearize
from eldrop.trainer import TrainConfig, lr_at_epoch, train

from conftest import ACCEPTANCE_LINES

MIXES = ("sigmoid", "tanh", "identity")


def record(number, passed, detail):
    line = f"criterion {number}: {'PASS' if passed else 'FAIL'} - {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert passed, line


def enumerable_net(seed, sizes=(4, 6, 5, 3), hidden=None, scale=2.5):
    """Random softmax classifier with mixed hidden activations and inflated Glorot weights."""
    rng = np.random.default_rng(seed)
    if hidden is None:
        hidden = [MIXES[i] for i in rng.integers(0, 3, len(sizes) - 2)]
    keep = rng.uniform(0.4, 0.9, len(sizes) - 1)
    net = Network.build(list(sizes), list(hidden) + ["softmax"], list(keep), seed=seed)
    for layer in net.layers:
        layer.weights *= scale
        layer.bias[:] = rng.normal(size=layer.out_dim) * 0.5
    return net


def inputs(seed, n, d):
    return np.random.default_rng(seed + 10_000).uniform(size=(n, d))


def test_criterion_1_oracle_equivalence():
    start = time.perf_counter()
    m = 100_000
    worst = {"mean": 0.0, "delta_hat": 0.0, "V": 0.0}
    for seed in range(20):
        net = enumerable_net(seed)
        assert count_dropout_units(net) <= 24
        X = inputs(seed, 3, net.input_dim)
        for i, x in enumerate(X):
            outs = propagate(net, x, sample_masks(net, RngStream(seed, MASK_STREAM).child(i), m))[1][-1]
            se = outs.std(axis=0, ddof=1) / math.sqrt(m)
            z = np.abs(outs.mean(axis=0) - enumerate_expectation(net, x)) / se
            worst["mean"] = max(worst["mean"], float(z.max()))
        est = gap_statistics(net, X, m, seed)
        exact_gap, _ = network_gap(net, X, exact=True)
        worst["delta_hat"] = max(worst["delta_hat"], abs(est.value - exact_gap) / est.stderr)
        v, v_se = penalty_mc(net, X, m, seed)
        worst["V"] = max(worst["V"], abs(v - penalty_exact(net, X)) / v_se)
    elapsed = time.perf_counter() - start
    ok = max(worst.values()) <= 4 and elapsed < 60
    record(1, ok, "max |z| E[h] %.2f, delta_hat %.2f, V %.2f (limit 4); %.1f s (limit 60)"
           % (worst["mean"], worst["delta_hat"], worst["V"], elapsed))


def test_criterion_2_gradient_exactness():
    start = time.perf_counter()
    worst = 0.0
    for seed in range(20):
        net = enumerable_net(seed, sizes=(3, 4, 3, 3), hidden=[MIXES[seed % 2], MIXES[(seed + 1) % 2]], scale=1.0)
        X = inputs(seed, 4, 3)
        y = np.random.default_rng(seed).integers(0, 3, 4)
        masks = sample_masks(net, RngStream(seed, MASK_STREAM), 4)
        for lam in (0.0, 0.5, 5.0):
            worst = max(worst, check_gradients(net, X, y, masks, lam, step=1e-5).max_rel_error)
    elapsed = time.perf_counter() - start
    record(2, worst < 1e-6 and elapsed < 30, f"max relative error {worst:.2e} (limit 1e-6); {elapsed:.1f} s (limit 30)")


def test_criterion_3_jensen():
    held = 0
    for seed in range(20):
        net = enumerable_net(seed)
        X = inputs(seed, 6, net.input_dim)
        ds = Dataset(X, np.random.default_rng(seed).integers(0, 3, 6), 3)
        lvm, expected = jensen_check(net, ds)
        held += lvm <= expected + 1e-12
    record(3, held == 20, f"marginal NLL <= expected dropout NLL on {held}/20 nets")


def test_criterion_4_affine_exactness():
    worst_v = 0.0
    worst_ratio = 0.0
    for seed in range(20):
        net = enumerable_net(seed, sizes=(4, 6, 3), hidden=["identity"])
        affine = Network(net.layers[:-1] + [net.layers[-1].copy()])
        affine.layers[-1].activation = "identity"
        X = inputs(seed, 5, 4)
        worst_v = max(worst_v, penalty_exact(affine, X))
        est = gap_statistics(affine, X, 2000, seed)
        worst_ratio = max(worst_ratio, est.value / est.noise_scale)
    ok = worst_v <= 1e-12 and worst_ratio <= 3.0
    record(4, ok, f"max exact V {worst_v:.1e} (limit 1e-12); max delta_hat / MC noise {worst_ratio:.2f} (limit 3)")


def test_criterion_5_layered_bound():
    held = 0
    slack = []
    for seed in range(20):
        net = enumerable_net(seed, hidden=["sigmoid", "sigmoid"], scale=3.0)
        X = inputs(seed, 6, net.input_dim)
        rep = check_layered_bound(net, X, seed=seed)
        held += rep.passed
        slack.append(rep.layered_bound - rep.delta_mean)
    record(5, held == 20, f"bound dominates measured gap on {held}/20 sigmoid nets (min slack {min(slack):.4f})")


def test_criterion_6_output_scaling():
    held = 0
    worst = 0.0
    for seed in range(20):
        net = enumerable_net(seed, scale=4.0)
        X = inputs(seed, 8, net.input_dim)
        ok = True
        for target in (0.05, 0.2, 0.5):
            v = penalty_exact(scale_to_linearize(net, target, X), X)
            worst = max(worst, v / target)
            ok &= v <= target
        held += ok
    record(6, held == 20, f"V <= delta_target for all three targets on {held}/20 nets (max V/target {worst:.2e})")


def test_criterion_7_lambda_trend():
    start = time.perf_counter()
    full = synth_gaussians(4, 16, 1000, 3.0, seed=0)
    train_set, val_set = split(full, 2000, seed=0)
    test_set = synth_gaussians(4, 16, 500, 3.0, seed=1)
    assert len(train_set) == 2000
    gap_down = err_ok = 0
    rows = []
    for seed in range(5):
        gaps, errs = [], []
        for lam in (0.0, 1.0, 10.0):
            net = Network.build([16, 64, 64, 4], ["relu", "relu", "softmax"], [0.8, 0.5, 0.5], seed=seed)
            out, _ = train(net, train_set, val_set, TrainConfig(lam=lam, epochs=100, seed=seed))
            gaps.append(gap_statistics(out, test_set.inputs, 100, seed).value)
            errs.append(error_rate(out, test_set))
        gap_down += gaps[0] > gaps[1] > gaps[2]
        err_ok += errs[1] <= errs[0] + 0.5
        rows.append("seed %d delta_hat %s error %s" % (seed, np.round(gaps, 4).tolist(), np.round(errs, 2).tolist()))
    elapsed = time.perf_counter() - start
    print("\n".join(rows))
    ok = gap_down >= 4 and err_ok >= 4 and elapsed < 600
    record(7, ok, f"delta_hat decreasing in {gap_down}/5 seeds, error(lam=1) <= error(lam=0)+0.5 in {err_ok}/5; {elapsed:.0f} s")


def test_criterion_8_trainer_mechanics():
    full = synth_gaussians(4, 16, 150, 3.0, seed=3)
    train_set, val_set = split(full, 100, seed=3)
    cfg = TrainConfig(lam=2.0, epochs=6, batch_size=50, max_norm=1.0, eta0=0.3, momentum_kind="nesterov", seed=3)
    net = Network.build([16, 32, 32, 4], ["relu", "tanh", "softmax"], [0.8, 0.5, 0.5], seed=3)
    norms = []

    def observe(n):
        norms.append(max(float(np.linalg.norm(l.weights, axis=1).max()) for l in n.layers))

    a, log_a = train(net, train_set, val_set, cfg, on_update=observe)
    b, log_b = train(net, train_set, val_set, cfg)
    updates = cfg.epochs * math.ceil(len(train_set) / cfg.batch_size)
    norm_ok = len(norms) == updates and max(norms) <= cfg.max_norm + 1e-12
    lr_ok = all(r.lr == cfg.eta0 / (1 + cfg.rho * r.epoch) == lr_at_epoch(cfg, r.epoch) for r in log_a.records)
    same = log_a == log_b and all(
        np.array_equal(x.weights, y.weights) and np.array_equal(x.bias, y.bias) for x, y in zip(a.layers, b.layers))
    record(8, norm_ok and lr_ok and same,
           f"max row norm {max(norms):.6f} over {len(norms)} updates (c=1.0); lr exact: {lr_ok}; bit-identical rerun: {same}")


MNIST_FILES = ("train-images-idx3-ubyte", "train-labels-idx1-ubyte", "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte")


def _mnist_dir():
    root = os.environ.get("ELDROP_MNIST_DIR")
    if not root or not all((Path(root) / f).is_file() for f in MNIST_FILES):
        return None
    return Path(root)


def test_criterion_9_mnist_full_scale():
    root = _mnist_dir()
    if root is None:
        reason = "full-scale run; set ELDROP_MNIST_DIR to a directory holding the MNIST IDX files"
        ACCEPTANCE_LINES.append(f"criterion 9: SKIPPED - {reason}")
        pytest.skip(reason)
    full = load_idx(root / MNIST_FILES[0], root / MNIST_FILES[1])
    test_set = load_idx(root / MNIST_FILES[2], root / MNIST_FILES[3], k=10)
    train_set, val_set = split(full, 10_000, seed=0)
    epochs = int(os.environ.get("ELDROP_MNIST_EPOCHS", "2000"))
    lambdas = [float(v) for v in os.environ.get("ELDROP_MNIST_LAMBDAS", "0.5,1,2").split(",")]
    standard, better = [], 0
    for seed in range(5):
        def fit(lam):
            net = Network.build([784, 1024, 1024, 1024, 10], ["sigmoid"] * 3 + ["softmax"], [0.8, 0.5, 0.5, 0.5], seed=seed)
            return train(net, train_set, val_set, TrainConfig(lam=lam, epochs=epochs, seed=seed, keep_best=True))

        base, _ = fit(0.0)
        base_err = error_rate(base, test_set)
        candidates = [fit(lam) for lam in lambdas]
        best_net = min(candidates, key=lambda c: min(r.val_error for r in c[1].records))[0]
        standard.append(base_err)
        better += error_rate(best_net, test_set) < base_err
    in_band = all(abs(e - 1.23) <= 0.25 for e in standard)
    record(9, in_band and better >= 4, f"standard errors {np.round(standard, 2).tolist()} (target 1.23 +/- 0.25); "
                                        f"penalised run better in {better}/5 seeds")
