"""Self-check of the theory instruments on small random networks.

Each network is small enough for exhaustive mask enumeration, so every
check below is either exact or compared against an exact reference.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Dataset
from .network import Network
from .tensor import DATA_STREAM, INIT_STREAM, RngStream
from .theory import check_layered_bound, jensen_check, penalty_exact, scale_to_linearize

SCALING_TARGETS = (0.05, 0.2, 0.5)
_ACTIVATIONS = ("sigmoid", "tanh", "identity")


def random_enumerable_net(seed: int, hidden_activations=None, sizes=(4, 5, 4, 3), weight_scale: float = 3.0) -> Network:
    """Small softmax classifier with at most 13 dropout units and inflated weights.

    Glorot weights are multiplied by ``weight_scale`` so that gaps are
    clearly nonzero; keep probabilities are drawn from [0.4, 0.9].
    """
    rng = RngStream(seed, INIT_STREAM).child(1)
    n_hidden = len(sizes) - 2
    if hidden_activations is None:
        picks = rng.generator.integers(0, len(_ACTIVATIONS), n_hidden)
        hidden_activations = [_ACTIVATIONS[i] for i in picks]
    keep = list(rng.uniform(n_hidden + 1, 0.4, 0.9))
    net = Network.build(list(sizes), list(hidden_activations) + ["softmax"], keep, rng=rng)
    for layer in net.layers:
        layer.weights *= weight_scale
        layer.bias[:] = rng.normal(layer.out_dim) * 0.5
    return net


def random_inputs(seed: int, n: int, d: int) -> np.ndarray:
    return RngStream(seed, DATA_STREAM).child(2).uniform((n, d))


@dataclass
class CheckResult:
    name: str
    net: int
    passed: bool
    detail: dict = field(default_factory=dict)


def run_verification(nets: int = 20, examples: int = 8, seed: int = 0) -> list:
    """Run the Jensen, layered-bound, scaling and affine checks; returns a list of :class:`CheckResult`."""
    results = []
    for i in range(nets):
        s = seed * 100_003 + i
        net = random_enumerable_net(s)
        X = random_inputs(s, examples, net.input_dim)
        labels = np.argmax(X[:, : net.output_dim], axis=1)
        ds = Dataset(X, labels, net.output_dim)

        lvm, expected = jensen_check(net, ds)
        results.append(CheckResult("jensen", i, lvm <= expected + 1e-12, {"lvm_nll": lvm, "expected_nll": expected}))

        sig = random_enumerable_net(s, ["sigmoid", "sigmoid"])
        rep = check_layered_bound(sig, X, seed=s)
        results.append(CheckResult("layered_bound", i, rep.passed,
                                   {"gap": rep.delta_mean, "bound": rep.layered_bound, "stderr": rep.delta_stderr}))

        for target in SCALING_TARGETS:
            v = penalty_exact(scale_to_linearize(net, target, X), X)
            results.append(CheckResult("scaling", i, v <= target, {"target": target, "V": v}))

        affine = random_enumerable_net(s, ["identity", "identity"])
        v = penalty_exact(Network(affine.layers[:-1]), X)
        results.append(CheckResult("affine", i, v <= 1e-12, {"V": v}))
    return results

