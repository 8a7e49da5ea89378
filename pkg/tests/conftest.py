"""Shared fixtures and independent reference implementations.

The reference forward pass and enumeration below are written without any
of the package's batching or chunking so that they can serve as oracles.
"""

import itertools
import math

import numpy as np
import pytest

from eldrop.network import DenseLayer, Network


def ref_act(kind, z):
    if kind == "identity":
        return z
    if kind == "sigmoid":
        return np.array([1.0 / (1.0 + math.exp(-v)) for v in z])
    if kind == "tanh":
        return np.array([math.tanh(v) for v in z])
    if kind == "relu":
        return np.array([max(v, 0.0) for v in z])
    if kind == "softmax":
        m = max(z)
        e = np.array([math.exp(v - m) for v in z])
        return e / e.sum()
    raise ValueError(kind)


def ref_forward(net, x, gammas=None):
    """Plain per-layer loop; ``gammas=None`` means the mean-mask pass."""
    h = np.asarray(x, dtype=float)
    for i, layer in enumerate(net.layers):
        g = layer.keep_prob if gammas is None else gammas[i]
        a = h * g
        z = np.array([sum(layer.weights[r, c] * a[c] for c in range(len(a))) + layer.bias[r]
                      for r in range(layer.out_dim)])
        h = ref_act(layer.activation, z)
    return h


def ref_masks(net):
    """Every mask configuration with its probability, via itertools.product."""
    per_layer = []
    for layer in net.layers:
        if layer.keep_prob == 1.0:
            per_layer.append([(1.0, np.ones(layer.in_dim))])
            continue
        opts = []
        for bits in itertools.product((0.0, 1.0), repeat=layer.in_dim):
            k = sum(bits)
            prob = layer.keep_prob ** k * (1 - layer.keep_prob) ** (layer.in_dim - k)
            opts.append((prob, np.array(bits)))
        per_layer.append(opts)
    for combo in itertools.product(*per_layer):
        yield math.prod(p for p, _ in combo), [g for _, g in combo]


def ref_expectation(net, x):
    return sum(p * ref_forward(net, x, g) for p, g in ref_masks(net))


def make_net(seed, sizes=(3, 4, 3), acts=("sigmoid", "softmax"), keep=None, scale=1.0):
    rng = np.random.default_rng(seed)
    layers = []
    n = len(sizes) - 1
    keep = keep if keep is not None else list(rng.uniform(0.3, 0.9, n))
    for i in range(n):
        w = rng.normal(size=(sizes[i + 1], sizes[i])) * scale
        b = rng.normal(size=sizes[i + 1]) * 0.3
        layers.append(DenseLayer(w, b, acts[i], float(keep[i])))
    return Network(layers)


@pytest.fixture
def sigmoid_unit():
    """One input, one sigmoid unit, w=1, b=0, keep 0.5."""
    return Network([DenseLayer(np.array([[1.0]]), np.array([0.0]), "sigmoid", 0.5)])


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
