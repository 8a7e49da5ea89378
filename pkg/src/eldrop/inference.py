"""Standard (scaled) and Monte-Carlo dropout inference, error rates and the gap measure."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .network import Network, propagate, sample_masks
from .tensor import GAP_STREAM, INFERENCE_STREAM, RngStream, as_vector


@dataclass(frozen=True)
class InferenceConfig:
    mode: str = "standard"  # "standard" or "monte_carlo"
    mc_samples: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("standard", "monte_carlo"):
            raise DomainError(f"unknown inference mode {self.mode!r}")
        if self.mode == "monte_carlo" and self.mc_samples < 1:
            raise DomainError("monte_carlo inference needs mc_samples >= 1")


def mc_outputs(net: Network, x, m: int, rng: RngStream) -> np.ndarray:
    """``m`` stochastic outputs ``h^(L)(x, s_j)`` with fresh masks, shape (m, out)."""
    _, outs = propagate(net, as_vector(x), sample_masks(net, rng, m))
    return np.broadcast_to(outs[-1], (m, net.output_dim))


def predict(net: Network, x, cfg: InferenceConfig = InferenceConfig(), index: int = 0) -> np.ndarray:
    """Class distribution for one input.

    Monte-Carlo mode draws its masks from the stream keyed by ``index`` so
    that per-example predictions match :func:`predict_batch`.
    """
    if cfg.mode == "standard":
        _, outs = propagate(net, as_vector(x))
        return outs[-1][0]
    rng = RngStream(cfg.seed, INFERENCE_STREAM).child(index)
    return mc_outputs(net, x, cfg.mc_samples, rng).mean(axis=0)


def predict_batch(net: Network, inputs, cfg: InferenceConfig = InferenceConfig()) -> np.ndarray:
    X = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
    if cfg.mode == "standard":
        return propagate(net, X)[1][-1]
    base = RngStream(cfg.seed, INFERENCE_STREAM)
    return np.stack([mc_outputs(net, x, cfg.mc_samples, base.child(i)).mean(axis=0) for i, x in enumerate(X)])


def error_rate(net: Network, dataset, cfg: InferenceConfig = InferenceConfig()) -> float:
    """Percentage of examples whose argmax prediction (lowest index on ties) is wrong."""
    if len(dataset) == 0:
        raise DomainError("error rate of an empty dataset")
    probs = predict_batch(net, dataset.inputs, cfg)
    return 100.0 * float(np.mean(np.argmax(probs, axis=1) != dataset.labels))


@dataclass(frozen=True)
class GapEstimate:
    """Monte-Carlo estimate of the mean unsquared inference gap over a dataset."""

    value: float
    stderr: float
    per_example: np.ndarray
    noise_scale: float  # mean of sqrt(tr Cov / m): the size of pure MC noise in the gap


def gap_statistics(net: Network, inputs, mc_samples: int = 100, seed: int = 0) -> GapEstimate:
    """Per-example ``|| mean_j h(x_i, s_j) - h(x_i, E[S]) ||_2`` and its MC standard error.

    The standard error of each term uses the delta method along the gap
    direction; example ``i`` draws from its own child stream.
    """
    if mc_samples < 2:
        raise DomainError("mc_samples must be at least 2")
    X = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
    det = propagate(net, X)[1][-1]
    base = RngStream(seed, GAP_STREAM)
    norms = np.empty(X.shape[0])
    var = np.empty(X.shape[0])
    noise = np.empty(X.shape[0])
    for i, x in enumerate(X):
        outs = mc_outputs(net, x, mc_samples, base.child(i))
        mean = outs.mean(axis=0)
        g = mean - det[i]
        norms[i] = np.linalg.norm(g)
        centered = outs - mean
        tr = float(np.sum(centered * centered)) / (mc_samples - 1)
        if norms[i] > 0:
            proj = centered @ (g / norms[i])
            var[i] = float(proj @ proj) / (mc_samples - 1) / mc_samples
        else:
            var[i] = tr / mc_samples
        noise[i] = np.sqrt(tr / mc_samples)
    n = X.shape[0]
    return GapEstimate(float(norms.mean()), float(np.sqrt(var.sum()) / n), norms, float(noise.mean()))


def measure_gap(net: Network, dataset, mc_samples: int = 100, seed: int = 0) -> float:
    """Empirical expectation-linearization measure: mean unsquared gap over the dataset."""
    inputs = dataset.inputs if hasattr(dataset, "inputs") else dataset
    return gap_statistics(net, inputs, mc_samples, seed).value
