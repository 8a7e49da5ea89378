"""Regularised dropout loss, its exact gradient, and a finite-difference checker.

Per example the training loss is

    -log h_y(x, s) + lam * || h(x, s) - h(x, E[S]) ||^2

with one mask ``s`` shared by both terms, averaged over the batch. The
gradient flows through both the stochastic pass and the deterministic
(mean-mask) pass since they share parameters.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DimensionError, DomainError, NumericError
from .network import (
    MaskSample,
    Network,
    activation_backward,
    enumerate_masks,
    enumerate_moments,
    forward_deterministic,
    forward_stochastic,
    enumerate_expectation,
    propagate,
    stack_masks,
)
from .tensor import as_vector

log = logging.getLogger(__name__)

PROB_FLOOR = 1e-300


@dataclass(frozen=True)
class LossBreakdown:
    nll: float
    penalty: float
    total: float
    lam: float


@dataclass
class GradientSet:
    weights: list
    biases: list

    def arrays(self) -> list:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def max_abs(self) -> float:
        return max(float(np.max(np.abs(a))) for a in self.arrays())


def _require_classifier(net: Network):
    if not net.is_classifier:
        raise DomainError("negative log-likelihood needs a softmax output layer")


def nll_loss(net: Network, x, y: int, s: MaskSample) -> float:
    _require_classifier(net)
    if not 0 <= y < net.output_dim:
        raise DomainError(f"label {y} outside [0, {net.output_dim})")
    prob = forward_stochastic(net, x, s).output[y]
    if prob < PROB_FLOOR:
        log.warning("predicted probability %.3g for the true class clamped to %g", prob, PROB_FLOOR)
        prob = PROB_FLOOR
    return float(-np.log(prob))


def el_penalty_exact(net: Network, x) -> float:
    """``||E_S[h(x, S)] - h(x, E[S])||^2`` by exhaustive mask enumeration."""
    gap = enumerate_expectation(net, x) - forward_deterministic(net, x).output
    return float(gap @ gap)


def el_penalty_mc(net: Network, x, s: MaskSample) -> float:
    """Single-sample surrogate ``||h(x, s) - h(x, E[S])||^2``."""
    gap = forward_stochastic(net, x, s).output - forward_deterministic(net, x).output
    return float(gap @ gap)


def expected_mc_penalty(net: Network, x) -> float:
    """Exact ``E_S`` of :func:`el_penalty_mc`, by enumeration."""
    x = as_vector(x)
    det = forward_deterministic(net, x).output
    acc = 0.0
    for probs, gates in enumerate_masks(net):
        _, outs = propagate(net, x, gates)
        diff = outs[-1] - det
        acc += float(probs @ np.sum(diff * diff, axis=1))
    return acc


def output_variance(net: Network, x) -> float:
    """Exact trace of ``Var_S[h^(L)(x, S)]``."""
    _, var = enumerate_moments(net, x)
    return float(np.sum(var[-1]))


def _gates_from(masks, n: int, net: Network) -> list:
    if isinstance(masks, MaskSample):
        masks = [masks]
    if len(masks) and isinstance(masks[0], MaskSample):
        if len(masks) != n:
            raise DimensionError(f"{len(masks)} masks for {n} examples")
        return stack_masks(masks)
    gates = [np.asarray(g, dtype=np.float64) for g in masks]
    if len(gates) != net.depth:
        raise DimensionError(f"mask has {len(gates)} layers, network has {net.depth}")
    for g in gates:
        if g.shape[0] != n:
            raise DimensionError(f"{g.shape[0]} masks for {n} examples")
    return gates


def _backward(net: Network, inputs, outputs, dz, gates, grads_w, grads_b):
    """Accumulate parameter gradients given d(loss)/d(pre-activation) of the last layer."""
    for i in range(net.depth - 1, -1, -1):
        layer = net.layers[i]
        grads_w[i] += dz.T @ inputs[i]
        grads_b[i] += dz.sum(axis=0)
        if i == 0:
            break
        dh = dz @ layer.weights
        dh = dh * (layer.keep_prob if gates is None else gates[i])
        dz = activation_backward(net.layers[i - 1].activation, outputs[i], dh)


def loss_and_grad(net: Network, inputs, labels, masks, lam: float):
    """Mean regularised loss over a batch and its exact gradient.

    ``inputs`` is (n, d), ``labels`` length n, ``masks`` either a sequence of
    :class:`MaskSample` (one per example) or per-layer arrays of shape
    (n, in_dim). Returns ``(LossBreakdown, GradientSet)``.
    """
    _require_classifier(net)
    if lam < 0:
        raise DomainError("lambda must be nonnegative")
    X = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
    y = np.asarray(labels, dtype=np.int64).reshape(-1)
    n = X.shape[0]
    if y.shape[0] != n:
        raise DimensionError(f"{n} inputs but {y.shape[0]} labels")
    if n == 0:
        raise DomainError("empty batch")
    if np.any(y < 0) or np.any(y >= net.output_dim):
        raise DomainError("label outside the class range")
    gates = _gates_from(masks, n, net)

    ins_s, outs_s = propagate(net, X, gates)
    ins_d, outs_d = propagate(net, X)
    h_s, h_d = outs_s[-1], outs_d[-1]
    rows = np.arange(n)
    p_true = h_s[rows, y]
    if np.any(p_true < PROB_FLOOR):
        log.warning("%d predicted probabilities clamped to %g", int(np.sum(p_true < PROB_FLOOR)), PROB_FLOOR)
    nll = float(np.mean(-np.log(np.maximum(p_true, PROB_FLOOR))))
    diff = h_s - h_d
    penalty = float(np.mean(np.sum(diff * diff, axis=1)))

    grads_w = [np.zeros_like(layer.weights) for layer in net.layers]
    grads_b = [np.zeros_like(layer.bias) for layer in net.layers]

    onehot = np.zeros_like(h_s)
    onehot[rows, y] = 1.0
    dz_s = (h_s - onehot) / n
    if lam != 0.0:
        g_pen = (2.0 * lam / n) * diff
        dz_s = dz_s + activation_backward("softmax", h_s, g_pen)
        dz_d = activation_backward("softmax", h_d, -g_pen)
        _backward(net, ins_d, outs_d, dz_d, None, grads_w, grads_b)
    _backward(net, ins_s, outs_s, dz_s, gates, grads_w, grads_b)

    for i, (gw, gb) in enumerate(zip(grads_w, grads_b)):
        if not (np.all(np.isfinite(gw)) and np.all(np.isfinite(gb))):
            raise NumericError(f"non-finite gradient in layer {i}", layer=i)
    breakdown = LossBreakdown(nll=nll, penalty=penalty, total=nll + lam * penalty, lam=float(lam))
    return breakdown, GradientSet(grads_w, grads_b)


def batch_loss(net: Network, inputs, labels, masks, lam: float) -> float:
    return loss_and_grad(net, inputs, labels, masks, lam)[0].total


@dataclass(frozen=True)
class GradCheckReport:
    max_rel_error: float
    layer: int
    param: str  # "weights" or "bias"
    index: tuple
    analytic: float
    numeric: float


def relative_error(a, b, floor: float = 1e-4):
    """Coordinatewise ``|a - b| / max(|a|, |b|, floor)``; the floor keeps near-zero entries from dominating."""
    a = np.asarray(a)
    b = np.asarray(b)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def check_gradients(net: Network, inputs, labels, masks, lam: float, step: float = 1e-5, floor: float = 1e-4) -> GradCheckReport:
    """Compare :func:`loss_and_grad` against central differences on every parameter."""
    if step <= 0:
        raise DomainError("step must be positive")
    X = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
    gates = _gates_from(masks, X.shape[0], net)
    _, grads = loss_and_grad(net, X, labels, gates, lam)
    worst = None
    for i, layer in enumerate(net.layers):
        for name, param, analytic in (("weights", layer.weights, grads.weights[i]), ("bias", layer.bias, grads.biases[i])):
            numeric = np.zeros_like(param)
            for idx in np.ndindex(param.shape):
                orig = param[idx]
                param[idx] = orig + step
                up = batch_loss(net, X, labels, gates, lam)
                param[idx] = orig - step
                down = batch_loss(net, X, labels, gates, lam)
                param[idx] = orig
                numeric[idx] = (up - down) / (2.0 * step)
            err = relative_error(analytic, numeric, floor)
            j = np.unravel_index(int(np.argmax(err)), err.shape)
            if worst is None or err[j] > worst.max_rel_error:
                worst = GradCheckReport(float(err[j]), i, name, tuple(int(v) for v in j), float(analytic[j]), float(numeric[j]))
    return worst
