"""Measurement instruments for the expectation-linearity theory.

Everything here is read-only over a network. Quantities that are
expectations over dropout masks are computed exactly by enumeration when
``exact`` is true (the default whenever the relevant masks fit under the
enumeration cap) and by Monte Carlo otherwise, with per-example derived
random streams so results do not depend on evaluation order.

The dataset passed to these functions plays the role of the input
distribution: ``E_X`` is the empirical mean over its inputs.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import DomainError
from .inference import gap_statistics
from .network import (
    Network,
    activate,
    enumerate_expectation,
    enumerate_masks,
    enumerate_moments,
    is_enumerable,
    layer_operator_norm,
    propagate,
    sample_masks,
)
from .tensor import GAP_STREAM, RngStream

LIMIT_TOL = 1e-12


def _inputs(dataset):
    return np.atleast_2d(np.asarray(dataset.inputs if hasattr(dataset, "inputs") else dataset, dtype=np.float64))


def _auto_exact(net, exact, upto=None):
    if exact is None:
        return is_enumerable(net, upto)
    return exact


# -- bound formulas ---------------------------------------------------------


@dataclass(frozen=True)
class BoundInputs:
    B: float
    gamma: float
    sigma: float
    delta_layer: float
    L: int
    alpha_bound: float = 1.0
    beta: float = 1.0
    n: int = 1
    nu: float = 0.05

    def __post_init__(self):
        for name in ("B", "sigma", "delta_layer", "alpha_bound", "beta"):
            if getattr(self, name) < 0:
                raise DomainError(f"{name} must be nonnegative")
        if not 0.0 < self.gamma <= 1.0:
            raise DomainError("gamma must lie in (0, 1]")
        if not 0.0 < self.nu < 1.0:
            raise DomainError("nu must lie in (0, 1)")
        if self.L < 1 or self.n < 1:
            raise DomainError("L and n must be >= 1")


def bgamma_regime(B: float, gamma: float) -> str:
    x = B * gamma
    if abs(x - 1.0) < LIMIT_TOL:
        return "critical"
    return "contracting" if x < 1.0 else "expanding"


def layered_bound(inputs: BoundInputs) -> float:
    """Network gap bound from per-layer gap ``delta``, variance ``sigma``, norm ``B`` and keep rate ``gamma``.

    ``(Bg)^(L-1) d + (d + Bg s) (1 - (Bg)^(L-1)) / (1 - Bg)``. The
    geometric factor is summed term by term, which equals its limit
    ``L - 1`` at ``Bg = 1`` and stays accurate (and monotone) near it.
    """
    x = inputs.B * inputs.gamma
    d, s, L = inputs.delta_layer, inputs.sigma, inputs.L
    geom = math.fsum(x**j for j in range(L - 1))
    return x ** (L - 1) * d + (d + x * s) * geom


def deviation_bound(inputs: BoundInputs) -> float:
    """Uniform deviation bound between the empirical and population gap measures."""
    a, B, g, L, n = inputs.alpha_bound, inputs.B, inputs.gamma, inputs.L, inputs.n
    return 2.0 * a * B**L * (g ** (L / 2.0) + 1.0) / math.sqrt(n) + inputs.beta * math.sqrt(math.log(1.0 / inputs.nu) / n)


# -- likelihoods ------------------------------------------------------------


def _check_classifier(net: Network):
    if not net.is_classifier:
        raise DomainError("this measurement needs a softmax output layer")


def jensen_check(net: Network, dataset):
    """Exact marginal NLL and expected per-mask NLL, summed over the dataset.

    Returns ``(lvm_nll, dropout_expected_nll)``; concavity of log makes the
    first never exceed the second.
    """
    _check_classifier(net)
    lvm = 0.0
    expected = 0.0
    for x, y in zip(_inputs(dataset), dataset.labels):
        marginal = 0.0
        exp_log = 0.0
        for probs, gates in enumerate_masks(net):
            py = np.broadcast_to(propagate(net, x, gates)[1][-1], (probs.shape[0], net.output_dim))[:, y]
            marginal += float(probs @ py)
            exp_log += float(probs @ np.log(np.maximum(py, 1e-300)))
        lvm -= math.log(marginal)
        expected -= exp_log
    return lvm, expected


def predictive_distribution(net: Network, dataset, exact=None, mc_samples: int = 1000, seed: int = 0):
    """Marginal ``p(.|x) = E_S[h(x, S)]`` for every input, plus per-entry MC standard errors (zeros if exact)."""
    X = _inputs(dataset)
    if _auto_exact(net, exact):
        return np.stack([enumerate_expectation(net, x) for x in X]), np.zeros((X.shape[0], net.output_dim))
    base = RngStream(seed, GAP_STREAM).child(7)
    means, errs = [], []
    for i, x in enumerate(X):
        outs = np.broadcast_to(propagate(net, x, sample_masks(net, base.child(i), mc_samples))[1][-1], (mc_samples, net.output_dim))
        means.append(outs.mean(axis=0))
        errs.append(outs.std(axis=0, ddof=1) / math.sqrt(mc_samples))
    return np.stack(means), np.stack(errs)


def log_likelihood(net: Network, dataset, exact=None, mc_samples: int = 1000, seed: int = 0):
    """Marginal log-likelihood ``sum_i log E_S[p(y_i | x_i, S)]`` and its standard error."""
    _check_classifier(net)
    probs, errs = predictive_distribution(net, dataset, exact, mc_samples, seed)
    rows = np.arange(len(dataset.labels))
    py = probs[rows, dataset.labels]
    se = errs[rows, dataset.labels] / py
    return float(np.sum(np.log(py))), float(np.sqrt(np.sum(se * se)))


def likelihood_gap(net_hat: Network, net_tilde: Network, dataset, exact=None, mc_samples: int = 1000, seed: int = 0,
                   return_stderr: bool = False):
    """Mean log-likelihood lost by moving from ``net_hat`` to ``net_tilde``."""
    if [(l.in_dim, l.out_dim) for l in net_hat.layers] != [(l.in_dim, l.out_dim) for l in net_tilde.layers]:
        raise DomainError("networks must share an architecture")
    n = len(dataset.labels)
    l_hat, se_hat = log_likelihood(net_hat, dataset, exact, mc_samples, seed)
    l_tilde, se_tilde = log_likelihood(net_tilde, dataset, exact, mc_samples, seed)
    gap = (l_hat - l_tilde) / n
    if return_stderr:
        return gap, math.hypot(se_hat, se_tilde) / n
    return gap


def kl_to_uniform(net: Network, dataset, exact=None, mc_samples: int = 1000, seed: int = 0) -> float:
    """Mean over inputs of ``KL(p(.|x) || Uniform)`` for the marginal predictive distribution."""
    probs, _ = predictive_distribution(net, dataset, exact, mc_samples, seed)
    k = probs.shape[1]
    plogp = np.where(probs > 0, probs * np.log(np.where(probs > 0, probs, 1.0)), 0.0)
    return float(np.mean(np.sum(plogp, axis=1) + math.log(k)))


def near_uniform_likelihood_gap_bound(delta: float, beta: float, eta_norm: float, mean_kl: float) -> float:
    """Likelihood-gap bound for near-uniform predictors: ``(1 - delta / (4 beta ||eta||)) E[KL]``."""
    if beta * eta_norm == 0:
        return 0.0
    alpha = min(1.0, delta / (4.0 * beta * eta_norm))
    return (1.0 - alpha) * mean_kl


# -- per-layer and network gap measures -------------------------------------


def _layer_gap_given_input(layer_net: Network, h, mc_samples, rng, exact):
    """``|| E_gamma f(h * gamma) - f(h * p) ||`` for each row of ``h`` and a single-layer network."""
    det = propagate(layer_net, h)[1][-1]
    layer = layer_net.layers[0]
    if exact:
        mean = np.zeros_like(det)
        for probs, gates in enumerate_masks(layer_net):
            a = h[:, None, :] * gates[0][None, :, :]
            z = np.einsum("rgi,oi->rgo", a, layer.weights) + layer.bias
            mean += np.einsum("g,rgo->ro", probs, activate(layer.activation, z))
        return np.linalg.norm(mean - det, axis=1)
    out = np.empty(h.shape[0])
    for r in range(h.shape[0]):
        outs = propagate(layer_net, h[r], sample_masks(layer_net, rng.child(r), mc_samples))[1][-1]
        mean = np.mean(np.broadcast_to(outs, (mc_samples, layer_net.output_dim)), axis=0)
        out[r] = np.linalg.norm(mean - det[r])
    return out


def measure_layer_delta(net: Network, layer_index: int, dataset, mc_samples: int = 1000, seed: int = 0,
                        path: str = "deterministic", exact=None, inner_samples: int | None = None) -> float:
    """Mean over inputs of the single-layer gap of layer ``layer_index`` (0-based).

    ``path`` chooses which forward dynamics produce the layer's input:
    ``"deterministic"`` feeds the mean-mask pass, ``"stochastic"`` averages
    over the dropout distribution of all earlier layers.
    """
    if not 0 <= layer_index < net.depth:
        raise DomainError(f"layer index {layer_index} outside [0, {net.depth})")
    if path not in ("deterministic", "stochastic"):
        raise DomainError(f"unknown path {path!r}")
    X = _inputs(dataset)
    layer = net.layers[layer_index]
    single = Network([layer])
    if layer.keep_prob == 1.0:
        return 0.0
    base = RngStream(seed, GAP_STREAM).child(100 + layer_index)

    if path == "deterministic" or layer_index == 0:
        H = propagate(net, X)[1][layer_index]
        ex = _auto_exact(single, exact)
        return float(np.mean(_layer_gap_given_input(single, H, mc_samples, base, ex)))

    prefix = Network(net.layers[:layer_index])
    if _auto_exact(net, exact, upto=layer_index + 1):
        total = 0.0
        for x in X:
            for probs, gates in enumerate_masks(prefix):
                H = np.broadcast_to(propagate(prefix, x, gates)[1][-1], (probs.shape[0], layer.in_dim))
                total += float(probs @ _layer_gap_given_input(single, H, 0, None, True))
        return total / X.shape[0]
    inner = inner_samples or mc_samples
    total = 0.0
    for i, x in enumerate(X):
        rng = base.child(i)
        H = np.broadcast_to(propagate(prefix, x, sample_masks(prefix, rng, mc_samples))[1][-1], (mc_samples, layer.in_dim))
        total += float(np.mean(_layer_gap_given_input(single, H, inner, rng.child(1), exact=False)))
    return total / X.shape[0]


def measure_sigma(net: Network, dataset, mc_samples: int = 1000, seed: int = 0, exact=None) -> float:
    """``sqrt(max_l E_X[tr Var(H^(l) | X)])`` over all layer outputs."""
    X = _inputs(dataset)
    acc = np.zeros(net.depth)
    if _auto_exact(net, exact):
        for x in X:
            _, var = enumerate_moments(net, x)
            acc += [np.sum(v) for v in var]
    else:
        base = RngStream(seed, GAP_STREAM).child(200)
        for i, x in enumerate(X):
            outs = propagate(net, x, sample_masks(net, base.child(i), mc_samples))[1][1:]
            acc += [np.sum(np.var(np.broadcast_to(h, (mc_samples, h.shape[-1])), axis=0, ddof=1)) for h in outs]
    return float(np.sqrt(np.max(acc / X.shape[0])))


def network_gap(net: Network, dataset, mc_samples: int = 1000, seed: int = 0, exact=None):
    """Mean unsquared network gap over inputs, returned as ``(value, stderr)``."""
    X = _inputs(dataset)
    if _auto_exact(net, exact):
        det = propagate(net, X)[1][-1]
        vals = [np.linalg.norm(enumerate_expectation(net, x) - det[i]) for i, x in enumerate(X)]
        return float(np.mean(vals)), 0.0
    est = gap_statistics(net, X, mc_samples, seed)
    return est.value, est.stderr


def penalty_exact(net: Network, dataset) -> float:
    """Mean squared gap over the dataset, by enumeration."""
    X = _inputs(dataset)
    det = propagate(net, X)[1][-1]
    return float(np.mean([np.sum((enumerate_expectation(net, x) - det[i]) ** 2) for i, x in enumerate(X)]))


def penalty_mc(net: Network, dataset, mc_samples: int = 1000, seed: int = 0):
    """Unbiased MC estimate of the mean squared gap, returned as ``(value, stderr)``.

    ``||g_hat||^2`` overshoots by ``tr(Cov)/m``; that term is subtracted.
    The standard error combines the linear and quadratic noise terms.
    """
    if mc_samples < 2:
        raise DomainError("mc_samples must be at least 2")
    X = _inputs(dataset)
    det = propagate(net, X)[1][-1]
    base = RngStream(seed, GAP_STREAM).child(500)
    vals = np.empty(X.shape[0])
    var = np.empty(X.shape[0])
    m = mc_samples
    for i, x in enumerate(X):
        outs = np.broadcast_to(propagate(net, x, sample_masks(net, base.child(i), m))[1][-1], (m, net.output_dim))
        mean = outs.mean(axis=0)
        cov = np.cov(outs, rowvar=False, ddof=1).reshape(net.output_dim, net.output_dim)
        g = mean - det[i]
        vals[i] = float(g @ g) - float(np.trace(cov)) / m
        var[i] = 4.0 * float(g @ cov @ g) / m + 2.0 * float(np.sum(cov * cov)) / m**2
    n = X.shape[0]
    return float(vals.mean()), float(np.sqrt(var.sum()) / n)


# -- the bound check --------------------------------------------------------


@dataclass
class GapReport:
    layers: list  # [{"delta": ..., "B": ...}, ...]
    gamma: float
    sigma: float
    delta_hat: float
    delta_mean: float
    delta_stderr: float
    layered_bound: float
    deviation_bound: float
    regime: str
    passed: bool
    bound_inputs: BoundInputs
    path: str = "stochastic"
    exact: bool = False
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["bound_inputs"] = asdict(self.bound_inputs)
        return d

    def to_json(self, extra: dict | None = None) -> str:
        d = self.to_dict()
        if extra:
            d.update(extra)
        return json.dumps(d, indent=2, sort_keys=False)


def check_layered_bound(net: Network, dataset, mc_samples: int = 1000, seed: int = 0, path: str = "stochastic",
                  exact=None, nu: float = 0.05, gap_mc_samples: int = 100, inner_samples: int | None = None) -> GapReport:
    """Measure every input of the layered gap bound, evaluate it, and compare with the measured gap.

    Passes when the measured network gap is at most the bound plus three
    standard errors of the measurement.
    """
    X = _inputs(dataset)
    ex = _auto_exact(net, exact)
    deltas = [measure_layer_delta(net, i, X, mc_samples, seed, path, ex, inner_samples) for i in range(net.depth)]
    norms = [layer_operator_norm(layer) for layer in net.layers]
    gamma = max(net.keep_probs)
    sigma = measure_sigma(net, X, mc_samples, seed, ex)
    delta_mean, stderr = network_gap(net, X, mc_samples, seed, ex)
    delta_hat = gap_statistics(net, X, gap_mc_samples, seed).value
    if net.is_classifier:
        beta = 1.0
    else:
        outs = propagate(net, X, sample_masks(net, RngStream(seed, GAP_STREAM).child(300), X.shape[0]))[1][-1]
        beta = float(max(np.max(np.linalg.norm(outs, axis=1)), np.max(np.linalg.norm(propagate(net, X)[1][-1], axis=1))))
    inputs = BoundInputs(B=max(norms), gamma=gamma, sigma=sigma, delta_layer=max(deltas), L=net.depth,
                         alpha_bound=float(np.max(np.linalg.norm(X, axis=1))), beta=beta, n=X.shape[0], nu=nu)
    bound = layered_bound(inputs)
    regime = bgamma_regime(inputs.B, gamma)
    notes = []
    if regime == "critical":
        notes.append("B*gamma = 1: limit form of the geometric factor used")
    if path == "deterministic":
        notes.append("per-layer deltas use deterministic-path layer inputs")
    passed = delta_mean <= bound + 3.0 * stderr
    return GapReport(
        layers=[{"delta": d, "B": b} for d, b in zip(deltas, norms)],
        gamma=gamma, sigma=sigma, delta_hat=delta_hat, delta_mean=delta_mean, delta_stderr=stderr,
        layered_bound=bound, deviation_bound=deviation_bound(inputs), regime=regime, passed=bool(passed),
        bound_inputs=inputs, path=path, exact=bool(ex), notes=notes,
    )


# -- output-layer scaling ---------------------------------------------------


def output_weight_norm(net: Network) -> float:
    return float(np.linalg.norm(net.layers[-1].weights))


def measure_beta(net: Network, dataset, mask_samples: int = 1000, seed: int = 0, exact=None) -> float:
    """Largest norm of the output layer's (unmasked) input over data and masks, both forward modes."""
    X = _inputs(dataset)
    L = net.depth
    beta = float(np.max(np.linalg.norm(propagate(net, X)[1][L - 1], axis=1)))
    if L == 1:
        return beta
    prefix = Network(net.layers[: L - 1])
    if _auto_exact(prefix, exact):
        for x in X:
            for _, gates in enumerate_masks(prefix):
                h = propagate(prefix, x, gates)[1][-1]
                beta = max(beta, float(np.max(np.linalg.norm(h, axis=1))))
        return beta
    base = RngStream(seed, GAP_STREAM).child(400)
    for i, x in enumerate(X):
        h = propagate(prefix, x, sample_masks(prefix, base.child(i), mask_samples))[1][-1]
        beta = max(beta, float(np.max(np.linalg.norm(h, axis=1))))
    return beta


def scaling_factor(net: Network, delta_target: float, dataset, mask_samples: int = 1000, seed: int = 0, exact=None) -> float:
    if delta_target < 0:
        raise DomainError("delta_target must be nonnegative")
    _check_classifier(net)
    eta = output_weight_norm(net)
    beta = measure_beta(net, dataset, mask_samples, seed, exact)
    if eta == 0.0 or beta == 0.0:
        return 1.0
    return min(1.0, delta_target / (4.0 * beta * eta))


def scale_to_linearize(net: Network, delta_target: float, dataset, mask_samples: int = 1000, seed: int = 0,
                       exact=None) -> Network:
    """Shrink the softmax layer's weights and bias so the squared gap falls below ``delta_target``.

    The factor is ``min(1, delta_target / (4 beta ||W_out||_F))`` with
    ``beta`` the largest input norm seen by the output layer; for
    ``delta_target <= 1`` this caps every per-example gap at
    ``delta_target`` and hence the mean squared gap too.
    """
    alpha = scaling_factor(net, delta_target, dataset, mask_samples, seed, exact)
    if alpha >= 1.0:
        return net
    out = net.copy()
    out.layers[-1].weights *= alpha
    out.layers[-1].bias *= alpha
    return out
