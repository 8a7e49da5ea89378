"""Dense dropout networks: parameters, masks, forward passes and mask enumeration.

A network is an ordered list of :class:`DenseLayer`. Layer ``l`` computes
``act(W_l (h_{l-1} * gamma_l) + b_l)`` where ``gamma_l`` is a 0/1 mask on the
layer's *input* drawn with keep-probability ``layer.keep_prob``. The first
layer's keep-probability is therefore the input dropout rate.

Two forward modes exist: a stochastic pass under a concrete mask and the
deterministic pass that replaces every mask by its mean ``p_l``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .errors import CapacityError, ConvergenceError, DimensionError, DomainError, FormatError
from .tensor import INIT_STREAM, RngStream, as_matrix, as_vector, spectral_norm

ACTIVATIONS = ("identity", "sigmoid", "tanh", "relu", "softmax")
ACTIVATION_TAGS = {name: i for i, name in enumerate(ACTIVATIONS)}

# sup |act'| used for operator-norm bounds; softmax is handled separately
_DERIV_SUP = {"identity": 1.0, "sigmoid": 0.25, "tanh": 1.0, "relu": 1.0}

ENUMERATION_CAP = 24
_CHUNK = 1 << 15


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def softmax(z):
    z = z - np.max(z, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=-1, keepdims=True)


def log_softmax(z):
    z = z - np.max(z, axis=-1, keepdims=True)
    return z - np.log(np.sum(np.exp(z), axis=-1, keepdims=True))


def activate(kind: str, z):
    if kind == "identity":
        return z
    if kind == "sigmoid":
        return sigmoid(z)
    if kind == "tanh":
        return np.tanh(z)
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "softmax":
        return softmax(z)
    raise DomainError(f"unknown activation {kind!r}")


def activation_backward(kind: str, h, grad_h):
    """Gradient w.r.t. the pre-activation given the output ``h`` and upstream ``grad_h``."""
    if kind == "identity":
        return grad_h
    if kind == "sigmoid":
        return grad_h * h * (1.0 - h)
    if kind == "tanh":
        return grad_h * (1.0 - h * h)
    if kind == "relu":
        return grad_h * (h > 0.0)
    if kind == "softmax":
        return h * (grad_h - np.sum(grad_h * h, axis=-1, keepdims=True))
    raise DomainError(f"unknown activation {kind!r}")


@dataclass
class DenseLayer:
    weights: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str = "sigmoid"
    keep_prob: float = 1.0

    def __post_init__(self):
        self.weights = as_matrix(self.weights)
        self.bias = as_vector(self.bias)
        if self.activation not in ACTIVATIONS:
            raise DomainError(f"unknown activation {self.activation!r}")
        if self.bias.shape[0] != self.weights.shape[0]:
            raise DimensionError(f"bias length {self.bias.shape[0]} != weight rows {self.weights.shape[0]}")
        if not 0.0 < self.keep_prob <= 1.0:
            raise DomainError(f"keep_prob {self.keep_prob} outside (0, 1]")
        self.keep_prob = float(self.keep_prob)

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]

    def copy(self) -> "DenseLayer":
        return DenseLayer(self.weights.copy(), self.bias.copy(), self.activation, self.keep_prob)


@dataclass
class Network:
    layers: list

    def __post_init__(self):
        if not self.layers:
            raise DomainError("a network needs at least one layer")
        self.layers = list(self.layers)
        for i, (prev, cur) in enumerate(zip(self.layers, self.layers[1:]), start=1):
            if cur.in_dim != prev.out_dim:
                raise DimensionError(f"layer {i} expects {cur.in_dim} inputs, layer {i - 1} gives {prev.out_dim}")
        for i, layer in enumerate(self.layers[:-1]):
            if layer.activation == "softmax":
                raise DomainError(f"softmax is only allowed on the final layer (found on layer {i})")

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def input_keep_prob(self) -> float:
        return self.layers[0].keep_prob

    @property
    def output_dim(self) -> int:
        return self.layers[-1].out_dim

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def keep_probs(self) -> list:
        return [layer.keep_prob for layer in self.layers]

    @property
    def is_classifier(self) -> bool:
        return self.layers[-1].activation == "softmax"

    def copy(self) -> "Network":
        return Network([layer.copy() for layer in self.layers])

    def parameters(self) -> list:
        """Flat list of parameter arrays in (W_1, b_1, ..., W_L, b_L) order, by reference."""
        out = []
        for layer in self.layers:
            out.extend((layer.weights, layer.bias))
        return out

    @classmethod
    def build(cls, sizes: Sequence[int], activations, keep_probs, rng: RngStream | None = None, seed: int = 0):
        """Glorot-uniform initialised network; ``sizes`` includes the input dimension.

        ``activations`` and ``keep_probs`` may be scalars or one entry per layer.
        """
        n_layers = len(sizes) - 1
        if n_layers < 1:
            raise DomainError("sizes must contain the input dimension and at least one layer")
        if isinstance(activations, str):
            activations = [activations] * n_layers
        if np.isscalar(keep_probs):
            keep_probs = [keep_probs] * n_layers
        if len(activations) != n_layers or len(keep_probs) != n_layers:
            raise DimensionError("need one activation and one keep_prob per layer")
        rng = rng if rng is not None else RngStream(seed, INIT_STREAM)
        layers = []
        for fan_in, fan_out, act, p in zip(sizes[:-1], sizes[1:], activations, keep_probs):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            w = rng.uniform((fan_out, fan_in), -limit, limit)
            layers.append(DenseLayer(w, np.zeros(fan_out), act, p))
        return cls(layers)


@dataclass(frozen=True)
class MaskSample:
    """One realisation of every layer-input mask; ``gammas[l]`` gates the input of layer ``l``."""

    gammas: tuple

    def __iter__(self):
        return iter(self.gammas)


EXPECTED = "E[S]"


@dataclass
class ForwardTrace:
    layer_outputs: list  # h^(0) ... h^(L)
    mask_used: object = field(default=EXPECTED)

    @property
    def output(self) -> np.ndarray:
        return self.layer_outputs[-1]


def ones_mask(net: Network) -> MaskSample:
    return MaskSample(tuple(np.ones(layer.in_dim) for layer in net.layers))


def sample_mask(net: Network, rng: RngStream) -> MaskSample:
    return MaskSample(tuple((rng.random(layer.in_dim) < layer.keep_prob).astype(np.float64) for layer in net.layers))


def sample_masks(net: Network, rng: RngStream, count: int) -> list:
    """``count`` independent masks as per-layer arrays of shape (count, in_dim)."""
    return [(rng.random((count, layer.in_dim)) < layer.keep_prob).astype(np.float64) for layer in net.layers]


def stack_masks(masks: Sequence[MaskSample]) -> list:
    return [np.stack(per_layer) for per_layer in zip(*(m.gammas for m in masks))]


def propagate(net: Network, x, gates=None):
    """Batched forward pass.

    ``x`` is (n, d) or (d,). ``gates[l]`` multiplies the input of layer ``l``:
    an array broadcastable to (n, in_dim) for a stochastic pass, or ``None``
    (the default for every layer) to use the deterministic scale ``p_l``.
    Returns ``(inputs, outputs)``: gated layer inputs ``a_l`` and outputs
    ``h^(0..L)``, each with a leading batch axis.
    """
    h = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if h.shape[-1] != net.input_dim:
        raise DimensionError(f"input has dimension {h.shape[-1]}, network expects {net.input_dim}")
    outputs = [h]
    inputs = []
    for i, layer in enumerate(net.layers):
        g = None if gates is None else gates[i]
        if g is None:
            a = h * layer.keep_prob
        else:
            g = np.asarray(g, dtype=np.float64)
            if g.shape[-1] != layer.in_dim:
                raise DimensionError(f"mask for layer {i} has length {g.shape[-1]}, expected {layer.in_dim}")
            a = h * g
        z = a @ layer.weights.T + layer.bias
        h = activate(layer.activation, z)
        inputs.append(a)
        outputs.append(h)
    return inputs, outputs


def forward_stochastic(net: Network, x, s: MaskSample) -> ForwardTrace:
    x = as_vector(x)
    if len(s.gammas) != net.depth:
        raise DimensionError(f"mask has {len(s.gammas)} layers, network has {net.depth}")
    _, outs = propagate(net, x, list(s.gammas))
    return ForwardTrace([o[0] for o in outs], s)


def forward_deterministic(net: Network, x) -> ForwardTrace:
    x = as_vector(x)
    _, outs = propagate(net, x)
    return ForwardTrace([o[0] for o in outs], EXPECTED)


# -- exhaustive enumeration -------------------------------------------------


def dropout_units(net: Network, upto: int | None = None) -> list:
    """Number of enumerable (keep_prob < 1) mask units in each of the first ``upto`` layers."""
    layers = net.layers if upto is None else net.layers[:upto]
    return [layer.in_dim if layer.keep_prob < 1.0 else 0 for layer in layers]


def count_dropout_units(net: Network, upto: int | None = None) -> int:
    return sum(dropout_units(net, upto))


def is_enumerable(net: Network, upto: int | None = None, cap: int = ENUMERATION_CAP) -> bool:
    return count_dropout_units(net, upto) <= cap


def enumerate_masks(net: Network, upto: int | None = None, cap: int = ENUMERATION_CAP, chunk: int = _CHUNK) -> Iterator:
    """Yield ``(probs, gates)`` blocks covering every mask configuration exactly once.

    Only the first ``upto`` layers (default: all) are enumerated; gates for
    the remaining layers are ``None`` (deterministic scaling). Units with
    keep-probability 1 are fixed at 1. Configurations are ordered with the
    last enumerated layer varying fastest, and each block is a whole number
    of that layer's configurations, so consecutive groups of
    ``2**k_last`` rows share the same prefix mask.
    """
    upto = net.depth if upto is None else upto
    units = dropout_units(net, upto)
    total = sum(units)
    if total > cap:
        raise CapacityError(f"{total} dropout units exceed the enumeration cap of {cap}")
    last = next((k for k in reversed(units) if k > 0), 0)
    block = max(chunk, 1 << last)
    block -= block % (1 << last)
    n_configs = 1 << total
    layers = net.layers[:upto]
    for start in range(0, n_configs, block):
        idx = np.arange(start, min(start + block, n_configs), dtype=np.int64)
        probs = np.ones(idx.shape[0])
        gates = []
        shift = total
        for layer, k in zip(layers, units):
            if k == 0:
                gates.append(np.ones((1, layer.in_dim)))
                continue
            shift -= k
            bits = (idx[:, None] >> (shift + np.arange(k - 1, -1, -1))) & 1
            g = bits.astype(np.float64)
            p = layer.keep_prob
            probs *= np.prod(np.where(bits == 1, p, 1.0 - p), axis=1)
            gates.append(g)
        gates.extend([None] * (net.depth - upto))
        yield probs, gates


def enumerate_expectation(net: Network, x) -> np.ndarray:
    """Exact ``E_S[h^(L)(x, S)]`` by summing over every mask configuration."""
    x = as_vector(x)
    acc = np.zeros(net.output_dim)
    for probs, gates in enumerate_masks(net):
        _, outs = propagate(net, x, gates)
        acc += probs @ outs[-1]
    return acc


def enumerate_moments(net: Network, x):
    """Exact per-layer mean and elementwise variance of ``h^(1..L)`` over masks."""
    x = as_vector(x)
    first = [np.zeros(layer.out_dim) for layer in net.layers]
    second = [np.zeros(layer.out_dim) for layer in net.layers]
    for probs, gates in enumerate_masks(net):
        _, outs = propagate(net, x, gates)
        for i, h in enumerate(outs[1:]):
            h = np.broadcast_to(h, (probs.shape[0], h.shape[-1]))
            first[i] += probs @ h
            second[i] += probs @ (h * h)
    var = [np.maximum(s - m * m, 0.0) for m, s in zip(first, second)]
    return first, var


# -- operator norms ---------------------------------------------------------


def layer_operator_norm(layer: DenseLayer) -> float:
    """Bound on ``sup ||d f / d x||_op`` for the layer map ``x -> act(W x + b)``.

    ``sup|act'| * ||W||_op`` for elementwise activations; ``2 ||W||_F`` for a
    softmax output layer.
    """
    if layer.activation == "softmax":
        return 2.0 * float(np.linalg.norm(layer.weights))
    try:
        w_norm = spectral_norm(layer.weights)
    except ConvergenceError:
        w_norm = float(np.linalg.norm(layer.weights, 2))
    return _DERIV_SUP[layer.activation] * w_norm


# -- serialization ----------------------------------------------------------

MAGIC = b"ELDN"
VERSION = 1
_TRAILER = b"META"


def dumps_network(net: Network, metadata: str | None = None) -> bytes:
    parts = [MAGIC, struct.pack("<II", VERSION, net.depth)]
    for layer in net.layers:
        parts.append(struct.pack("<IIBd", layer.out_dim, layer.in_dim, ACTIVATION_TAGS[layer.activation], layer.keep_prob))
        parts.append(np.ascontiguousarray(layer.weights, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(layer.bias, dtype="<f8").tobytes())
    if metadata is not None:
        blob = metadata.encode("utf-8")
        parts.append(_TRAILER + struct.pack("<I", len(blob)) + blob)
    return b"".join(parts)


def loads_network(data: bytes, with_metadata: bool = False):
    def need(offset, n, what):
        if offset + n > len(data):
            raise FormatError(f"truncated network file while reading {what}", offset)

    need(0, 12, "header")
    if data[:4] != MAGIC:
        raise FormatError(f"bad magic {data[:4]!r}", 0)
    version, n_layers = struct.unpack_from("<II", data, 4)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", 4)
    off = 12
    layers = []
    head = struct.calcsize("<IIBd")
    for i in range(n_layers):
        need(off, head, f"layer {i} header")
        rows, cols, tag, keep = struct.unpack_from("<IIBd", data, off)
        if tag >= len(ACTIVATIONS):
            raise FormatError(f"unknown activation tag {tag}", off + 8)
        off += head
        nbytes = 8 * rows * (cols + 1)
        need(off, nbytes, f"layer {i} parameters")
        w = np.frombuffer(data, dtype="<f8", count=rows * cols, offset=off).reshape(rows, cols).astype(np.float64)
        off += 8 * rows * cols
        b = np.frombuffer(data, dtype="<f8", count=rows, offset=off).astype(np.float64)
        off += 8 * rows
        layers.append(DenseLayer(w, b, ACTIVATIONS[tag], keep))
    net = Network(layers)
    if not with_metadata:
        return net
    meta = None
    if data[off:off + 4] == _TRAILER:
        need(off, 8, "metadata header")
        (n,) = struct.unpack_from("<I", data, off + 4)
        need(off + 8, n, "metadata")
        meta = data[off + 8: off + 8 + n].decode("utf-8")
    return net, meta


def save_network(net: Network, path, metadata: str | None = None) -> None:
    Path(path).write_bytes(dumps_network(net, metadata))


def load_network(path, with_metadata: bool = False):
    return loads_network(Path(path).read_bytes(), with_metadata)


def all_masks(net: Network) -> Iterator:
    """Yield ``(prob, MaskSample)`` for every configuration; convenient for tiny nets in tests."""
    for probs, gates in enumerate_masks(net):
        for r in range(probs.shape[0]):
            yield probs[r], MaskSample(tuple(np.broadcast_to(g, (probs.shape[0], g.shape[-1]))[r].copy() for g in gates))

