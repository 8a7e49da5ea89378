"""Mini-batch SGD with momentum, learning-rate decay and max-norm projection."""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import DomainError, NumericError, TrainingError
from .inference import error_rate, measure_gap
from .network import DenseLayer, Network, sample_masks
from .objective import loss_and_grad
from .tensor import MASK_STREAM, SHUFFLE_STREAM, RngStream

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    lam: float = 0.0
    eta0: float = 0.1
    rho: float = 0.025
    momentum: float = 0.9
    momentum_kind: str = "standard"  # or "nesterov"
    max_norm: float | None = 3.5
    l2: float = 0.0
    batch_size: int = 200
    epochs: int = 100
    seed: int = 0
    gap_every: int = 0  # measure the inference gap every K epochs; 0 disables
    gap_mc_samples: int = 100
    keep_best: bool = False

    def __post_init__(self):
        if self.lam < 0:
            raise DomainError("lam must be >= 0")
        if self.eta0 <= 0:
            raise DomainError("eta0 must be > 0")
        if self.rho < 0:
            raise DomainError("rho must be >= 0")
        if not 0.0 <= self.momentum < 1.0:
            raise DomainError("momentum must be in [0, 1)")
        if self.momentum_kind not in ("standard", "nesterov"):
            raise DomainError(f"unknown momentum kind {self.momentum_kind!r}")
        if self.max_norm is not None and self.max_norm <= 0:
            raise DomainError("max_norm must be > 0 or None")
        if self.l2 < 0:
            raise DomainError("l2 must be >= 0")
        if self.batch_size < 1 or self.epochs < 0:
            raise DomainError("batch_size must be >= 1 and epochs >= 0")


@dataclass(frozen=True)
class EpochRecord:
    epoch: int  # completed epochs before this one; lr = eta0 / (1 + rho * epoch)
    lr: float
    nll: float
    penalty: float
    total: float
    val_error: float | None
    delta_hat: float | None = None


@dataclass
class TrainLog:
    records: list = field(default_factory=list)

    CSV_FIELDS = ("epoch", "lr", "nll", "penalty", "total", "val_error", "delta_hat")

    def to_csv(self, path, comments: str | None = None) -> None:
        with open(path, "w", newline="") as fh:
            if comments:
                for line in comments.splitlines():
                    fh.write(f"# {line}\n")
            writer = csv.writer(fh)
            writer.writerow(self.CSV_FIELDS)
            for r in self.records:
                row = asdict(r)
                writer.writerow(["" if row[k] is None else repr(row[k]) for k in self.CSV_FIELDS])

    @classmethod
    def from_csv(cls, path) -> "TrainLog":
        with open(path, newline="") as fh:
            rows = [line for line in fh if not line.startswith("#")]
        records = []
        for row in csv.DictReader(rows):
            opt = lambda v: None if v == "" else float(v)  # noqa: E731
            records.append(EpochRecord(int(row["epoch"]), float(row["lr"]), float(row["nll"]), float(row["penalty"]),
                                       float(row["total"]), opt(row["val_error"]), opt(row["delta_hat"])))
        return cls(records)


def lr_at_epoch(cfg: TrainConfig, t: int) -> float:
    if t < 0:
        raise DomainError("epoch counter must be >= 0")
    return cfg.eta0 / (1.0 + cfg.rho * t)


def max_norm_project(layer: DenseLayer, c: float) -> DenseLayer:
    """Rescale every incoming-weight row whose L2 norm exceeds ``c`` to norm ``c``."""
    if c <= 0:
        raise DomainError("max-norm constant must be > 0")
    norms = np.linalg.norm(layer.weights, axis=1)
    over = norms > c
    if not np.any(over):
        return layer
    w = layer.weights.copy()
    w[over] *= (c / norms[over])[:, None]
    return DenseLayer(w, layer.bias, layer.activation, layer.keep_prob)


def _project_inplace(net: Network, c: float) -> None:
    for layer in net.layers:
        norms = np.linalg.norm(layer.weights, axis=1)
        over = norms > c
        if np.any(over):
            layer.weights[over] *= (c / norms[over])[:, None]


def _first_nonfinite_layer(net: Network):
    for i, layer in enumerate(net.layers):
        if not (np.all(np.isfinite(layer.weights)) and np.all(np.isfinite(layer.bias))):
            return i
    return None


def train(net: Network, train_set, val_set, cfg: TrainConfig, on_update=None):
    """Train a copy of ``net``; returns ``(network, TrainLog)``.

    One mask per example per step is shared by the likelihood and penalty
    terms. ``on_update(net)`` is called after every parameter update (after
    projection), which tests use to observe the max-norm invariant.
    """
    if len(train_set) == 0:
        raise DomainError("empty training set")
    if train_set.dim != net.input_dim:
        raise DomainError(f"data dimension {train_set.dim} != network input {net.input_dim}")
    net = net.copy()
    params = net.parameters()
    velocity = [np.zeros_like(p) for p in params]
    mask_rng = RngStream(cfg.seed, MASK_STREAM)
    shuffle_rng = RngStream(cfg.seed, SHUFFLE_STREAM)
    gap_set = val_set if val_set is not None and len(val_set) else train_set
    n = len(train_set)
    trainlog = TrainLog()
    best = (np.inf, None)

    for epoch in range(cfg.epochs):
        lr = lr_at_epoch(cfg, epoch)
        order = shuffle_rng.permutation(n)
        sums = np.zeros(3)
        for b, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            X, y = train_set.inputs[idx], train_set.labels[idx]
            gates = sample_masks(net, mask_rng, idx.shape[0])
            lookahead = cfg.momentum_kind == "nesterov" and cfg.momentum > 0
            if lookahead:
                for p, v in zip(params, velocity):
                    p += cfg.momentum * v
            try:
                loss, grads = loss_and_grad(net, X, y, gates, cfg.lam)
                garr = grads.arrays()
                if cfg.l2:
                    # weight decay on weights only, evaluated where the gradient is
                    for i in range(0, len(garr), 2):
                        garr[i] = garr[i] + cfg.l2 * params[i]
            except NumericError as exc:
                raise TrainingError(f"epoch {epoch}, batch {b}: {exc}", epoch, b, exc.layer) from exc
            finally:
                if lookahead:
                    for p, v in zip(params, velocity):
                        p -= cfg.momentum * v
            if not np.isfinite(loss.total):
                raise TrainingError(f"epoch {epoch}, batch {b}: non-finite loss", epoch, b, _first_nonfinite_layer(net))
            sums += idx.shape[0] * np.array([loss.nll, loss.penalty, loss.total])
            for p, v, g in zip(params, velocity, garr):
                v *= cfg.momentum
                v -= lr * g
                p += v
            if cfg.max_norm is not None:
                _project_inplace(net, cfg.max_norm)
            if on_update is not None:
                on_update(net)
        nll, pen, tot = sums / n
        val_err = error_rate(net, val_set) if val_set is not None and len(val_set) else None
        gap = None
        if cfg.gap_every and (epoch + 1) % cfg.gap_every == 0:
            gap = measure_gap(net, gap_set, cfg.gap_mc_samples, cfg.seed)
        trainlog.records.append(EpochRecord(epoch, lr, float(nll), float(pen), float(tot), val_err, gap))
        log.debug("epoch %d lr %.5f loss %.5f val %s", epoch, lr, tot, val_err)
        if cfg.keep_best and val_err is not None and val_err < best[0]:
            best = (val_err, net.copy())

    if cfg.keep_best and best[1] is not None:
        return best[1], trainlog
    return net, trainlog

