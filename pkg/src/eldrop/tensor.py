"""Dense float64 arithmetic and deterministic random streams.

Matrices and vectors are plain ``numpy.ndarray`` objects of dtype float64.
Random numbers come from :class:`RngStream`, a PCG64 generator keyed by a
``(seed, stream_id)`` pair so that unrelated consumers (initialisation, mask
sampling, shuffling, inference) never share a sequence.
"""

from __future__ import annotations

import numpy as np

from .errors import ConvergenceError, DimensionError, DomainError

Matrix = np.ndarray
Vector = np.ndarray

# Fixed stream ids, one per purpose.
INIT_STREAM = 0
MASK_STREAM = 1
SHUFFLE_STREAM = 2
INFERENCE_STREAM = 3
DATA_STREAM = 4
GAP_STREAM = 5


class RngStream:
    """Seeded random stream; identical (seed, stream_id, calls) give identical draws.

    Single-owner and mutable. Use :meth:`child` to derive independent
    sub-streams (for example one per dataset example) without consuming state.
    """

    def __init__(self, seed: int, stream_id: int = 0, _key: tuple = ()):
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        self._key = (self.stream_id, *_key)
        ss = np.random.SeedSequence(entropy=self.seed & 0xFFFFFFFFFFFFFFFF, spawn_key=self._key)
        self._gen = np.random.Generator(np.random.PCG64(ss))

    def child(self, index: int) -> "RngStream":
        return RngStream(self.seed, self.stream_id, _key=(*self._key[1:], int(index)))

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def uniform(self, size=None, low=0.0, high=1.0):
        return self._gen.uniform(low, high, size)

    def normal(self, size=None):
        return self._gen.standard_normal(size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def random(self, size=None):
        return self._gen.random(size)

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id}, key={self._key[1:]})"


def as_vector(v) -> Vector:
    return np.asarray(v, dtype=np.float64).reshape(-1)


def as_matrix(m) -> Matrix:
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2:
        raise DimensionError(f"expected a 2-d matrix, got shape {m.shape}")
    return m


def matvec(m, v) -> Vector:
    m = as_matrix(m)
    v = as_vector(v)
    if m.shape[1] != v.shape[0]:
        raise DimensionError(f"cannot multiply {m.shape[0]}x{m.shape[1]} matrix by length-{v.shape[0]} vector")
    return m @ v


def spectral_norm(m, tol: float = 1e-9, max_iter: int = 1000) -> float:
    """Largest singular value of ``m`` by power iteration on ``m^T m``.

    Starts from the normalised all-ones vector, so the result is
    deterministic. Converged when the relative change of the estimate drops
    below ``tol``; otherwise :class:`ConvergenceError` carries the last
    estimate.
    """
    m = as_matrix(m)
    if m.size == 0:
        raise DomainError("spectral norm of an empty matrix")
    if tol <= 0:
        raise DomainError("tol must be positive")
    scale = float(np.max(np.abs(m)))
    if scale == 0.0:
        return 0.0
    if not np.isfinite(scale):
        raise DomainError("spectral norm of a non-finite matrix")
    m = m / scale  # keeps m^T m clear of underflow and overflow
    v = np.ones(m.shape[1]) / np.sqrt(m.shape[1])
    estimate = 0.0
    for _ in range(max_iter):
        w = m.T @ (m @ v)
        nrm = np.linalg.norm(w)
        if nrm == 0.0:
            # the start vector lies in the null space of m^T m
            v = _restart_vector(m)
            continue
        v = w / nrm
        new = float(np.sqrt(nrm))
        if abs(new - estimate) <= tol * new:
            return scale * float(np.linalg.norm(m @ v))
        estimate = new
    raise ConvergenceError(f"power iteration did not converge in {max_iter} iterations", scale * estimate)


def _restart_vector(m: Matrix) -> Vector:
    # column with the largest norm is never in the null space of m
    j = int(np.argmax(np.linalg.norm(m, axis=0)))
    v = np.zeros(m.shape[1])
    v[j] = 1.0
    return v


def bernoulli_vector(rng: RngStream, length: int, p: float) -> Vector:
    """0/1 float vector with independent entries equal to 1 with probability ``p``."""
    if not 0.0 <= p <= 1.0:
        raise DomainError(f"Bernoulli probability {p} outside [0, 1]")
    return (rng.random(length) < p).astype(np.float64)
