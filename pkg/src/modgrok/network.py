"""Bias-free two-layer MLP in mean-field parametrization.

    h1 = W1 x / sqrt(D),   z1 = phi(h1),   h2 = W2 z1 / N        (mean field)
    h1 = W1 x,             z1 = phi(h1),   h2 = W2 z1 / (D sqrt(N))  (appendix_b)

with D = 2p inputs, N hidden units and p outputs.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.special import erf

from . import prng
from .errors import ConfigError, ShapeError
from .modtask import Dataset


class Activation(str, enum.Enum):
    QUADRATIC = "quadratic"
    RELU = "relu"
    GELU = "gelu"


class Scaling(str, enum.Enum):
    MEAN_FIELD = "mean_field"
    APPENDIX_B = "appendix_b"


_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def activate(kind: Activation, h):
    if kind is Activation.QUADRATIC:
        return h * h
    if kind is Activation.RELU:
        return np.maximum(h, 0.0)
    # exact GELU: h * Phi(h)
    return 0.5 * h * (1.0 + erf(h / _SQRT2))


def activate_grad(kind: Activation, h):
    if kind is Activation.QUADRATIC:
        return 2.0 * h
    if kind is Activation.RELU:
        return (h > 0.0).astype(h.dtype)
    return 0.5 * (1.0 + erf(h / _SQRT2)) + h * _INV_SQRT_2PI * np.exp(-0.5 * h * h)


@dataclass
class NetworkParams:
    W1: np.ndarray  # (N, 2p)
    W2: np.ndarray  # (p, N)
    activation: Activation = Activation.QUADRATIC
    scaling: Scaling = Scaling.MEAN_FIELD

    def __post_init__(self):
        self.activation = Activation(self.activation)
        self.scaling = Scaling(self.scaling)
        self.W1 = np.asarray(self.W1, dtype=np.float64)
        self.W2 = np.asarray(self.W2, dtype=np.float64)
        if self.W1.ndim != 2 or self.W2.ndim != 2:
            raise ShapeError("W1 and W2 must be matrices")
        N, D = self.W1.shape
        if D % 2 or D < 4:
            raise ShapeError(f"W1 must have 2p >= 4 columns, got {D}")
        if self.W2.shape != (D // 2, N):
            raise ShapeError(f"W2 has shape {self.W2.shape}, expected {(D // 2, N)}")
        if not (np.isfinite(self.W1).all() and np.isfinite(self.W2).all()):
            raise ConfigError("weights must be finite")

    @property
    def N(self) -> int:
        return self.W1.shape[0]

    @property
    def D(self) -> int:
        return self.W1.shape[1]

    @property
    def p(self) -> int:
        return self.W2.shape[0]

    def scales(self):
        """(input scale, output scale) multiplying W1 x and W2 z1."""
        if self.scaling is Scaling.MEAN_FIELD:
            return 1.0 / np.sqrt(self.D), 1.0 / self.N
        return 1.0, 1.0 / (self.D * np.sqrt(self.N))

    def copy(self) -> "NetworkParams":
        return NetworkParams(self.W1.copy(), self.W2.copy(), self.activation, self.scaling)

    def permuted(self, order) -> "NetworkParams":
        """Same function with hidden units reordered."""
        return NetworkParams(self.W1[order], self.W2[:, order], self.activation, self.scaling)


def init_params(p: int, N: int, activation=Activation.QUADRATIC, seed: int = 0,
                scaling=Scaling.MEAN_FIELD) -> NetworkParams:
    """I.i.d. standard normal weights from the INIT_W1 / INIT_W2 substreams of ``seed``."""
    if N < 1 or p < 2:
        raise ConfigError(f"need N >= 1 and p >= 2, got N={N}, p={p}")
    W1 = prng.normal(prng.stream_key(seed, prng.INIT_W1), N * 2 * p).reshape(N, 2 * p)
    W2 = prng.normal(prng.stream_key(seed, prng.INIT_W2), p * N).reshape(p, N)
    return NetworkParams(W1, W2, activation, scaling)


@dataclass
class ForwardTrace:
    h1: np.ndarray  # (..., N)
    z1: np.ndarray  # (..., N)
    h2: np.ndarray  # (..., p)


class Batch:
    """Inputs (sparse, shape (B, 2p)) with integer class targets.

    One-hot batches built with :meth:`from_pairs` or :meth:`from_dataset`
    keep the input sparse so that W1 x and the W1 gradient cost O(B N).
    """

    def __init__(self, x, targets, p=None):
        x = sp.csr_matrix(x, dtype=np.float64)
        targets = np.asarray(targets, dtype=np.int64).reshape(-1)
        if x.shape[0] != targets.shape[0]:
            raise ShapeError(f"{x.shape[0]} inputs but {targets.shape[0]} targets")
        if x.shape[0] == 0:
            raise ConfigError("empty batch")
        self.p = x.shape[1] // 2 if p is None else p
        if x.shape[1] != 2 * self.p:
            raise ShapeError(f"inputs have length {x.shape[1]}, expected {2 * self.p}")
        if targets.min() < 0 or targets.max() >= self.p:
            raise ConfigError("targets out of range")
        self.x = x
        self.xT = x.T.tocsr()
        self.targets = targets

    @classmethod
    def from_pairs(cls, n, m, q, p):
        n = np.asarray(n, dtype=np.int64)
        m = np.asarray(m, dtype=np.int64)
        B = len(n)
        rows = np.repeat(np.arange(B), 2)
        cols = np.stack([n, p + m], axis=1).reshape(-1)
        x = sp.csr_matrix((np.ones(2 * B), (rows, cols)), shape=(B, 2 * p))
        return cls(x, q, p)

    @classmethod
    def from_dataset(cls, ds: Dataset, indices=None):
        if indices is None:
            return cls.from_pairs(ds.n, ds.m, ds.q, ds.p)
        idx = np.asarray(indices)
        return cls.from_pairs(ds.n[idx], ds.m[idx], ds.q[idx], ds.p)

    def __len__(self):
        return self.x.shape[0]

    def one_hot_targets(self) -> np.ndarray:
        Y = np.zeros((len(self), self.p))
        Y[np.arange(len(self)), self.targets] = 1.0
        return Y


def _check_batch(params: NetworkParams, batch: Batch):
    if batch.p != params.p:
        raise ShapeError(f"batch is for p={batch.p}, network has p={params.p}")


def forward(params: NetworkParams, x) -> ForwardTrace:
    """Evaluate the network on one input (length 2p) or a dense (B, 2p) array."""
    if sp.issparse(x):
        x = x.toarray()
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != params.D or x.ndim > 2:
        raise ShapeError(f"input has shape {x.shape}, expected (..., {params.D})")
    c1, c2 = params.scales()
    h1 = c1 * (x @ params.W1.T)
    z1 = activate(params.activation, h1)
    h2 = c2 * (z1 @ params.W2.T)
    return ForwardTrace(h1, z1, h2)


def forward_batch(params: NetworkParams, batch: Batch) -> ForwardTrace:
    _check_batch(params, batch)
    c1, c2 = params.scales()
    h1 = c1 * np.asarray(batch.x @ params.W1.T)
    z1 = activate(params.activation, h1)
    h2 = c2 * (z1 @ params.W2.T)
    return ForwardTrace(h1, z1, h2)


def loss_from_output(h2, batch: Batch) -> float:
    r = h2.copy()
    r[np.arange(len(batch)), batch.targets] -= 1.0
    return float(np.mean(r * r))


def accuracy_from_output(h2, batch: Batch) -> float:
    # np.argmax returns the lowest index among ties.
    return float(np.mean(np.argmax(h2, axis=1) == batch.targets))


def mse_loss(params: NetworkParams, batch: Batch) -> float:
    """Mean over examples and output coordinates of (h2 - onehot(q))**2."""
    return loss_from_output(forward_batch(params, batch).h2, batch)


def accuracy(params: NetworkParams, batch: Batch) -> float:
    return accuracy_from_output(forward_batch(params, batch).h2, batch)


def predict(params: NetworkParams, batch: Batch, chunk: int | None = None) -> np.ndarray:
    """Argmax class per example, evaluated in chunks to bound memory."""
    out = np.empty(len(batch), dtype=np.int64)
    if chunk is None:
        chunk = max(16, 4_000_000 // params.N)
    c1, c2 = params.scales()
    for s in range(0, len(batch), chunk):
        h1 = c1 * np.asarray(batch.x[s:s + chunk] @ params.W1.T)
        h2 = c2 * (activate(params.activation, h1) @ params.W2.T)
        out[s:s + chunk] = np.argmax(h2, axis=1)
    return out
