"""Closed-form cosine weights that solve f1(n) + f2(m) mod p and F(f1(n) + f2(m)) mod p.

Neuron k (frequency index k + 1, so indices run 1..N and repeat with period
p) carries

    W1[k, n]     = cos(2 pi (k+1) f1(n) / p + phi1_k)
    W1[k, p + m] = cos(2 pi (k+1) f2(m) / p + phi2_k)
    W2[q, k]     = cos(-2 pi (k+1) r(q) / p - phi3_k),   phi3 = phi1 + phi2

with r(q) = q for sums and a chosen preimage of q under F for composed tasks.
With quadratic activation and mean-field scaling the output approaches
delta(f1(n) + f2(m) - r(q)) / (2D) as N grows.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import prng
from .errors import ConfigError
from .modtask import ModularTask, TaskKind, identity_table, preimages
from .network import Activation, NetworkParams, Scaling

TWO_PI = 2.0 * np.pi

# Readout position used for classes with no preimage: halfway between the
# residues 0 and 1, so no input interferes constructively with that row.
UNREACHABLE_SENTINEL = 0.5


@dataclass
class PhaseAssignment:
    phi1: np.ndarray
    phi2: np.ndarray
    phi3: np.ndarray

    def residual(self) -> np.ndarray:
        """(phi1 + phi2 - phi3) wrapped to (-pi, pi]."""
        from .analysis import wrap_phase
        return wrap_phase(self.phi1 + self.phi2 - self.phi3)

    def to_dict(self):
        return {"phi1": self.phi1.tolist(), "phi2": self.phi2.tolist(), "phi3": self.phi3.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(*(np.asarray(d[k], dtype=np.float64) for k in ("phi1", "phi2", "phi3")))


def sample_phases(N: int, seed: int) -> PhaseAssignment:
    """phi1, phi2 uniform on [0, 2 pi); phi3 = phi1 + phi2 reduced to [0, 2 pi)."""
    phi1 = TWO_PI * prng.uniform(prng.stream_key(seed, prng.PHASE_1), N)
    phi2 = TWO_PI * prng.uniform(prng.stream_key(seed, prng.PHASE_2), N)
    return PhaseAssignment(phi1, phi2, np.mod(phi1 + phi2, TWO_PI))


def _frequencies(N):
    return np.arange(1, N + 1, dtype=np.int64)


def _angles(p, N, values):
    """2 pi ((k+1) v mod p) / p for integer values v; reduced exactly in integers."""
    k = _frequencies(N)[:, None]
    v = np.asarray(values, dtype=np.int64)[None, :]
    return TWO_PI * ((k * v) % p) / p


def _first_layer(p, N, f1, f2, phases: PhaseAssignment):
    W1 = np.empty((N, 2 * p))
    W1[:, :p] = np.cos(_angles(p, N, f1) + phases.phi1[:, None])
    W1[:, p:] = np.cos(_angles(p, N, f2) + phases.phi2[:, None])
    return W1


def _readout(p, N, positions, phases: PhaseAssignment):
    """W2[q, k] = cos(-2 pi (k+1) positions[q] / p - phi3_k)."""
    pos = np.asarray(positions, dtype=np.float64)
    if np.all(pos == np.round(pos)):
        ang = _angles(p, N, pos.astype(np.int64))
    else:
        k = _frequencies(N)[:, None].astype(np.float64)
        ang = TWO_PI * np.mod(k * pos[None, :], p) / p
    return np.cos(-ang - phases.phi3[:, None]).T


def build_general_weights(p: int, N: int, f1, f2, seed: int = 0,
                          activation=Activation.QUADRATIC, scaling=Scaling.MEAN_FIELD):
    """Weights for f1(n) + f2(m) mod p; f1, f2 are length-p tables into [0, p)."""
    if N < 1:
        raise ConfigError("N must be >= 1")
    for name, t in (("f1", f1), ("f2", f2)):
        t = np.asarray(t)
        if t.shape != (p,) or not np.issubdtype(t.dtype, np.integer) or t.min() < 0 or t.max() >= p:
            raise ConfigError(f"{name} must be an integer table of length {p} with entries in [0, {p - 1}]")
    phases = sample_phases(N, seed)
    W1 = _first_layer(p, N, f1, f2, phases)
    W2 = _readout(p, N, np.arange(p), phases)
    return NetworkParams(W1, W2, activation, scaling), phases


def build_addition_weights(p: int, N: int, seed: int = 0, activation=Activation.QUADRATIC,
                           scaling=Scaling.MEAN_FIELD):
    ident = np.array(identity_table(p))
    return build_general_weights(p, N, ident, ident, seed, activation, scaling)


@dataclass
class ComposedReadout:
    W2: np.ndarray
    branches: np.ndarray        # designated preimage per q (sentinel for unreachable)
    branch_counts: np.ndarray   # number of preimages per q
    unreachable: np.ndarray     # classes with no preimage


def build_composed_readout(p: int, N: int, F_inverse, phases: PhaseAssignment) -> ComposedReadout:
    """Readout for F(f1 + f2): row q points at the lowest preimage of q under F.

    ``F_inverse`` maps each q to an iterable of preimages (missing keys mean
    no preimage).  Rows without a preimage point at UNREACHABLE_SENTINEL.
    """
    branches = np.empty(p)
    counts = np.zeros(p, dtype=np.int64)
    for q in range(p):
        pre = sorted(int(r) for r in F_inverse.get(q, ()))
        counts[q] = len(pre)
        branches[q] = pre[0] if pre else UNREACHABLE_SENTINEL
    W2 = _readout(p, N, branches, phases)
    return ComposedReadout(W2, branches, counts, np.nonzero(counts == 0)[0])


def build_task_weights(task: ModularTask, N: int, seed: int = 0, activation=Activation.QUADRATIC,
                       scaling=Scaling.MEAN_FIELD):
    """Analytic weights for any task of the form F(f1(n) + f2(m)) mod p.

    Returns ``(params, phases, readout)`` where ``readout`` is a
    :class:`ComposedReadout` for composed tasks and None otherwise.
    """
    f1, f2 = task.summands()
    params, phases = build_general_weights(task.p, N, np.array(f1), np.array(f2), seed,
                                           activation, scaling)
    if task.kind is not TaskKind.COMPOSED_SUM:
        return params, phases, None
    readout = build_composed_readout(task.p, N, preimages(task.F, task.p), phases)
    params = NetworkParams(params.W1, readout.W2, activation, scaling)
    return params, phases, readout


@dataclass
class ComplexNetwork:
    """Complex exponential weights for modular addition with z = h**2.

    W1[k, n] = exp(i(2 pi (k+1) n / p + phi1_k)), likewise for m with phi2;
    W2[q, k] = exp(-i(2 pi (k+1) q / p + phi3_k)).  Outputs are unnormalized
    sums over k; multiply by 1/(D N) for the mean-field scale.
    """

    W1: np.ndarray
    W2: np.ndarray
    phases: PhaseAssignment

    @property
    def p(self):
        return self.W2.shape[0]

    @property
    def N(self):
        return self.W2.shape[1]

    def evaluate(self, n, m) -> np.ndarray:
        """Complex output vector h2 (length p) for one input, or (B, p) for arrays."""
        p = self.p
        h1 = self.W1[:, np.asarray(n)] + self.W1[:, p + np.asarray(m)]
        return (self.W2 @ (h1 * h1)).T

    def components(self, n: int, m: int, q: int):
        """The three interference sums at output q: from a**2, b**2 and 2ab."""
        p = self.p
        a, b = self.W1[:, n], self.W1[:, p + m]
        w = self.W2[q]
        return np.sum(w * a * a), np.sum(w * b * b), np.sum(w * 2.0 * a * b)

    def predict(self) -> np.ndarray:
        """argmax_q Re h2_q for every (n, m), shape (p, p)."""
        p = self.p
        n, m = np.divmod(np.arange(p * p), p)
        return np.argmax(self.evaluate(n, m).real, axis=1).reshape(p, p)

    def accuracy(self) -> float:
        p = self.p
        target = (np.arange(p)[:, None] + np.arange(p)[None, :]) % p
        return float(np.mean(self.predict() == target))


def build_complex_weights(p: int, N: int, seed: int = 0) -> ComplexNetwork:
    if N < 1:
        raise ConfigError("N must be >= 1")
    phases = sample_phases(N, seed)
    ang = _angles(p, N, np.arange(p))
    W1 = np.concatenate([np.exp(1j * (ang + phases.phi1[:, None])),
                         np.exp(1j * (ang + phases.phi2[:, None]))], axis=1)
    W2 = np.exp(-1j * (ang + phases.phi3[:, None])).T
    return ComplexNetwork(W1, W2, phases)


def predict_delta(p: int, n: int, m: int, q: int) -> float:
    """Idealized output 1/(2D) * delta(n + m - q mod p) with D = 2p."""
    for v in (n, m, q):
        if not 0 <= v < p:
            raise ConfigError(f"residue {v} out of range for p={p}")
    return 1.0 / (4.0 * p) if (n + m - q) % p == 0 else 0.0
