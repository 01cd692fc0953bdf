"""Bivariate modular tasks, the full p x p dataset, and seeded splits."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from . import prng
from .errors import ConfigError, InputDomainError


class TaskKind(str, enum.Enum):
    ADD = "add"
    SUB = "sub"
    GENERAL_SUM = "general_sum"
    COMPOSED_SUM = "composed_sum"
    MUL = "mul"
    MIXED_QUADRATIC = "mixed_quadratic"
    MIXED_CUBIC = "mixed_cubic"


# Univariate lookup-table builders.

def identity_table(p):
    return tuple(range(p))


def power_table(p, k):
    return tuple(pow(n, k, p) for n in range(p))


def square_table(p):
    return power_table(p, 2)


def cube_table(p):
    return power_table(p, 3)


def affine_table(p, a, b):
    return tuple((a * n + b) % p for n in range(p))


_NAMED_TABLES = {
    "identity": identity_table,
    "square": square_table,
    "cube": cube_table,
}


def resolve_table(spec, p) -> tuple:
    """Turn a table spec (name, ``{"affine": [a, b]}`` or integer list) into a tuple."""
    if isinstance(spec, str):
        if spec not in _NAMED_TABLES:
            raise ConfigError(f"unknown table {spec!r}; expected one of {sorted(_NAMED_TABLES)} or a list")
        return _NAMED_TABLES[spec](p)
    if isinstance(spec, dict) and "affine" in spec:
        a, b = spec["affine"]
        return affine_table(p, int(a), int(b))
    try:
        table = tuple(int(v) for v in spec)
    except TypeError:
        raise ConfigError(f"cannot interpret table spec {spec!r}") from None
    _check_table(table, p, "table")
    return table


def _check_table(table, p, name):
    if len(table) != p:
        raise ConfigError(f"{name} has length {len(table)}, expected {p}")
    if any(not 0 <= v < p for v in table):
        raise ConfigError(f"{name} has entries outside [0, {p - 1}]")


@dataclass(frozen=True)
class ModularTask:
    """A function Z_p x Z_p -> Z_p.

    ``f1``, ``f2`` (GENERAL_SUM, COMPOSED_SUM) and ``F`` (COMPOSED_SUM) are
    lookup tables of length ``p``.
    """

    p: int
    kind: TaskKind
    f1: tuple | None = None
    f2: tuple | None = None
    F: tuple | None = None

    def __post_init__(self):
        if int(self.p) < 2:
            raise ConfigError(f"modulus must be >= 2, got {self.p}")
        object.__setattr__(self, "kind", TaskKind(self.kind))
        for name in ("f1", "f2", "F"):
            t = getattr(self, name)
            if t is not None:
                t = tuple(int(v) for v in t)
                _check_table(t, self.p, name)
                object.__setattr__(self, name, t)
        if self.kind in (TaskKind.GENERAL_SUM, TaskKind.COMPOSED_SUM):
            if self.f1 is None or self.f2 is None:
                raise ConfigError(f"{self.kind.value} needs f1 and f2")
        if self.kind is TaskKind.COMPOSED_SUM and self.F is None:
            raise ConfigError("composed_sum needs F")

    # constructors
    @classmethod
    def add(cls, p):
        return cls(p, TaskKind.ADD)

    @classmethod
    def general_sum(cls, p, f1, f2):
        return cls(p, TaskKind.GENERAL_SUM, f1=resolve_table(f1, p), f2=resolve_table(f2, p))

    @classmethod
    def composed_sum(cls, p, F, f1="identity", f2="identity"):
        return cls(p, TaskKind.COMPOSED_SUM, f1=resolve_table(f1, p), f2=resolve_table(f2, p),
                   F=resolve_table(F, p))

    @property
    def is_general_sum(self) -> bool:
        """True when the task is f1(n) + f2(m) mod p (the analytically solved class)."""
        return self.kind in (TaskKind.ADD, TaskKind.SUB, TaskKind.GENERAL_SUM)

    def summands(self):
        """(f1, f2) tables such that the task is F(f1(n) + f2(m)), if it has that form."""
        p = self.p
        if self.kind is TaskKind.ADD:
            return identity_table(p), identity_table(p)
        if self.kind is TaskKind.SUB:
            return identity_table(p), affine_table(p, -1, 0)
        if self.kind in (TaskKind.GENERAL_SUM, TaskKind.COMPOSED_SUM):
            return self.f1, self.f2
        raise ConfigError(f"task {self.kind.value} is not a sum of univariate functions")

    def eval(self, n: int, m: int) -> int:
        p = self.p
        if not (0 <= n < p and 0 <= m < p):
            raise InputDomainError(f"residues ({n}, {m}) out of range for p={p}")
        k = self.kind
        if k is TaskKind.ADD:
            return (n + m) % p
        if k is TaskKind.SUB:
            return (n - m) % p
        if k is TaskKind.GENERAL_SUM:
            return (self.f1[n] + self.f2[m]) % p
        if k is TaskKind.COMPOSED_SUM:
            return self.F[(self.f1[n] + self.f2[m]) % p]
        if k is TaskKind.MUL:
            return (n * m) % p
        if k is TaskKind.MIXED_QUADRATIC:
            return (n * n + m * m + n * m) % p
        if k is TaskKind.MIXED_CUBIC:
            return (n**3 + n * m * m + m) % p
        raise AssertionError(k)

    def table(self) -> np.ndarray:
        """The full p x p table T[n, m] = f(n, m)."""
        p = self.p
        n = np.arange(p, dtype=np.int64)[:, None]
        m = np.arange(p, dtype=np.int64)[None, :]
        k = self.kind
        if k is TaskKind.ADD:
            t = n + m
        elif k is TaskKind.SUB:
            t = n - m
        elif k is TaskKind.GENERAL_SUM:
            t = np.asarray(self.f1)[n] + np.asarray(self.f2)[m]
        elif k is TaskKind.COMPOSED_SUM:
            s = (np.asarray(self.f1)[n] + np.asarray(self.f2)[m]) % p
            t = np.asarray(self.F)[s]
        elif k is TaskKind.MUL:
            t = (n * m) % p
        elif k is TaskKind.MIXED_QUADRATIC:
            t = (n * n % p + m * m % p + n * m % p)
        else:
            t = (n * n % p * n % p + n * (m * m % p) % p + m)
        return np.mod(t, p)

    def to_config(self) -> dict:
        cfg = {"task": self.kind.value, "p": self.p}
        for name in ("f1", "f2", "F"):
            t = getattr(self, name)
            if t is not None:
                cfg[name] = list(t)
        return cfg

    @classmethod
    def from_config(cls, cfg: dict) -> "ModularTask":
        """Parse ``{"task": "add", "p": 97}`` style configs.

        Tables (``f1``, ``f2``, ``F``) may be names (identity, square, cube),
        ``{"affine": [a, b]}`` or inline integer lists.
        """
        try:
            kind = TaskKind(cfg["task"])
            p = int(cfg["p"])
        except KeyError as e:
            raise ConfigError(f"task config missing field {e.args[0]!r}") from None
        except ValueError:
            raise ConfigError(f"unknown task {cfg.get('task')!r}") from None
        tables = {name: resolve_table(cfg[name], p) for name in ("f1", "f2", "F") if name in cfg}
        if kind is TaskKind.COMPOSED_SUM:
            tables.setdefault("f1", identity_table(p))
            tables.setdefault("f2", identity_table(p))
        return cls(p, kind, **tables)


@dataclass(frozen=True)
class Dataset:
    """All p**2 examples (n, m, q) in row-major order of (n, m)."""

    p: int
    n: np.ndarray
    m: np.ndarray
    q: np.ndarray

    def __len__(self):
        return len(self.q)

    @property
    def examples(self):
        return list(zip(self.n.tolist(), self.m.tolist(), self.q.tolist()))


def build_dataset(task: ModularTask) -> Dataset:
    p = task.p
    n, m = np.divmod(np.arange(p * p, dtype=np.int64), p)
    q = task.table().reshape(-1)
    return Dataset(p, n, m, q)


@dataclass(frozen=True)
class Split:
    train: np.ndarray
    test: np.ndarray
    alpha: float
    seed: int
    algorithm: str = field(default=prng.ALGORITHM)


def train_size(alpha: float, total: int) -> int:
    # Python's round() is ties-to-even.
    return round(alpha * total)


def split_dataset(ds: Dataset, alpha: float, seed: int) -> Split:
    """Uniform random train/test partition with |train| = round(alpha * p**2).

    The permutation comes from the SPLIT substream of ``seed``; both index
    arrays are returned sorted.
    """
    if not 0.0 < alpha < 1.0:
        raise ConfigError(f"alpha must lie in (0, 1), got {alpha}")
    total = len(ds)
    k = train_size(alpha, total)
    if k == 0 or k == total:
        raise ConfigError(f"alpha={alpha} gives an empty {'train' if k == 0 else 'test'} set for {total} examples")
    perm = prng.permutation(prng.stream_key(seed, prng.SPLIT), total)
    return Split(np.sort(perm[:k]), np.sort(perm[k:]), float(alpha), int(seed))


def one_hot_encode(n: int, m: int, p: int) -> np.ndarray:
    if not (0 <= n < p and 0 <= m < p):
        raise InputDomainError(f"residues ({n}, {m}) out of range for p={p}")
    x = np.zeros(2 * p)
    x[n] = 1.0
    x[p + m] = 1.0
    return x


def mod_roots(q: int, p: int) -> set:
    """All r in [0, p) with r*r = q (mod p).  p need not be prime."""
    if not 0 <= q < p:
        raise InputDomainError(f"q={q} out of range for p={p}")
    return {r for r in range(p) if (r * r) % p == q}


def preimages(F, p) -> dict:
    """Map each residue q to the sorted list of r with F[r] = q."""
    inv = {q: [] for q in range(p)}
    for r, q in enumerate(F):
        inv[q].append(r)
    return inv
