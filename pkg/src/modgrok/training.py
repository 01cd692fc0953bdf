"""Hand-derived backprop, optimizers and the full-batch epoch loop."""

from __future__ import annotations

import csv
import enum
import io
import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .errors import ConfigError, NumericalError, ShapeError
from .modtask import ModularTask, Split, build_dataset
from .network import (
    Activation,
    Batch,
    NetworkParams,
    Scaling,
    accuracy_from_output,
    activate,
    activate_grad,
    forward_batch,
    init_params,
    loss_from_output,
)


@dataclass
class Gradients:
    gW1: np.ndarray
    gW2: np.ndarray


def _backward_from_trace(params: NetworkParams, batch: Batch, trace) -> Gradients:
    c1, c2 = params.scales()
    B, p = trace.h2.shape
    # dL/dh2 for L = mean over B*p of (h2 - y)^2
    r = trace.h2.copy()
    r[np.arange(B), batch.targets] -= 1.0
    r *= 2.0 / (B * p)
    gW2 = c2 * (r.T @ trace.z1)
    dh1 = (c2 * (r @ params.W2)) * activate_grad(params.activation, trace.h1)
    gW1 = c1 * np.asarray(batch.xT @ dh1).T
    return Gradients(gW1, gW2)


def backward(params: NetworkParams, batch: Batch) -> Gradients:
    """Exact gradients of :func:`mse_loss` with respect to W1 and W2.

    ReLU uses the subgradient 0 at 0.
    """
    trace = forward_batch(params, batch)
    grads = _backward_from_trace(params, batch, trace)
    if not (np.isfinite(grads.gW1).all() and np.isfinite(grads.gW2).all()):
        raise NumericalError("non-finite gradient")
    return grads


class OptimizerKind(str, enum.Enum):
    GD = "gd"
    GD_MOMENTUM_WD = "gd_momentum_wd"
    ADAMW = "adamw"


@dataclass
class OptimizerConfig:
    kind: OptimizerKind = OptimizerKind.GD
    # Mean-field gradients shrink like p/N, so the stable GD step grows like N/p.
    # 4e5 is safely stable at p=97, N=500 (loss spikes appear near 1.2e6);
    # about 3e5 suits N=128 and 1e3 suits p=11, N=16.
    learning_rate: float = 4e5
    momentum: float = 0.0
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        try:
            self.kind = OptimizerKind(self.kind)
        except ValueError:
            raise ConfigError(f"unknown optimizer {self.kind!r}") from None
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be > 0")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError("momentum must lie in [0, 1)")
        if not self.weight_decay >= 0:
            raise ConfigError("weight_decay must be >= 0")
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise ConfigError("beta1 and beta2 must lie in (0, 1)")
        if not self.epsilon > 0:
            raise ConfigError("epsilon must be > 0")

    @classmethod
    def adamw(cls, learning_rate=1e-2, weight_decay=0.1, **kw):
        return cls(OptimizerKind.ADAMW, learning_rate, weight_decay=weight_decay, **kw)

    def to_dict(self):
        d = asdict(self)
        d["kind"] = self.kind.value
        return d


@dataclass
class OptimizerState:
    step: int = 0
    buffers: dict = field(default_factory=dict)

    def copy(self):
        return OptimizerState(self.step, {k: v.copy() for k, v in self.buffers.items()})


def optimizer_step(params: NetworkParams, grads: Gradients, state: OptimizerState,
                   config: OptimizerConfig):
    """One update; returns new ``(params, state)`` and leaves the inputs untouched.

    gd:             W <- W - lr g
    gd_momentum_wd: v <- mu v + g + wd W;  W <- W - lr v
    adamw:          bias-corrected Adam moments, decoupled decay
                    W <- W - lr (m_hat / (sqrt(v_hat) + eps) + wd W)
    """
    if grads.gW1.shape != params.W1.shape or grads.gW2.shape != params.W2.shape:
        raise ShapeError("gradient shapes do not match parameters")
    lr = config.learning_rate
    t = state.step + 1
    new_buffers = {}
    new_W = {}
    for name, W, g in (("W1", params.W1, grads.gW1), ("W2", params.W2, grads.gW2)):
        if config.kind is OptimizerKind.GD:
            W = W - lr * g
        elif config.kind is OptimizerKind.GD_MOMENTUM_WD:
            v = state.buffers.get("v_" + name)
            v = g + config.weight_decay * W if v is None else config.momentum * v + g + config.weight_decay * W
            new_buffers["v_" + name] = v
            W = W - lr * v
        else:
            b1, b2 = config.beta1, config.beta2
            m = state.buffers.get("m_" + name, np.zeros_like(W))
            v = state.buffers.get("v_" + name, np.zeros_like(W))
            m = b1 * m + (1.0 - b1) * g
            v = b2 * v + (1.0 - b2) * (g * g)
            new_buffers["m_" + name] = m
            new_buffers["v_" + name] = v
            m_hat = m / (1.0 - b1**t)
            v_hat = v / (1.0 - b2**t)
            W = W - lr * (m_hat / (np.sqrt(v_hat) + config.epsilon) + config.weight_decay * W)
        if not np.isfinite(W).all():
            raise NumericalError(f"non-finite {name} after update")
        new_W[name] = W
    new_params = NetworkParams(new_W["W1"], new_W["W2"], params.activation, params.scaling)
    return new_params, OptimizerState(t, new_buffers)


@dataclass
class NetConfig:
    N: int = 500
    activation: Activation = Activation.QUADRATIC
    seed: int = 0
    scaling: Scaling = Scaling.MEAN_FIELD

    def __post_init__(self):
        try:
            self.activation = Activation(self.activation)
            self.scaling = Scaling(self.scaling)
        except ValueError as e:
            raise ConfigError(str(e)) from None
        if self.N < 1:
            raise ConfigError("N must be >= 1")


@dataclass
class Schedule:
    epochs: int = 10000
    log_every: int = 10
    ipr_every: int = 0          # 0 disables IPR logging
    checkpoint_every: int = 0   # 0 disables periodic checkpoints
    stop_at_test_acc: float | None = None
    patience: int = 1000

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.log_every < 1:
            raise ConfigError("log_every must be >= 1")
        if self.ipr_every < 0 or self.checkpoint_every < 0 or self.patience < 0:
            raise ConfigError("ipr_every, checkpoint_every and patience must be >= 0")


COLUMNS = ("epoch", "train_loss", "test_loss", "train_acc", "test_acc",
           "w1_norm", "w2_norm", "g1_norm", "g2_norm", "avg_ipr2")


@dataclass
class Row:
    epoch: int
    train_loss: float
    test_loss: float
    train_acc: float
    test_acc: float
    w1_norm: float
    w2_norm: float
    g1_norm: float
    g2_norm: float
    avg_ipr2: float = math.nan


@dataclass
class TrainRecord:
    """Metrics per logged epoch.  Epoch e is measured after e updates."""

    rows: list = field(default_factory=list)
    status: str = "running"   # completed | early_stopped | diverged
    message: str = ""

    def append(self, row: Row):
        if self.rows and row.epoch <= self.rows[-1].epoch:
            raise ValueError("epochs must be strictly increasing")
        self.rows.append(row)

    def __len__(self):
        return len(self.rows)

    def column(self, name) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows], dtype=np.float64)

    @property
    def epochs(self) -> np.ndarray:
        return np.array([r.epoch for r in self.rows], dtype=np.int64)

    def to_csv(self, fh=None) -> str | None:
        own = fh is None
        fh = io.StringIO() if own else fh
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COLUMNS)
        for r in self.rows:
            w.writerow([r.epoch] + [repr(float(getattr(r, c))) for c in COLUMNS[1:]])
        return fh.getvalue() if own else None

    @classmethod
    def from_csv(cls, fh) -> "TrainRecord":
        if isinstance(fh, str):
            fh = io.StringIO(fh)
        reader = csv.reader(fh)
        header = tuple(next(reader))
        if header != COLUMNS:
            raise ConfigError(f"unexpected record header {header}")
        rec = cls()
        for line in reader:
            if line:
                rec.append(Row(int(line[0]), *(float(v) for v in line[1:])))
        return rec


def detect_grokking_time(record: TrainRecord, threshold: float = 0.99):
    """First logged epoch from which test accuracy stays >= threshold; None if never."""
    if not 0.0 < threshold <= 1.0:
        raise ConfigError("threshold must lie in (0, 1]")
    acc = record.column("test_acc")
    below = np.nonzero(acc < threshold)[0]
    start = 0 if below.size == 0 else below[-1] + 1
    if start >= len(acc):
        return None
    return int(record.rows[start].epoch)


def first_epoch_at(record: TrainRecord, column: str, threshold: float):
    """First logged epoch with ``column >= threshold`` (no persistence requirement)."""
    hits = np.nonzero(record.column(column) >= threshold)[0]
    return None if hits.size == 0 else int(record.rows[hits[0]].epoch)


def _frob(a):
    return float(np.sqrt(np.sum(a * a)))


@dataclass
class TrainState:
    """Everything needed to continue a run bit-exactly."""

    params: NetworkParams
    opt_state: OptimizerState
    epoch: int = 0


def train(task: ModularTask, split: Split, net_config: NetConfig, opt_config: OptimizerConfig,
          schedule: Schedule, *, resume: TrainState | None = None, on_checkpoint=None,
          record: TrainRecord | None = None):
    """Full-batch training with MSE loss.

    Returns ``(record, final_params)``.  ``record.status`` is ``completed``,
    ``early_stopped`` or ``diverged``; on divergence the record holds every
    row logged before the failure and the last finite parameters are
    returned.  ``on_checkpoint(state)`` is called every
    ``schedule.checkpoint_every`` epochs with the current :class:`TrainState`.
    """
    ds = build_dataset(task)
    train_batch = Batch.from_dataset(ds, split.train)
    test_batch = Batch.from_dataset(ds, split.test)

    if resume is None:
        params = init_params(task.p, net_config.N, net_config.activation, net_config.seed,
                             net_config.scaling)
        state = TrainState(params, OptimizerState(), 0)
    else:
        state = TrainState(resume.params.copy(), resume.opt_state.copy(), resume.epoch)
        if state.params.p != task.p:
            raise ShapeError("resumed parameters do not match the task modulus")
    record = TrainRecord() if record is None else record
    record.status = "running"
    # overflow is detected and reported through record.status instead of warnings
    with np.errstate(over="ignore", invalid="ignore"):
        return _loop(train_batch, test_batch, state, opt_config, schedule, on_checkpoint, record)


def _loop(train_batch, test_batch, state, opt_config, schedule, on_checkpoint, record):
    from .analysis import avg_ipr

    sustained_since = None

    epoch = state.epoch
    while True:
        params = state.params
        trace = forward_batch(params, train_batch)
        train_loss = loss_from_output(trace.h2, train_batch)
        if not math.isfinite(train_loss):
            record.status = "diverged"
            record.message = f"non-finite train loss at epoch {epoch}"
            return record, params
        grads = _backward_from_trace(params, train_batch, trace)
        log_now = epoch % schedule.log_every == 0 or epoch == schedule.epochs
        if log_now:
            test_h2 = forward_batch(params, test_batch).h2
            ipr = math.nan
            if schedule.ipr_every and epoch % schedule.ipr_every == 0:
                ipr = avg_ipr(params, 2)
            row = Row(epoch, train_loss, loss_from_output(test_h2, test_batch),
                      accuracy_from_output(trace.h2, train_batch),
                      accuracy_from_output(test_h2, test_batch),
                      _frob(params.W1), _frob(params.W2), _frob(grads.gW1), _frob(grads.gW2), ipr)
            if not (record.rows and record.rows[-1].epoch >= epoch):
                record.append(row)
            if schedule.stop_at_test_acc is not None:
                if row.test_acc >= schedule.stop_at_test_acc:
                    sustained_since = epoch if sustained_since is None else sustained_since
                    if epoch - sustained_since >= schedule.patience:
                        record.status = "early_stopped"
                        return record, params
                else:
                    sustained_since = None
        if epoch >= schedule.epochs:
            break
        if not (np.isfinite(grads.gW1).all() and np.isfinite(grads.gW2).all()):
            record.status = "diverged"
            record.message = f"non-finite gradient at epoch {epoch}"
            return record, params
        try:
            new_params, new_opt = optimizer_step(params, grads, state.opt_state, opt_config)
        except NumericalError as e:
            record.status = "diverged"
            record.message = f"epoch {epoch}: {e}"
            return record, params
        epoch += 1
        state = TrainState(new_params, new_opt, epoch)
        if on_checkpoint is not None and schedule.checkpoint_every and epoch % schedule.checkpoint_every == 0:
            on_checkpoint(state)
    record.status = "completed"
    return record, state.params
