"""Experiment orchestration: single runs, alpha and width sweeps, analytic evaluations.

Every run owns a directory holding

    config.json        fully resolved ExperimentConfig
    record.csv         TrainRecord
    checkpoints/       periodic checkpoints (with optimizer state, for resuming)
    final.ckpt         last parameters
    summary.json       final metrics, grokking epoch, wall time, status
    FAILED             present only when the run diverged
"""

from __future__ import annotations

import dataclasses
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import analysis
from .analytic import build_task_weights
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import ConfigError
from .modtask import ModularTask, build_dataset, split_dataset
from .network import Activation, Batch, NetworkParams, Scaling, predict
from .training import (
    NetConfig,
    OptimizerConfig,
    OptimizerState,
    Schedule,
    TrainRecord,
    TrainState,
    detect_grokking_time,
    first_epoch_at,
    train,
)

SCHEMA_VERSION = 1
OUTPUT_ROOT_ENV = "MODGROK_OUTPUT_ROOT"
GROK_THRESHOLD = 0.99


def output_root() -> Path:
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))


@dataclass
class ExperimentConfig:
    task: str = "add"
    p: int = 97
    f1: object = None
    f2: object = None
    F: object = None
    N: int = 500
    activation: str = "quadratic"
    scaling: str = "mean_field"
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    alpha: float = 0.49
    split_seed: int = 0
    init_seed: int = 0
    schedule: Schedule = field(default_factory=lambda: Schedule(10000, log_every=10))
    out: str | None = None

    def __post_init__(self):
        if isinstance(self.optimizer, dict):
            self.optimizer = _build(OptimizerConfig, self.optimizer, "optimizer")
        if isinstance(self.schedule, dict):
            self.schedule = _build(Schedule, self.schedule, "schedule")
        try:
            self.activation = Activation(self.activation).value
            self.scaling = Scaling(self.scaling).value
        except ValueError as e:
            raise ConfigError(str(e)) from None
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError(f"alpha: must lie in (0, 1), got {self.alpha}")
        if self.N < 1:
            raise ConfigError("N: must be >= 1")
        self.modular_task()   # validates the task fields

    def modular_task(self) -> ModularTask:
        cfg = {"task": self.task, "p": self.p}
        for k in ("f1", "f2", "F"):
            if getattr(self, k) is not None:
                cfg[k] = getattr(self, k)
        return ModularTask.from_config(cfg)

    def net_config(self) -> NetConfig:
        return NetConfig(self.N, self.activation, self.init_seed, self.scaling)

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["optimizer"] = self.optimizer.to_dict()
        d["schedule"] = asdict(self.schedule)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        d.pop("schema_version", None)
        return _build(cls, d, "")

    def to_json(self) -> str:
        return json.dumps({"schema_version": SCHEMA_VERSION, **self.to_dict()}, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        return cls.from_dict(json.loads(text))

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            return cls.from_json(Path(path).read_text())
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: {e}") from None
        except ConfigError as e:
            raise ConfigError(f"{path}: {e}") from None

    def with_overrides(self, overrides) -> "ExperimentConfig":
        """Apply ``key=value`` strings; dotted keys reach into optimizer and schedule."""
        d = self.to_dict()
        for item in overrides:
            key, sep, raw = item.partition("=")
            if not sep:
                raise ConfigError(f"override {item!r} is not of the form key=value")
            try:
                value = json.loads(raw)
            except json.JSONDecodeError:
                value = raw
            *parents, leaf = key.strip().split(".")
            target = d
            for part in parents:
                if not isinstance(target.get(part), dict):
                    raise ConfigError(f"{key}: unknown config section {part!r}")
                target = target[part]
            if leaf not in target:
                raise ConfigError(f"{key}: unknown config field")
            target[leaf] = value
        return ExperimentConfig.from_dict(d)

    def replace(self, **kw) -> "ExperimentConfig":
        d = self.to_dict()
        for k, v in kw.items():
            d[k] = v.to_dict() if isinstance(v, OptimizerConfig) else asdict(v) if isinstance(v, Schedule) else v
        return ExperimentConfig.from_dict(d)


def _build(cls, d, path):
    if not isinstance(d, dict):
        raise ConfigError(f"{path or 'config'}: expected an object")
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(d) - names)
    if unknown:
        where = f"{path}." if path else ""
        raise ConfigError(f"{where}{unknown[0]}: unknown config field")
    try:
        return cls(**d)
    except ConfigError as e:
        raise ConfigError(f"{path}: {e}" if path else str(e)) from None
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{path or 'config'}: {e}") from None


# ---------------------------------------------------------------- single runs

def _write_json(path: Path, obj):
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=True))
    os.replace(tmp, path)


def _opt_arrays(state: OptimizerState):
    return {"opt." + k: v for k, v in state.buffers.items()}


def _checkpoint_meta(config: ExperimentConfig, epoch: int, step: int, origin="trained"):
    return {"seed": config.init_seed, "split_seed": config.split_seed, "epoch": epoch,
            "opt_step": step, "origin": origin, "task": config.modular_task().to_config()}


def latest_checkpoint(run_dir) -> Path | None:
    ckpts = sorted(Path(run_dir, "checkpoints").glob("epoch_*.ckpt"))
    return ckpts[-1] if ckpts else None


def load_train_state(path) -> TrainState:
    ck = load_checkpoint(path)
    buffers = {k[4:]: v for k, v in ck.arrays.items() if k.startswith("opt.")}
    return TrainState(ck.params, OptimizerState(int(ck.meta["opt_step"]), buffers), int(ck.meta["epoch"]))


@dataclass
class RunResult:
    path: Path
    summary: dict
    record: TrainRecord
    params: NetworkParams

    @property
    def ok(self) -> bool:
        return self.summary["status"] != "diverged"


def run(config: ExperimentConfig, out=None, resume: bool = True) -> RunResult:
    """Train one configuration and persist all artifacts.

    With ``resume`` and an existing checkpoint in the directory, training
    continues from the latest checkpoint; the result is bit-identical to an
    uninterrupted run.
    """
    out = Path(out or config.out or output_root() / "run")
    (out / "checkpoints").mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(config.to_json())
    failed = out / "FAILED"
    if failed.exists():
        failed.unlink()

    task = config.modular_task()
    split = split_dataset(build_dataset(task), config.alpha, config.split_seed)
    state, record = None, None
    ckpt = latest_checkpoint(out) if resume else None
    if ckpt is not None:
        state = load_train_state(ckpt)
        record = TrainRecord()
        if (out / "record.csv").exists():
            with open(out / "record.csv", newline="") as fh:
                for row in TrainRecord.from_csv(fh).rows:
                    if row.epoch <= state.epoch:
                        record.append(row)

    live = record if record is not None else TrainRecord()

    def on_checkpoint(st: TrainState):
        save_checkpoint(out / "checkpoints" / f"epoch_{st.epoch:09d}.ckpt", st.params,
                        _checkpoint_meta(config, st.epoch, st.opt_state.step), _opt_arrays(st.opt_state))
        with open(out / "record.csv", "w", newline="") as fh:
            live.to_csv(fh)

    t0 = time.perf_counter()
    record, params = train(task, split, config.net_config(), config.optimizer, config.schedule,
                           resume=state, on_checkpoint=on_checkpoint, record=live)
    wall = time.perf_counter() - t0

    with open(out / "record.csv", "w", newline="") as fh:
        record.to_csv(fh)
    last = record.rows[-1]
    save_checkpoint(out / "final.ckpt", params, _checkpoint_meta(config, last.epoch, -1))
    summary = {
        "schema_version": SCHEMA_VERSION,
        "status": record.status,
        "message": record.message,
        "final_epoch": last.epoch,
        "final_train_acc": last.train_acc,
        "final_test_acc": last.test_acc,
        "final_train_loss": last.train_loss,
        "final_test_loss": last.test_loss,
        "grokking_epoch": detect_grokking_time(record, GROK_THRESHOLD),
        "train_fit_epoch": first_epoch_at(record, "train_acc", 1.0),
        "wall_time_s": wall,
    }
    _write_json(out / "summary.json", summary)
    if record.status == "diverged":
        failed.write_text(record.message + "\n")
    return RunResult(out, summary, record, params)


def evaluate_run(run_dir) -> dict:
    """Re-evaluate final.ckpt against the run's split: final train/test accuracies."""
    run_dir = Path(run_dir)
    config = ExperimentConfig.load(run_dir / "config.json")
    task = config.modular_task()
    ds = build_dataset(task)
    split = split_dataset(ds, config.alpha, config.split_seed)
    params = load_checkpoint(run_dir / "final.ckpt").params
    accs = {}
    for name, idx in (("train", split.train), ("test", split.test)):
        accs[f"{name}_acc"] = float(np.mean(predict(params, Batch.from_dataset(ds, idx)) == ds.q[idx]))
    return accs


def task_accuracy(params: NetworkParams, task: ModularTask) -> float:
    ds = build_dataset(task)
    return float(np.mean(predict(params, Batch.from_dataset(ds)) == ds.q))


def run_analytic(config: ExperimentConfig, out=None) -> dict:
    """Build the closed-form weights for ``config`` and record their accuracy on all p^2 pairs."""
    out = Path(out or config.out or output_root() / "analytic")
    out.mkdir(parents=True, exist_ok=True)
    task = config.modular_task()
    params, phases, readout = build_task_weights(task, config.N, config.init_seed,
                                                 config.activation, config.scaling)
    arrays = {"phi1": phases.phi1, "phi2": phases.phi2, "phi3": phases.phi3}
    meta = _checkpoint_meta(config, 0, 0, origin="analytic")
    if readout is not None:
        arrays["branches"] = readout.branches
        meta["unreachable"] = readout.unreachable.tolist()
    save_checkpoint(out / "analytic.ckpt", params, meta, arrays)
    (out / "config.json").write_text(config.to_json())
    summary = {"schema_version": SCHEMA_VERSION, "origin": "analytic", "N": config.N,
               "accuracy": task_accuracy(params, task), "avg_ipr2": analysis.avg_ipr(params, 2),
               "interference_ratio": analysis.interference_ratio(params, task)}
    _write_json(out / "summary.json", summary)
    return summary


def analyze_checkpoint(path, out, maps=((2, 6),)) -> dict:
    """Spectra, phases and preactivation maps for a stored checkpoint."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    params = load_checkpoint(path).params
    analysis.write_spectra_csv(params, out / "spectra.csv")
    report = analysis.extract_phases(params)
    analysis.write_phases_csv(report, out / "phases.csv")
    for layer, index in maps:
        grid, fourier = analysis.preactivation_map(params, layer, index)
        analysis.write_map_csv(grid, out / f"map_l{layer}_{index}.csv", p=params.p, layer=layer,
                               index=index, kind="preactivation")
        analysis.write_map_csv(fourier, out / f"map_l{layer}_{index}_fourier.csv", p=params.p,
                               layer=layer, index=index, kind="fft2_magnitude")
    counts, edges = report.histogram()
    summary = {
        "schema_version": SCHEMA_VERSION,
        "avg_ipr1": analysis.avg_ipr(params, 1),
        "avg_ipr2": analysis.avg_ipr(params, 2),
        "phase_neurons": int(len(report.neurons)),
        "phase_degenerate": report.degenerate,
        "phase_mismatched": report.mismatched,
        "phase_mass_pi_8": report.mass_within(np.pi / 8),
        "phase_concentration_pi_8": report.concentration(np.pi / 8),
        "phase_histogram": {"counts": counts.tolist(), "edges": edges.tolist()},
    }
    _write_json(out / "analysis.json", summary)
    return summary


# ---------------------------------------------------------------- sweeps

@dataclass
class SweepResult:
    axis: str                                    # "alpha" or "N"
    points: list                                 # one dict per (axis value, arm, seed)
    brackets: dict = field(default_factory=dict)  # arm -> (alpha_lo, alpha_hi)

    def values(self, arm=None, key="grokking_epoch"):
        return [(pt[self.axis], pt[key]) for pt in self.points if arm is None or pt["arm"] == arm]

    def median(self, arm, key):
        """Median of ``key`` over seeds, per axis value; None entries count as +inf."""
        by = {}
        for pt in self.points:
            if pt["arm"] == arm:
                v = pt[key]
                by.setdefault(pt[self.axis], []).append(math.inf if v is None else v)
        return {x: float(np.median(v)) for x, v in sorted(by.items())}

    def to_dict(self):
        return {"schema_version": SCHEMA_VERSION, "axis": self.axis, "points": self.points,
                "brackets": {k: list(v) for k, v in self.brackets.items()}}

    def save(self, out):
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out / "sweep.json", self.to_dict())
        keys = sorted({k for pt in self.points for k in pt})
        with open(out / "sweep.csv", "w") as fh:
            fh.write(",".join(keys) + "\n")
            for pt in self.points:
                fh.write(",".join("" if pt.get(k) is None else str(pt.get(k)) for k in keys) + "\n")


def alpha_bracket(grokked: dict):
    """(largest alpha that failed, smallest alpha from which every larger alpha groks).

    ``grokked`` maps alpha -> bool.  Either end is None when unbounded.
    """
    alphas = sorted(grokked)
    hi = None
    for a in reversed(alphas):
        if not grokked[a]:
            break
        hi = a
    lo = max((a for a in alphas if not grokked[a] and (hi is None or a < hi)), default=None)
    return lo, hi


def _point_task(args):
    kind, cfg_dict, out, extra = args
    cfg = ExperimentConfig.from_dict(cfg_dict)
    if kind == "train":
        res = run(cfg, out)
        return {**extra, **{k: res.summary[k] for k in ("status", "grokking_epoch", "train_fit_epoch",
                                                        "final_train_acc", "final_test_acc",
                                                        "wall_time_s")}}
    t0 = time.perf_counter()
    params, _, _ = build_task_weights(cfg.modular_task(), cfg.N, cfg.init_seed, cfg.activation, cfg.scaling)
    acc = task_accuracy(params, cfg.modular_task())
    return {**extra, "status": "completed", "final_test_acc": acc, "wall_time_s": time.perf_counter() - t0}


def _map(jobs, parallel):
    if parallel <= 1 or len(jobs) <= 1:
        return [_point_task(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=parallel) as ex:
        return list(ex.map(_point_task, jobs))


def _arms(optimizers):
    if isinstance(optimizers, dict):
        return dict(optimizers)
    return {o.kind.value: o for o in optimizers}


def sweep_alpha(base: ExperimentConfig, alphas, optimizers, budget: int, seeds=(0,), out=None,
                parallel: int = 1) -> SweepResult:
    """Grokking epoch per (alpha, optimizer, seed) within an epoch budget.

    ``optimizers`` is a list of OptimizerConfig or a dict of arm name -> config.
    A point counts as grokked when test accuracy reaches 0.99 and stays there.
    """
    alphas = list(alphas)
    if alphas != sorted(alphas):
        raise ConfigError("alphas must be sorted ascending")
    out = Path(out or base.out or output_root() / "sweep_alpha")
    arms = _arms(optimizers)
    jobs = []
    for a in alphas:
        for name, opt in arms.items():
            for s in seeds:
                sched = dataclasses.replace(base.schedule, epochs=budget)
                cfg = base.replace(alpha=a, optimizer=opt, schedule=sched, split_seed=s, init_seed=s)
                jobs.append(("train", cfg.to_dict(), str(out / f"alpha_{a:.4f}" / name / f"seed_{s}"),
                             {"alpha": a, "arm": name, "seed": s}))
    points = _map(jobs, parallel)
    result = SweepResult("alpha", points)
    for name in arms:
        med = result.median(name, "grokking_epoch")
        result.brackets[name] = alpha_bracket({a: math.isfinite(v) for a, v in med.items()})
    result.save(out)
    return result


def sweep_width(base: ExperimentConfig, widths, sources=("gd", "adamw", "analytic"), seeds=(0,),
                optimizers=None, alpha: float = 0.5, out=None, parallel: int = 1) -> SweepResult:
    """Accuracy per (width, source).  Trained sources use ``alpha``; analytic uses all p^2 pairs.

    ``optimizers`` maps a trained source name to its OptimizerConfig; missing
    entries fall back to ``base.optimizer`` with the source name as kind.
    """
    widths = list(widths)
    if widths != sorted(widths):
        raise ConfigError("widths must be sorted ascending")
    out = Path(out or base.out or output_root() / "sweep_width")
    optimizers = dict(optimizers or {})
    jobs = []
    for N in widths:
        for src in sources:
            for s in seeds:
                extra = {"N": N, "arm": src, "seed": s}
                path = str(out / f"N_{N}" / src / f"seed_{s}")
                if src == "analytic":
                    cfg = base.replace(N=N, init_seed=s)
                    jobs.append(("analytic", cfg.to_dict(), path, extra))
                else:
                    opt = optimizers.get(src) or OptimizerConfig(**{**base.optimizer.to_dict(), "kind": src})
                    cfg = base.replace(N=N, alpha=alpha, optimizer=opt, split_seed=s, init_seed=s)
                    jobs.append(("train", cfg.to_dict(), path, extra))
    result = SweepResult("N", _map(jobs, parallel))
    result.save(out)
    return result


def eval_analytic_activations(p: int, widths, activations=("quadratic", "relu", "gelu"), seeds=range(5),
                              scaling="mean_field", stop_at_perfect: bool = True) -> dict:
    """Median accuracy of the addition solution per (activation, width).

    Returns ``{"accuracy": {act: {N: median}}, "threshold": {act: smallest N with median 1.0 or None}}``.
    With ``stop_at_perfect`` an activation's sweep ends at its first perfect width.
    """
    task = ModularTask.add(p)
    acc, thresh = {}, {}
    for act in activations:
        act = Activation(act).value
        acc[act], thresh[act] = {}, None
        for N in widths:
            vals = [task_accuracy(build_task_weights(task, N, s, act, scaling)[0], task) for s in seeds]
            acc[act][N] = float(np.median(vals))
            if acc[act][N] == 1.0 and thresh[act] is None:
                thresh[act] = N
                if stop_at_perfect:
                    break
    return {"schema_version": SCHEMA_VERSION, "p": p, "scaling": Scaling(scaling).value,
            "accuracy": acc, "threshold": thresh}
