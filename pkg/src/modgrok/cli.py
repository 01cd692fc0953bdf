"""Command line entry point: ``modgrok <subcommand> [options]``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import harness
from .errors import ModGrokError
from .training import OptimizerConfig


def _floats(text):
    return [float(v) for v in text.split(",") if v]


def _ints(text):
    return [int(v) for v in text.split(",") if v]


def _common(sub):
    sub.add_argument("--config", type=Path, help="JSON experiment config")
    sub.add_argument("--seed", type=int, help="sets both split_seed and init_seed")
    sub.add_argument("--out", type=Path, help=f"output directory (default: ${harness.OUTPUT_ROOT_ENV}/<cmd>)")
    sub.add_argument("--parallel", type=int, default=1, help="worker processes for sweeps")
    sub.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                     help="override a config field, e.g. optimizer.learning_rate=1e5 (repeatable)")


def build_parser():
    parser = argparse.ArgumentParser(prog="modgrok", description=__doc__)
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("train", help="train one configuration")
    _common(p)
    p.add_argument("--no-resume", action="store_true", help="ignore checkpoints already in --out")

    p = subs.add_parser("analytic", help="build and evaluate closed-form weights")
    _common(p)

    p = subs.add_parser("analyze", help="spectra, phases and preactivation maps of a checkpoint")
    _common(p)
    p.add_argument("checkpoint", type=Path)
    p.add_argument("--map", action="append", default=[], metavar="LAYER:INDEX",
                   help="preactivation map to export (default 2:6)")

    p = subs.add_parser("sweep-alpha", help="grokking epoch vs training fraction")
    _common(p)
    p.add_argument("--alphas", type=_floats, required=True, help="comma-separated, ascending")
    p.add_argument("--optimizers", default="gd,adamw",
                   help="comma-separated arms among gd, gd_momentum_wd, adamw")
    p.add_argument("--budget", type=int, required=True, help="epochs per point")
    p.add_argument("--seeds", type=_ints, default=[0])

    p = subs.add_parser("sweep-width", help="accuracy vs hidden width")
    _common(p)
    p.add_argument("--widths", type=_ints, required=True)
    p.add_argument("--sources", default="gd,adamw,analytic")
    p.add_argument("--seeds", type=_ints, default=[0])
    p.add_argument("--alpha", type=float, default=0.5)

    p = subs.add_parser("eval-activations", help="analytic accuracy vs width per activation")
    _common(p)
    p.add_argument("--widths", type=_ints, required=True)
    p.add_argument("--activations", default="quadratic,relu,gelu")
    p.add_argument("--seeds", type=_ints, default=list(range(5)))
    p.add_argument("--scaling", default="mean_field", choices=["mean_field", "appendix_b"])
    return parser


def _config(args):
    cfg = harness.ExperimentConfig.load(args.config) if args.config else harness.ExperimentConfig()
    overrides = list(args.set)
    if args.seed is not None:
        overrides += [f"split_seed={args.seed}", f"init_seed={args.seed}"]
    return cfg.with_overrides(overrides)


def _out(args, name):
    return args.out or harness.output_root() / name


def _arm(name, base):
    if name == base.optimizer.kind.value:
        return base.optimizer
    if name == "adamw":
        return OptimizerConfig.adamw()
    return OptimizerConfig(name, base.optimizer.learning_rate)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _config(args)
        if args.command == "train":
            res = harness.run(cfg, _out(args, "train"), resume=not args.no_resume)
            print(json.dumps(res.summary, indent=2))
            return 0 if res.ok else 3
        if args.command == "analytic":
            print(json.dumps(harness.run_analytic(cfg, _out(args, "analytic")), indent=2))
            return 0
        if args.command == "analyze":
            maps = [tuple(int(v) for v in m.split(":")) for m in args.map] or [(2, 6)]
            summary = harness.analyze_checkpoint(args.checkpoint, _out(args, "analyze"), maps)
            summary.pop("phase_histogram")
            print(json.dumps(summary, indent=2))
            return 0
        if args.command == "sweep-alpha":
            arms = {n: _arm(n, cfg) for n in args.optimizers.split(",")}
            res = harness.sweep_alpha(cfg, args.alphas, arms, args.budget, args.seeds,
                                      _out(args, "sweep_alpha"), args.parallel)
            print(json.dumps({"brackets": res.brackets}, indent=2))
            return 0
        if args.command == "sweep-width":
            sources = args.sources.split(",")
            opts = {s: _arm(s, cfg) for s in sources if s != "analytic"}
            res = harness.sweep_width(cfg, args.widths, sources, args.seeds, opts, args.alpha,
                                      _out(args, "sweep_width"), args.parallel)
            print(json.dumps({src: res.median(src, "final_test_acc") for src in sources}, indent=2))
            return 0
        table = harness.eval_analytic_activations(cfg.p, args.widths, args.activations.split(","),
                                                  args.seeds, args.scaling)
        out = Path(_out(args, "eval_activations"))
        out.mkdir(parents=True, exist_ok=True)
        (out / "activations.json").write_text(json.dumps(table, indent=2))
        print(json.dumps(table["threshold"], indent=2))
        return 0
    except (ModGrokError, ValueError, OSError) as e:
        print(f"modgrok: error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
