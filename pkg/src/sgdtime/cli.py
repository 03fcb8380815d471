"""Command line front end: simulate, sweep, gap, analyze, estimate-r.

Every subcommand reads a JSON spec file (or a bundled scenario) plus flag
overrides. Exit codes: 0 on success, 1 for validation problems, 2 when
every requested cell failed at runtime.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from .analyzer import RateConstants, complexity_report
from .harness import (
    DELAY_CLASSES,
    ExperimentSpec,
    emit_report,
    load_spec,
    run_gap_study,
    run_name,
    run_sweep,
    spec_from_dict,
)
from .simulator import ALGORITHMS, SimConfig, run
from .time_models import estimate_tail_scale

SWEEP_SCENARIOS = ("sqrt-fixed", "linear-fixed", "power-fixed", "uniform-random")
GAP_SCENARIOS = ("chaotic", "periodic")


def bundled_spec(name: str, full: bool = False) -> ExperimentSpec:
    """Ready-made scenarios: desk scale by default, full scale on request."""
    workers, dim, budget = (1000, 1000, 2000.0) if full else (100, 200, 200.0)
    if name in GAP_SCENARIOS:
        horizon = 4000.0 if name == "chaotic" else 1300.0
        return spec_from_dict({
            "scenario": name, "workers": 50, "budget": horizon,
            "problem": {"dim": dim, "reveal_prob": 0.01},
            "time_model": {"kind": "power", "generator": name,
                           "horizon": horizon},
            "algorithms": [{"name": "msync"}],
        })
    models = {
        "sqrt-fixed": {"kind": "fixed", "shape": "sqrt"},
        "linear-fixed": {"kind": "fixed", "shape": "linear"},
        "power-fixed": {"kind": "fixed", "shape": "power", "exponent": 1.2},
        "uniform-random": {"kind": "random", "distribution": "uniform",
                           "params": {"low": 0.5, "high": 1.5}},
    }
    if name not in models:
        raise ValueError(f"unknown scenario {name!r}; choose from "
                         f"{SWEEP_SCENARIOS + GAP_SCENARIOS}")
    return spec_from_dict({
        "scenario": name, "workers": workers, "budget": budget,
        "problem": {"dim": dim, "reveal_prob": 0.01},
        "time_model": models[name],
        "algorithms": [{"name": a} for a in ALGORITHMS],
    })


def _spec_for(args) -> ExperimentSpec:
    if args.spec is not None:
        spec = load_spec(args.spec)
    else:
        spec = bundled_spec(args.scenario, getattr(args, "full", False))
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "budget", None) is not None:
        overrides["budget"] = args.budget
    return dataclasses.replace(spec, **overrides) if overrides else spec


class _Parser(argparse.ArgumentParser):
    # argparse normally exits the process with status 2 on bad flags;
    # route that through the validation exit code instead
    def error(self, message):
        raise ValueError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sgdtime",
                     description="Distributed SGD timing simulator and analyzer.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_spec_source(p, scenarios):
        src = p.add_mutually_exclusive_group(required=True)
        src.add_argument("--spec", type=Path, help="JSON experiment spec")
        src.add_argument("--scenario", choices=scenarios,
                         help="bundled scenario instead of a spec file")

    sim = sub.add_parser("simulate", help="run one configuration",
                         description="Run a single simulation from a spec.")
    add_spec_source(sim, SWEEP_SCENARIOS + GAP_SCENARIOS)
    sim.add_argument("--algorithm", required=True, choices=ALGORITHMS)
    sim.add_argument("--gamma", required=True, type=float)
    sim.add_argument("--group", type=int,
                     help="group size (msync) or batch size (rennala)")
    sim.add_argument("--seed", type=int)
    sim.add_argument("--budget", type=float)
    sim.add_argument("--out", type=Path,
                     help="trajectory CSV path (default: derived run name)")
    sim.add_argument("--full", action="store_true",
                     help="full-scale bundled scenario (n=1000, d=1000)")
    sim.set_defaults(func=cmd_simulate)

    swp = sub.add_parser("sweep", help="run a parameter grid",
                         description="Simulate every grid cell and emit reports.")
    add_spec_source(swp, SWEEP_SCENARIOS)
    swp.add_argument("--full", action="store_true",
                     help="full-scale bundled scenario (n=1000, d=1000)")
    swp.add_argument("--jobs", type=int, default=1,
                     help="worker processes for sweep cells")
    swp.add_argument("--seed", type=int)
    swp.add_argument("--budget", type=float)
    swp.add_argument("--outdir", type=Path)
    swp.set_defaults(func=cmd_sweep)

    gap = sub.add_parser("gap", help="lower/upper recursion gap table",
                         description="Tabulate the bound-recursion gap over "
                                     "(noise ratio, group size) cells.")
    add_spec_source(gap, GAP_SCENARIOS)
    gap.add_argument("--noise", type=float, action="append",
                     help="noise ratio level, repeatable (default: 100 1000)")
    gap.add_argument("--units", type=float, default=1.0,
                     help="gradient units charged per recursion step "
                          "(default 1; the guaranteed accounting uses 2)")
    gap.add_argument("--outdir", type=Path)
    gap.set_defaults(func=cmd_gap)

    ana = sub.add_parser("analyze", help="closed-form runtime report",
                         description="Evaluate every closed-form bound for a "
                                     "timing model.")
    src = ana.add_mutually_exclusive_group(required=True)
    src.add_argument("--spec", type=Path)
    src.add_argument("--times", help="comma-separated seconds per gradient")
    ana.add_argument("--work", type=float, default=1.0,
                     help="smoothness x initial gap / target accuracy")
    ana.add_argument("--noise-ratio", type=float, default=1.0,
                     help="gradient variance / target accuracy")
    ana.add_argument("--tail-scale", type=float,
                     help="delay tail scale for the random-delay bound")
    ana.add_argument("--speed", type=float,
                     help="with --idle-fraction: participation bound speed")
    ana.add_argument("--idle-fraction", type=float)
    ana.add_argument("--out", type=Path, help="write JSON here instead of stdout")
    ana.set_defaults(func=cmd_analyze)

    est = sub.add_parser("estimate-r", help="delay tail scale from samples",
                         description="Estimate the logarithmic tail scale of a "
                                     "delay distribution.")
    src = est.add_mutually_exclusive_group(required=True)
    src.add_argument("--samples", type=Path,
                     help="file with one delay sample per line")
    src.add_argument("--distribution", choices=sorted(DELAY_CLASSES))
    est.add_argument("--param", action="append", default=[],
                     metavar="NAME=VALUE", help="distribution parameter")
    est.add_argument("--count", type=int, default=100_000)
    est.add_argument("--seed", type=int, default=0)
    est.set_defaults(func=cmd_estimate_r)
    return parser


def cmd_simulate(args) -> int:
    spec = _spec_for(args)
    needs_group = args.algorithm in ("msync", "rennala")
    if needs_group and args.group is None:
        raise ValueError(f"{args.algorithm} needs --group")
    if not needs_group and args.group is not None:
        raise ValueError(f"--group does not apply to {args.algorithm}")
    seed = spec.seed if args.seed is None else args.seed
    config = SimConfig(
        algorithm=args.algorithm, gamma=args.gamma, time_budget=spec.budget,
        group_size=args.group if args.algorithm == "msync" else None,
        batch_size=args.group if args.algorithm == "rennala" else None,
        seed=seed, record_limit=spec.record_limit)
    try:
        traj = run(spec.build_problem(), spec.build_time_model(), config)
    except Exception as err:
        print(f"run failed: {type(err).__name__}: {err}", file=sys.stderr)
        return 2
    out = args.out or Path(
        run_name(spec, args.algorithm, args.gamma, args.group, seed) + ".csv")
    traj.save_csv(out)
    print(json.dumps({
        "scenario": spec.scenario, "algorithm": args.algorithm,
        "gamma": args.gamma, "group": args.group, "seed": seed,
        "final_time": traj.final_time, "updates": traj.updates,
        "final_f": traj.final_f, "out": str(out),
    }, sort_keys=True))
    return 0


def cmd_sweep(args) -> int:
    spec = _spec_for(args)
    result = run_sweep(spec, jobs=args.jobs)
    outdir = args.outdir or Path(spec.outdir)
    files = emit_report(result, outdir)
    print(f"{len(result.rows)} runs, {result.failures} failures, "
          f"{len(files)} files in {outdir}")
    for name in sorted(result.best):
        row = result.best[name]
        group = "" if row["group"] is None else f" group={row['group']}"
        print(f"best {name}: f={row['final_f']:.6g} at gamma={row['gamma']:g}"
              f"{group}")
    if result.rows and result.failures == len(result.rows):
        print("every run failed", file=sys.stderr)
        return 2
    return 0


def cmd_gap(args) -> int:
    spec = _spec_for(args)
    noise = tuple(args.noise) if args.noise else (100.0, 1000.0)
    study = run_gap_study(spec, noise_ratios=noise, units_per_step=args.units)
    if args.outdir is not None:
        outdir = Path(args.outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        study.save_csv(outdir / "gap.csv")
        (outdir / "gap.json").write_text(study.to_json() + "\n")
    for level in noise:
        if level in study.best:
            ratio, m = study.best[level]
            print(f"noise={level:g}: min ratio {ratio:.4f} at m={m}")
        else:
            print(f"noise={level:g}: every group size stalled")
    if not study.best:
        return 2
    return 0


def cmd_analyze(args) -> int:
    if (args.speed is None) != (args.idle_fraction is None):
        raise ValueError("--speed and --idle-fraction go together")
    if args.spec is not None:
        model = load_spec(args.spec).build_time_model()
    else:
        times = np.array([float(v) for v in args.times.split(",") if v.strip()])
        if times.size == 0:
            raise ValueError("--times needs at least one value")
        from .time_models import FixedTimes
        model = FixedTimes(times)
    consts = RateConstants(args.work, 1.0, args.noise_ratio, 1.0,
                           tail_scale=args.tail_scale)
    participation = None
    if args.speed is not None:
        participation = (args.speed, args.idle_fraction)
    report = complexity_report(model, consts, participation=participation)
    body = report.to_json()
    if args.out is not None:
        args.out.write_text(body + "\n")
        print(f"wrote {args.out}")
    else:
        print(body)
    return 0


def cmd_estimate_r(args) -> int:
    if args.samples is not None:
        text = args.samples.read_text()
        values = [float(v) for v in text.split() if v.strip()]
        if not values:
            raise ValueError(f"{args.samples}: no samples found")
        samples = np.array(values)
    else:
        params = {}
        for item in args.param:
            name, _, value = item.partition("=")
            if not _:
                raise ValueError(f"--param needs NAME=VALUE, got {item!r}")
            params[name] = float(value)
        dist = DELAY_CLASSES[args.distribution](**params)
        if args.count < 1:
            raise ValueError(f"--count must be >= 1, got {args.count}")
        rng = np.random.default_rng(args.seed)
        samples = np.array([dist.sample(rng) for _ in range(args.count)])
    print(repr(estimate_tail_scale(samples)))
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except (ValueError, TypeError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except OSError as err:
        print(f"error: {err.strerror or err}: {err.filename or ''}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
