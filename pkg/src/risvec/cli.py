"""Command-line entry point: ``risvec run|summarize|oracle|gradcheck|replay``."""

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .exceptions import ConfigError
from .harness import (
    METHODS,
    ExperimentSpec,
    collect_metric_files,
    default_output_root,
    format_summary,
    load_config,
    replay_manifest,
    run_experiment,
    summarize,
)
from .nn import gradcheck_suite
from .phase_opt import oracle_suite

GRADCHECK_TOL = 1e-4


def _cmd_run(args):
    if args.config:
        spec = load_config(args.config)
    else:
        spec = ExperimentSpec(env={"K": 8})
    changes = {}
    if args.method:
        changes["method"] = args.method
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.episodes is not None:
        changes["train"] = {**spec.train, "episodes": args.episodes}
    if changes:
        spec = replace(spec, **changes)
    output = args.output or spec.output or default_output_root()
    for path in run_experiment(spec, output):
        print(path)
    return 0


def _cmd_summarize(args):
    files = collect_metric_files(args.input)
    text = format_summary(summarize(files, window=args.window))
    if args.output:
        Path(args.output).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def _cmd_oracle(args):
    res = oracle_suite(args.instances, args.elements, args.bits, args.vehicles, seed=args.seed)
    n = res["instances"]
    checks = [
        ("BCD <= brute force", res["below_oracle"] == n, f"{res['below_oracle']}/{n}"),
        ("BCD >= initial", res["above_init"] == n, f"{res['above_init']}/{n}"),
        ("per-element monotone", res["monotone"] == n, f"{res['monotone']}/{n}"),
        ("BCD >= best of 100 random", res["beats_random"] >= 0.95 * n, f"{res['beats_random']}/{n}"),
    ]
    for name, ok, detail in checks:
        print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
    print(f"mean BCD/optimum ratio: {np.mean(res['ratios']):.6f}")
    return 0 if all(ok for _, ok, _ in checks) else 1


def _cmd_gradcheck(args):
    errors = gradcheck_suite(args.networks, seed=args.seed)
    worst = max(errors)
    ok = worst < GRADCHECK_TOL
    print(f"{'PASS' if ok else 'FAIL'}  max relative error over {len(errors)} networks: {worst:.3e}")
    return 0 if ok else 1


def _cmd_replay(args):
    text = replay_manifest(args.manifest)
    target = Path(args.manifest).parent / "metrics.csv"
    if target.exists():
        same = target.read_bytes() == text.encode("utf-8")
        print(f"{'IDENTICAL' if same else 'DIFFERENT'}  {target}")
        return 0 if same else 1
    sys.stdout.write(text)
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="risvec", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run an experiment from a config file")
    p.add_argument("--config")
    p.add_argument("--method", choices=METHODS)
    p.add_argument("--seed", type=int)
    p.add_argument("--episodes", type=int)
    p.add_argument("--output")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("summarize", help="final-window statistics of metrics files")
    p.add_argument("--input", nargs="+", required=True)
    p.add_argument("--window", type=int, default=50)
    p.add_argument("--output")
    p.set_defaults(func=_cmd_summarize)

    p = sub.add_parser("oracle", help="BCD vs brute force / random search")
    p.add_argument("--instances", type=int, default=100)
    p.add_argument("--elements", type=int, default=3)
    p.add_argument("--bits", type=int, default=2)
    p.add_argument("--vehicles", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_oracle)

    p = sub.add_parser("gradcheck", help="backprop vs central finite differences")
    p.add_argument("--networks", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_gradcheck)

    p = sub.add_parser("replay", help="regenerate a run from its manifest")
    p.add_argument("--manifest", required=True)
    p.set_defaults(func=_cmd_replay)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
