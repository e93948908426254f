"""Command line entry point: ``scott gen | run | grid | verify``."""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import dataset as dsm
from .harness import (ConfigError, RunDiverged, emit_csv, generate_dataset, grid_search, parse_config,
                      parse_grid, run, write_grid)
from .optim import DivergenceError

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_VERIFY = 0, 1, 2, 3


def _read(path):
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None


def cmd_gen(args):
    ds, labels = generate_dataset(args.spec, args.seed)
    dsm.write_csv(ds, args.out)
    if labels is not None:
        dsm.write_labels(labels, f"{args.out}.labels")
    print(f"wrote {ds.n_series} series to {args.out}" + (" (+ .labels)" if labels is not None else ""))
    return EXIT_OK


def cmd_run(args):
    cfg = parse_config(_read(args.config))
    try:
        result = run(cfg)
    except RunDiverged as exc:
        if exc.records:
            emit_csv(exc.records, args.out)
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    emit_csv(result.records, args.out)
    last = result.records[-1]
    print(f"{last.grad_evals} gradient evaluations, final train loss {result.final_train_loss:.6g}")
    return EXIT_OK


def cmd_grid(args):
    base = parse_config(_read(args.config))
    grid = parse_grid(_read(args.grid))
    try:
        result = grid_search(base, grid, n_jobs=args.jobs)
    except DivergenceError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    write_grid(result, args.out_dir)
    for label, best in result.best.items():
        gamma = "" if best["gamma"] is None else f" gamma={best['gamma']}"
        print(f"{label}: alpha={best['alpha']}{gamma} median train loss {best['median_train_loss']:.6g}")
    return EXIT_OK


def cmd_verify(args):
    from .verify import run_suite
    results = run_suite()
    width = max(len(name) for name, _, _ in results)
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'}  {name:<{width}}  {detail}")
    failed = sum(not ok for _, ok, _ in results)
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return EXIT_OK if failed == 0 else EXIT_VERIFY


def build_parser():
    p = argparse.ArgumentParser(prog="scott", description="Stratified control-variate training harness")
    sub = p.add_subparsers(dest="command", required=True)
    g = sub.add_parser("gen", help="generate a dataset CSV (plus .labels when ground truth exists)")
    g.add_argument("spec", help="synthetic:<repeats>[:<noise>], fig1:<T>[:<noise>], "
                                "hetero:<delta>:<repeats>[:<noise>], adversarial:<p>:<delta>[:<c>]")
    g.add_argument("out")
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(fn=cmd_gen)
    r = sub.add_parser("run", help="run one configuration and write its convergence CSV")
    r.add_argument("config")
    r.add_argument("out")
    r.set_defaults(fn=cmd_run)
    gr = sub.add_parser("grid", help="grid-search step sizes (and gamma) for one or more optimizers")
    gr.add_argument("config")
    gr.add_argument("grid")
    gr.add_argument("out_dir")
    gr.add_argument("--jobs", type=int, default=1)
    gr.set_defaults(fn=cmd_grid)
    v = sub.add_parser("verify", help="run the oracle suite and print a pass/fail table")
    v.set_defaults(fn=cmd_verify)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
