"""Command line entry point: ``train``, ``compare``, ``analyze`` and ``flops``."""
from __future__ import annotations

import argparse
import json
import sys

from . import harness
from .analysis import flops_step, rank_report
from .config import ConfigError, load_config


def _report(res, out):
    if res.status == harness.EXIT_OK:
        s = res.summary
        print(f"{s['name']}: {s['method']} {s['terminated']} after {s['steps']} steps, "
              f"ranks {s['final_ranks']}, train loss {s['final_train_loss']:.6g} -> {res.run_dir}",
              file=out)
    else:
        print(f"error: {res.message}", file=sys.stderr)


def cmd_train(args):
    res = harness.load_and_run(args.config, args.output)
    _report(res, sys.stdout)
    return res.status


def cmd_compare(args):
    cfgs = []
    for path in args.configs:
        try:
            cfgs.append(load_config(path))
        except OSError as exc:
            print(f"error: cannot read config {path}: {exc}", file=sys.stderr)
            return harness.EXIT_CONFIG
        except ConfigError as exc:
            print(f"error: {path}: {exc}", file=sys.stderr)
            return harness.EXIT_CONFIG
    try:
        results, status = harness.compare(cfgs, args.output)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return harness.EXIT_CONFIG
    for res in results:
        _report(res, sys.stdout)
    return status


def cmd_analyze(args):
    try:
        layers = harness.load_checkpoint(args.checkpoint)
    except (OSError, KeyError, ValueError) as exc:
        print(f"error: cannot read checkpoint {args.checkpoint}: {exc}", file=sys.stderr)
        return harness.EXIT_CONFIG
    print(json.dumps(rank_report(layers).to_dict(), indent=2, sort_keys=True))
    return harness.EXIT_OK


def cmd_flops(args):
    if min(args.m, args.n, args.width) < 1:
        print("error: m, n and p|r must be positive", file=sys.stderr)
        return harness.EXIT_CONFIG
    out = {}
    for method in ("aroma", "lora", "adalora"):
        count, form = flops_step(method, args.m, args.n, args.width)
        out[method] = {"flops": count, "complexity": form}
    print(json.dumps({"m": args.m, "n": args.n, "width": args.width, "methods": out},
                     indent=2, sort_keys=True))
    return harness.EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="aroma", description="Rank-one adapter growth experiments.")
    p.add_argument("--output", default=None,
                   help=f"output root (default: ${harness.OUTPUT_ENV} or ./runs)")
    sub = p.add_subparsers(dest="command", required=True)
    t = sub.add_parser("train", help="run one experiment config")
    t.add_argument("config")
    t.set_defaults(func=cmd_train)
    c = sub.add_parser("compare", help="run several configs and write step-aligned CSVs")
    c.add_argument("configs", nargs="+")
    c.set_defaults(func=cmd_compare)
    a = sub.add_parser("analyze", help="print the rank report of a saved checkpoint")
    a.add_argument("checkpoint")
    a.set_defaults(func=cmd_analyze)
    f = sub.add_parser("flops", help="per-sample adapter cost for each method")
    f.add_argument("m", type=int)
    f.add_argument("n", type=int)
    f.add_argument("width", metavar="p|r", type=int)
    f.set_defaults(func=cmd_flops)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
