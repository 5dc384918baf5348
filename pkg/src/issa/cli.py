"""Command-line harness.

Subcommands:
  verify  -- run the full property suite; exit 0 iff all checks pass
  sweep   -- time and cost-model SA / interlaced / downsampled runs
             over sizes and partitions, emitting CSV or JSON
  ablate  -- cost table over a grid of partition pairs for one size

``ISSA_SEED`` in the environment overrides --seed.
"""

import argparse
import logging
import os
import sys

from . import bench, faults, verify
from .errors import ParameterError


def _parse_sizes(text):
    """"16,32" -> square sizes; "16x8" -> explicit HxW pairs."""
    sizes = []
    if not text:
        return sizes
    for tok in text.split(","):
        tok = tok.strip()
        if not tok:
            continue
        if "x" in tok:
            h, w = tok.split("x")
            sizes.append((int(h), int(w)))
        else:
            sizes.append((int(tok), int(tok)))
    return sizes


def _parse_partitions(text):
    if text == "auto":
        return "auto"
    parts = []
    for tok in text.split(","):
        tok = tok.strip()
        if not tok:
            continue
        if "x" in tok:
            p_h, p_w = tok.split("x")
            parts.append((int(p_h), int(p_w)))
        else:
            parts.append((int(tok), int(tok)))
    return parts


def _resolve_seed(args):
    env = os.environ.get("ISSA_SEED")
    return int(env) if env is not None else args.seed


def _open_out(path):
    if path in (None, "-"):
        return sys.stdout, False
    return open(path, "w"), True


def build_parser():
    parser = argparse.ArgumentParser(
        prog="issa",
        description="Benchmark and verify interlaced sparse self-attention.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_verify = sub.add_parser("verify", help="run the property verification suite")
    p_verify.add_argument("--seed", type=int, default=0)
    p_verify.add_argument(
        "--fault", choices=sorted(faults.KNOWN_FAULTS), default=None,
        help="TEST ONLY: inject a deliberate defect to prove the suite can fail",
    )

    p_sweep = sub.add_parser("sweep", help="cost/time sweep over sizes and methods")
    p_sweep.add_argument("--sizes", default="16,32,64",
                         help="comma list; '32' means 32x32, '16x8' is explicit HxW")
    p_sweep.add_argument("--channels", type=int, default=64)
    p_sweep.add_argument("--batch", type=int, default=1)
    p_sweep.add_argument("--partitions", default="auto",
                         help="'auto' or comma list like '2x2,4x4' or '8'")
    p_sweep.add_argument("--methods", default="sa,issa",
                         help="comma subset of sa,issa,issa-short-first,sa-down2")
    p_sweep.add_argument("--seed", type=int, default=0)
    p_sweep.add_argument("--reps", type=int, default=5)
    p_sweep.add_argument("--warmup", type=int, default=2)
    p_sweep.add_argument("--out", default=None, help="output path (default stdout)")
    p_sweep.add_argument("--format", choices=("csv", "json"), default="csv")

    p_ablate = sub.add_parser("ablate", help="partition-grid cost table for one size")
    p_ablate.add_argument("--size", default="128", help="'128' means 128x128, or 'HxW'")
    p_ablate.add_argument("--channels", type=int, default=64)
    p_ablate.add_argument("--pvals", default="4,8,16",
                          help="comma list of partition counts tried on both axes")
    p_ablate.add_argument("--seed", type=int, default=0)
    p_ablate.add_argument("--reps", type=int, default=3)
    p_ablate.add_argument("--warmup", type=int, default=1)
    p_ablate.add_argument("--out", default=None)
    return parser


def cmd_verify(args):
    if args.fault:
        faults.activate(args.fault)
    try:
        failures = verify.run_all(seed=_resolve_seed(args))
    finally:
        faults.deactivate_all()
    return 0 if failures == 0 else 1


def cmd_sweep(args):
    cfg = bench.BenchConfig(
        sizes=_parse_sizes(args.sizes),
        channels=args.channels,
        batch=args.batch,
        partitions=_parse_partitions(args.partitions),
        methods=tuple(m.strip() for m in args.methods.split(",") if m.strip()),
        seed=_resolve_seed(args),
        repetitions=args.reps,
        warmup=args.warmup,
        out=args.out,
        fmt=args.format,
    )
    reports = bench.run_sweep(cfg)
    fh, close = _open_out(args.out)
    try:
        bench.write_reports(reports, fh, cfg.fmt)
    finally:
        if close:
            fh.close()
    return 0


def cmd_ablate(args):
    (h, w), = _parse_sizes(args.size)
    p_values = tuple(int(v) for v in args.pvals.split(",") if v.strip())
    rows = bench.run_ablation(h, w, args.channels, p_values,
                              seed=_resolve_seed(args),
                              repetitions=args.reps, warmup=args.warmup)
    fh, close = _open_out(args.out)
    try:
        bench.write_ablation(rows, fh)
    finally:
        if close:
            fh.close()
    return 0


def main(argv=None):
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    handlers = {"verify": cmd_verify, "sweep": cmd_sweep, "ablate": cmd_ablate}
    try:
        return handlers[args.command](args)
    except ParameterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
