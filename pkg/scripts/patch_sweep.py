#!/usr/bin/env python3
"""Patch-size sweep on a synthetic scene: OA, memory, train and test time per patch."""
import argparse
import logging
import sys

from threadpoolctl import threadpool_limits

from hsimamba.data import build_split, gen_synthetic
from hsimamba.experiments import (BENCH_COLUMNS, PATCH_SWEEP, default_block, patch_sweep,
                                  validate_bench_rows, write_rows, write_wide)
from hsimamba.model import ModelConfig
from hsimamba.train import TrainConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--size", type=int, default=64)
    ap.add_argument("--bands", type=int, default=20)
    ap.add_argument("--classes", type=int, default=4)
    ap.add_argument("--sigma", type=float, default=0.05)
    ap.add_argument("--patches", default=",".join(map(str, PATCH_SWEEP)))
    ap.add_argument("--hidden", type=int, default=16)
    ap.add_argument("--epochs", type=int, default=20)
    ap.add_argument("--train-per-class", type=int, default=40)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--long", action="store_true", help="one row per patch instead of the wide table")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    patches = [int(p) for p in args.patches.split(",")]
    cube = gen_synthetic(args.size, args.size, args.bands, args.classes, args.sigma, args.seed)
    manifest = build_split(cube, args.train_per_class, args.seed)
    base = ModelConfig(default_block(args.bands, patches[0], args.hidden), args.classes, seed=args.seed)
    with threadpool_limits(limits=1):
        rows = patch_sweep(cube, manifest, base, TrainConfig(epochs=args.epochs, seed=args.seed), patches)
    validate_bench_rows(rows, patches)
    if args.long:
        write_rows(rows, BENCH_COLUMNS, sys.stdout)
    else:
        write_wide(rows, sys.stdout)


if __name__ == "__main__":
    main()
