#!/usr/bin/env python3
"""Train the five forward/backward/spatial variants on a synthetic scene and print the grid."""
import argparse
import logging
import sys

from threadpoolctl import threadpool_limits

from hsimamba.data import build_split, gen_synthetic
from hsimamba.experiments import ABLATION_COLUMNS, ablation_sweep, default_block, validate_ablation_rows, write_rows
from hsimamba.model import ModelConfig
from hsimamba.train import TrainConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--size", type=int, default=64)
    ap.add_argument("--bands", type=int, default=20)
    ap.add_argument("--classes", type=int, default=4)
    ap.add_argument("--sigma", type=float, default=0.05)
    ap.add_argument("--patch", type=int, default=5)
    ap.add_argument("--hidden", type=int, default=16)
    ap.add_argument("--epochs", type=int, default=50)
    ap.add_argument("--train-per-class", type=int, default=40)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", help="CSV path (stdout if omitted)")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    cube = gen_synthetic(args.size, args.size, args.bands, args.classes, args.sigma, args.seed)
    manifest = build_split(cube, args.train_per_class, args.seed)
    base = ModelConfig(default_block(args.bands, args.patch, args.hidden), args.classes, seed=args.seed)
    with threadpool_limits(limits=1):
        rows = ablation_sweep(cube, manifest, base, TrainConfig(epochs=args.epochs, seed=args.seed))
    validate_ablation_rows(rows)
    if args.out:
        with open(args.out, "w", newline="", encoding="utf-8") as fh:
            write_rows(rows, ABLATION_COLUMNS, fh)
    else:
        write_rows(rows, ABLATION_COLUMNS, sys.stdout)


if __name__ == "__main__":
    main()
