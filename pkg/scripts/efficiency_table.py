#!/usr/bin/env python3
"""Leading-term estimates next to counted parameters and multiply-adds.

Prints one line per (patch, bands, hidden) setting, plus the asymptotic
classes for the transformer and CNN reference layers at the same size.
"""
import argparse

from hsimamba.efficiency import count_actual, estimate
from hsimamba.experiments import default_block
from hsimamba.model import ModelConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--patches", default="3,5,7,9")
    ap.add_argument("--bands", default="16,32,64,144")
    ap.add_argument("--hidden", default="4,16")
    ap.add_argument("--batch", type=int, default=1)
    args = ap.parse_args()

    print(f"{'p':>3} {'C':>4} {'D':>3} {'params':>9} {'est flops':>11} {'counted':>11} {'ratio':>6}")
    for p in map(int, args.patches.split(",")):
        for c in map(int, args.bands.split(",")):
            for d in map(int, args.hidden.split(",")):
                act = count_actual(ModelConfig(default_block(c, p, d), 4), args.batch)
                est = estimate("hsimamba", args.batch, p, p, c, D=d)
                print(f"{p:>3} {c:>4} {d:>3} {act.params:>9} {est.flops:>11} {act.flops:>11} "
                      f"{act.flops / est.flops:>6.2f}")
    for kind in ("transformer", "cnn", "hsimamba"):
        prof = estimate(kind, args.batch, 7, 7, 144)
        print(f"{kind:>11}: params {prof.params_class}, flops {prof.flops_class}")


if __name__ == "__main__":
    main()
