"""Command-line entry point: ``hsimamba <subcommand> ...``.

Exit codes: 0 success, 2 validation error (bad flags, failed gradient check),
3 training divergence, 4 I/O error (missing or malformed files).

Every subcommand accepts ``--config FILE.json`` whose keys (flag names with
dashes or underscores) supply values; flags given on the command line win.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .block import REVERSE_MODES, SEQUENCE_MODES, BlockConfig
from .checkpoint import CheckpointError
from .data import (CubeFormatError, HsiCube, SplitManifest, build_split, gen_synthetic,
                   manifest_from_plane, read_cube, split_plane, write_cube)
from .experiments import (ABLATION_COLUMNS, BENCH_COLUMNS, ablation_sweep, patch_sweep,
                          validate_ablation_rows, validate_bench_rows, write_rows, write_wide)
from .model import ModelConfig, load_checkpoint, save_checkpoint
from .train import DivergenceError, RunReport, TrainConfig, evaluate, metrics, prepare, train

log = logging.getLogger("hsimamba")

EXIT_OK, EXIT_USAGE, EXIT_DIVERGED, EXIT_IO = 0, 2, 3, 4

DEFAULTS = {
    "synth": dict(height=64, width=64, bands=20, classes=4, sigma=0.05, seed=0, train_per_class=None),
    "train": dict(patch=7, hidden=16, epochs=50, lr=5e-4, batch=32, seed=0, ablation="fwd,bwd,spatial",
                  sequence_mode="spectral", reverse_mode="flip", train_per_class=40, split_seed=0,
                  manifest=None, no_augment=False, dtype="float32", normalization="minmax",
                  out_report=None),
    "eval": dict(manifest=None, out_report=None),
    "gradcheck": dict(patch=3, bands=8, hidden=4, classes=3, seed=0, tolerance=1e-4,
                      sequence_mode="spectral", reverse_mode="flip"),
    "bench": dict(patch_sweep="1,3,5,7,9,11,13,15", hidden=16, epochs=50, lr=5e-4, batch=32, seed=0,
                  train_per_class=40, split_seed=0, manifest=None, no_augment=False, dtype="float32",
                  normalization="minmax", wide=False),
    "sweep-ablation": dict(patch=5, hidden=16, epochs=50, lr=5e-4, batch=32, seed=0, train_per_class=40,
                           split_seed=0, manifest=None, no_augment=False, dtype="float32",
                           normalization="minmax"),
}
PATH_FLAGS = ("cube", "checkpoint", "manifest")


class UsageError(Exception):
    pass


# ------------------------------------------------------------------- parsing

def _add_train_flags(p, with_patch=True):
    if with_patch:
        p.add_argument("--patch", type=int)
    p.add_argument("--hidden", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--train-per-class", type=int)
    p.add_argument("--split-seed", type=int)
    p.add_argument("--manifest", help="split manifest JSON (overrides the cube's split plane)")
    p.add_argument("--no-augment", action="store_true", default=None)
    p.add_argument("--dtype", choices=["float32", "float64"])
    p.add_argument("--normalization", choices=["minmax", "zscore", "none"])


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hsimamba", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic cube")
    p.add_argument("--out", required=True)
    p.add_argument("--height", type=int)
    p.add_argument("--width", type=int)
    p.add_argument("--bands", type=int)
    p.add_argument("--classes", type=int)
    p.add_argument("--sigma", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--train-per-class", type=int, help="also write a stratified split plane")

    p = sub.add_parser("train", help="train a model and write checkpoint + report")
    p.add_argument("--cube", required=True)
    _add_train_flags(p)
    p.add_argument("--ablation", help="comma list from {fwd,bwd,spatial}")
    p.add_argument("--sequence-mode", choices=SEQUENCE_MODES)
    p.add_argument("--reverse-mode", choices=REVERSE_MODES)
    p.add_argument("--out-checkpoint", required=True)
    p.add_argument("--out-report")

    p = sub.add_parser("eval", help="evaluate a checkpoint on the test split")
    p.add_argument("--cube", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest")
    p.add_argument("--out-report")

    p = sub.add_parser("gradcheck", help="finite-difference check of every parameter group")
    p.add_argument("--patch", type=int)
    p.add_argument("--bands", type=int)
    p.add_argument("--hidden", type=int)
    p.add_argument("--classes", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--tolerance", type=float)
    p.add_argument("--sequence-mode", choices=SEQUENCE_MODES)
    p.add_argument("--reverse-mode", choices=REVERSE_MODES)

    p = sub.add_parser("bench", help="patch-size sweep: OA, memory, train and test time")
    p.add_argument("--cube", required=True)
    p.add_argument("--patch-sweep")
    _add_train_flags(p, with_patch=False)
    p.add_argument("--wide", action="store_true", default=None,
                   help="metrics as rows, patch sizes as columns")
    p.add_argument("--out-csv", required=True)

    p = sub.add_parser("sweep-ablation", help="train the five ablation variants")
    p.add_argument("--cube", required=True)
    _add_train_flags(p)
    p.add_argument("--out-csv", required=True)

    for action in sub.choices.values():
        action.add_argument("--config", help="JSON file of flag values")
    return ap


def resolve(args: argparse.Namespace) -> argparse.Namespace:
    """Fill unset flags from --config, then from the subcommand defaults."""
    cfg = {}
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.is_file():
            raise FileNotFoundError(f"config file not found: {path}")
        cfg = {k.replace("-", "_"): v for k, v in json.loads(path.read_text()).items()}
    for key, default in DEFAULTS[args.command].items():
        if getattr(args, key, None) is None:
            setattr(args, key, cfg.get(key, default))
    unknown = set(cfg) - set(DEFAULTS[args.command])
    if unknown:
        raise UsageError(f"unsupported keys in config for {args.command}: {sorted(unknown)}")
    return args


def parse_ablation(text: str) -> tuple[bool, bool, bool]:
    if str(text).strip() == "all":
        return True, True, True
    parts = {s.strip() for s in str(text).split(",") if s.strip()}
    bad = parts - {"fwd", "bwd", "spatial", "none"}
    if bad:
        raise UsageError(f"unknown ablation path(s) {sorted(bad)}; use fwd,bwd,spatial")
    flags = ("fwd" in parts, "bwd" in parts, "spatial" in parts)
    if not any(flags):
        raise UsageError("--ablation must enable at least one of fwd, bwd, spatial")
    return flags


def _positive(args, *names):
    for n in names:
        v = getattr(args, n)
        if v is None or v <= 0:
            raise UsageError(f"--{n.replace('_', '-')} must be positive, got {v}")


def validate(args) -> None:
    for n in PATH_FLAGS:
        v = getattr(args, n, None)
        if v and not Path(v).is_file():
            raise FileNotFoundError(f"--{n}: file not found: {v}")
    cmd = args.command
    if cmd == "synth":
        _positive(args, "height", "width", "bands", "classes")
        if args.sigma < 0:
            raise UsageError("--sigma must be >= 0")
    if cmd in ("train", "bench", "sweep-ablation"):
        _positive(args, "hidden", "lr", "batch", "train_per_class")
        if args.epochs < 0:
            raise UsageError("--epochs must be >= 0")
    if cmd in ("train", "sweep-ablation", "gradcheck"):
        if args.patch < 1 or args.patch % 2 == 0:
            raise UsageError("--patch must be a positive odd integer")
    if cmd == "train":
        args.ablation_flags = parse_ablation(args.ablation)
    if cmd == "bench":
        try:
            args.patches = [int(s) for s in str(args.patch_sweep).split(",") if s.strip()]
        except ValueError as exc:
            raise UsageError(f"--patch-sweep: {exc}") from None
        if not args.patches or any(p < 1 or p % 2 == 0 for p in args.patches):
            raise UsageError("--patch-sweep entries must be positive odd integers")
    if cmd == "gradcheck":
        _positive(args, "bands", "hidden", "classes", "tolerance")


# ------------------------------------------------------------------ commands

def _train_config(args) -> TrainConfig:
    return TrainConfig(lr=args.lr, batch_size=args.batch, epochs=args.epochs, seed=args.seed,
                       augment=not args.no_augment, dtype=args.dtype, normalization=args.normalization)


def _split(cube: HsiCube, manifest_path, per_class, seed) -> tuple[SplitManifest, dict]:
    if manifest_path:
        return SplitManifest.from_json(Path(manifest_path).read_text()), {"source": "manifest",
                                                                         "path": str(manifest_path)}
    if cube.split is not None:
        return manifest_from_plane(cube), {"source": "cube"}
    return build_split(cube, per_class, seed), {"source": "drawn", "per_class": per_class, "seed": seed}


def _write_report(report: RunReport, path) -> None:
    if not path:
        print(report.to_json())
        return
    path = Path(path)
    path.write_text(report.to_json())
    path.with_suffix(".confusion.csv").write_text(report.confusion_csv())


def cmd_synth(args) -> int:
    cube = gen_synthetic(args.height, args.width, args.bands, args.classes, args.sigma, args.seed)
    if args.train_per_class:
        cube.split = split_plane(cube, build_split(cube, args.train_per_class, args.seed))
    write_cube(cube, args.out)
    log.info("wrote %s (%dx%dx%d, %d classes)", args.out, *cube.shape, cube.num_classes)
    return EXIT_OK


def cmd_train(args) -> int:
    cube = read_cube(args.cube)
    fwd, bwd, sp = args.ablation_flags
    block = BlockConfig(spatial_dim=args.patch, num_bands=cube.shape[2], hidden_dim=args.hidden,
                        output_dim=args.hidden, sequence_mode=args.sequence_mode,
                        reverse_mode=args.reverse_mode)
    cfg = ModelConfig(block, cube.num_classes, fwd, bwd, sp, seed=args.seed)
    tcfg = _train_config(args)
    manifest, split_info = _split(cube, args.manifest, args.train_per_class, args.split_seed)
    params, report = train(cfg, cube, manifest, tcfg)
    report.config["split"] = split_info
    save_checkpoint(args.out_checkpoint, params, cfg, {"train": tcfg.to_dict(), "split": split_info})
    _write_report(report, args.out_report)
    return EXIT_OK


def cmd_eval(args) -> int:
    cube = read_cube(args.cube)
    params, cfg, extra = load_checkpoint(args.checkpoint)
    tinfo = extra.get("train", {})
    split = extra.get("split", {})
    manifest, split_info = _split(cube, args.manifest or split.get("path"),
                                  split.get("per_class"), split.get("seed"))
    x, y = prepare(cube, manifest, cfg.block.spatial_dim, "test", tinfo.get("normalization", "minmax"))
    t0 = time.perf_counter()
    cm = evaluate(params, cfg, x, y)
    test_s = time.perf_counter() - t0
    oa, aa, kappa = metrics(cm)
    report = RunReport([], cm.tolist(), oa, aa, kappa, 0.0, test_s, 0.0,
                       {"model": cfg.to_dict(), "train": tinfo, "split": split_info})
    _write_report(report, args.out_report)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from . import tensor as T
    from .gradcheck import check_gradients
    from .model import init_model, model_forward

    block = BlockConfig(spatial_dim=args.patch, num_bands=args.bands, hidden_dim=args.hidden,
                        output_dim=args.hidden, sequence_mode=args.sequence_mode,
                        reverse_mode=args.reverse_mode)
    cfg = ModelConfig(block, args.classes, seed=args.seed)
    params = init_model(cfg, np.float64)
    rng = np.random.default_rng(args.seed)
    x = T.Tensor(rng.standard_normal((2, args.patch, args.patch, args.bands)))
    y = rng.integers(0, args.classes, size=2)
    errs = check_gradients(lambda: T.softmax_cross_entropy(model_forward(x, params, cfg), y), params.named())
    ok = True
    for name, err in errs.items():
        passed = err <= args.tolerance
        ok &= passed
        print(f"{'PASS' if passed else 'FAIL'}  {name:24s} max rel err {err:.3e}")
    print(f"gradcheck {'passed' if ok else 'FAILED'} at tolerance {args.tolerance:g}")
    return EXIT_OK if ok else EXIT_USAGE


def _sweep_inputs(args):
    cube = read_cube(args.cube)
    manifest, _ = _split(cube, args.manifest, args.train_per_class, args.split_seed)
    return cube, manifest, _train_config(args)


def cmd_bench(args) -> int:
    cube, manifest, tcfg = _sweep_inputs(args)
    base = ModelConfig(BlockConfig(args.patches[0], cube.shape[2], args.hidden, args.hidden),
                       cube.num_classes, seed=args.seed)
    rows = patch_sweep(cube, manifest, base, tcfg, args.patches)
    validate_bench_rows(rows, args.patches)
    with open(args.out_csv, "w", newline="") as fh:
        (write_wide(rows, fh) if args.wide else write_rows(rows, BENCH_COLUMNS, fh))
    return EXIT_OK


def cmd_sweep_ablation(args) -> int:
    cube, manifest, tcfg = _sweep_inputs(args)
    base = ModelConfig(BlockConfig(args.patch, cube.shape[2], args.hidden, args.hidden),
                       cube.num_classes, seed=args.seed)
    rows = ablation_sweep(cube, manifest, base, tcfg)
    validate_ablation_rows(rows)
    with open(args.out_csv, "w", newline="", encoding="utf-8") as fh:
        write_rows(rows, ABLATION_COLUMNS, fh)
    return EXIT_OK


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "eval": cmd_eval, "gradcheck": cmd_gradcheck,
            "bench": cmd_bench, "sweep-ablation": cmd_sweep_ablation}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        resolve(args)
        validate(args)
    except UsageError as exc:
        parser.error(str(exc))
    except FileNotFoundError as exc:
        print(f"hsimamba: {exc}", file=sys.stderr)
        return EXIT_IO
    from threadpoolctl import threadpool_limits
    try:
        with threadpool_limits(limits=1):
            return COMMANDS[args.command](args)
    except DivergenceError as exc:
        print(f"hsimamba: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (OSError, CubeFormatError, CheckpointError) as exc:
        print(f"hsimamba: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"hsimamba: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
