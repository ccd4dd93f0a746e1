"""Patch-size sweep and ablation sweep, with their CSV layouts and schemas."""
from __future__ import annotations

import csv
import io
import logging
from dataclasses import replace

import jsonschema

from .block import BlockConfig
from .data import HsiCube, SplitManifest, normalize_values
from .efficiency import time_inference, train_step_memory_mb
from .model import ABLATIONS, ModelConfig
from .train import TrainConfig, prepare, train

log = logging.getLogger(__name__)

PATCH_SWEEP = (1, 3, 5, 7, 9, 11, 13, 15)
BENCH_COLUMNS = ("patch", "OA", "memory_mb", "train_s", "test_s")
WIDE_ROWS = (("OA", "OA"), ("Memory (MB)", "memory_mb"), ("Training (s)", "train_s"), ("Test (s)", "test_s"))
ABLATION_COLUMNS = ("method", "input", "forward", "backward", "spatial", "OA", "AA", "kappa")
ABLATION_INPUT = "[Batch, Channel, Height, Width]"
YES, NO = "✓", "×"

_num = {"type": "number", "minimum": 0}
_unit = {"type": "number", "minimum": -1, "maximum": 1}
_mark = {"enum": [YES, NO]}

BENCH_SCHEMA = {
    "type": "array", "minItems": 1,
    "items": {
        "type": "object", "additionalProperties": False, "required": list(BENCH_COLUMNS),
        "properties": {"patch": {"type": "integer", "minimum": 1},
                       "OA": {"type": "number", "minimum": 0, "maximum": 1},
                       "memory_mb": _num, "train_s": _num,
                       "test_s": {"type": "number", "exclusiveMinimum": 0}},
    },
}

ABLATION_SCHEMA = {
    "type": "array", "minItems": 5, "maxItems": 5,
    "items": {
        "type": "object", "additionalProperties": False, "required": list(ABLATION_COLUMNS),
        "properties": {"method": {"enum": list(ABLATIONS)}, "input": {"const": ABLATION_INPUT},
                       "forward": _mark, "backward": _mark, "spatial": _mark,
                       "OA": _unit, "AA": _unit, "kappa": _unit},
    },
}


def _model_cfg(base: ModelConfig, **block_changes) -> ModelConfig:
    return replace(base, block=replace(base.block, **block_changes))


def patch_sweep(cube: HsiCube, manifest: SplitManifest, base: ModelConfig, tcfg: TrainConfig,
                patches=PATCH_SWEEP) -> list[dict]:
    """Train and time one model per patch size; one row per patch."""
    vals = normalize_values(cube.values, tcfg.normalization)
    rows = []
    for p in patches:
        cfg = _model_cfg(base, spatial_dim=p)
        params, report = train(cfg, cube, manifest, tcfg)
        x_te, _ = prepare(cube, manifest, p, "test", values=vals)
        x_tr, y_tr = prepare(cube, manifest, p, "train", values=vals)
        test_s = time_inference(params, cfg, x_te if len(x_te) else x_tr)
        mem = train_step_memory_mb(params, cfg, x_tr[:tcfg.batch_size], y_tr[:tcfg.batch_size])
        rows.append({"patch": p, "OA": report.oa, "memory_mb": mem,
                     "train_s": report.train_seconds, "test_s": test_s})
        log.info("patch %d: OA %.4f  mem %.2f MB  train %.2fs  test %.3fs", p, report.oa, mem,
                 report.train_seconds, test_s)
    return rows


def ablation_sweep(cube: HsiCube, manifest: SplitManifest, base: ModelConfig,
                   tcfg: TrainConfig) -> list[dict]:
    """The five forward/backward/spatial variants, one row each."""
    rows = []
    for name, (f, b, s) in ABLATIONS.items():
        cfg = replace(base, forward_on=f, backward_on=b, spatial_on=s)
        _, report = train(cfg, cube, manifest, tcfg)
        rows.append({"method": name, "input": ABLATION_INPUT,
                     "forward": YES if f else NO, "backward": YES if b else NO, "spatial": YES if s else NO,
                     "OA": report.oa, "AA": report.aa, "kappa": report.kappa})
    return rows


def write_rows(rows: list[dict], columns, fh) -> None:
    w = csv.DictWriter(fh, fieldnames=list(columns), lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: (f"{v:.6g}" if isinstance(v, float) else v) for k, v in r.items()})


def write_wide(rows: list[dict], fh) -> None:
    """Metrics as rows, patch sizes as columns."""
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["Metrics"] + [str(r["patch"]) for r in rows])
    for label, key in WIDE_ROWS:
        w.writerow([label] + [f"{r[key]:.6g}" for r in rows])


def _coerce(row: dict) -> dict:
    out = {}
    for k, v in row.items():
        if k == "patch":
            out[k] = int(v)
        elif k in ("OA", "AA", "kappa", "memory_mb", "train_s", "test_s"):
            out[k] = float(v)
        else:
            out[k] = v
    return out


def read_rows(text: str) -> list[dict]:
    return [_coerce(r) for r in csv.DictReader(io.StringIO(text))]


def read_wide(text: str) -> list[dict]:
    """Back to one dict per patch from the wide layout."""
    table = list(csv.reader(io.StringIO(text)))
    if not table or table[0][0] != "Metrics" or [r[0] for r in table[1:]] != [lbl for lbl, _ in WIDE_ROWS]:
        raise ValueError("not a wide patch-sweep table")
    keys = {lbl: key for lbl, key in WIDE_ROWS}
    rows = [{"patch": int(p)} for p in table[0][1:]]
    for line in table[1:]:
        if len(line) != len(rows) + 1:
            raise ValueError("ragged wide table")
        for r, v in zip(rows, line[1:]):
            r[keys[line[0]]] = float(v)
    return rows


def validate_bench_rows(rows: list[dict], patches=PATCH_SWEEP) -> None:
    jsonschema.validate(rows, BENCH_SCHEMA)
    got = [r["patch"] for r in rows]
    if list(patches) and got != list(patches):
        raise jsonschema.ValidationError(f"patch column {got} != {list(patches)}")


def validate_ablation_rows(rows: list[dict]) -> None:
    jsonschema.validate(rows, ABLATION_SCHEMA)
    for r in rows:
        want = tuple(YES if on else NO for on in ABLATIONS[r["method"]])
        if (r["forward"], r["backward"], r["spatial"]) != want:
            raise jsonschema.ValidationError(f"{r['method']}: flag pattern {want} expected")
    if [r["method"] for r in rows] != list(ABLATIONS):
        raise jsonschema.ValidationError("methods out of order")


def default_block(bands: int, patch: int = 7, hidden: int = 16, **kw) -> BlockConfig:
    return BlockConfig(spatial_dim=patch, num_bands=bands, hidden_dim=hidden, output_dim=hidden, **kw)

