import io
import math

import jsonschema
import numpy as np
import pytest

from hsimamba.block import BlockConfig
from hsimamba.efficiency import (bench, count_actual, estimate, param_count_from_checkpoint,
                                 time_inference)
from hsimamba.experiments import (ABLATION_INPUT, BENCH_COLUMNS, read_rows, read_wide,
                                  validate_ablation_rows, validate_bench_rows, write_rows, write_wide)
from hsimamba.model import ModelConfig, init_model, save_checkpoint


def mcfg(p=3, ch=8, e=4, o=None, k=3, **kw):
    return ModelConfig(BlockConfig(p, ch, e, o or e, **kw), num_classes=k)


def analytic_params(cfg):
    b = cfg.block
    p2, c, e, o, k = b.spatial_dim ** 2, b.num_bands, b.hidden_dim, b.output_dim, cfg.num_classes
    s = math.ceil(e / 2)
    pin = b.proj_in
    n = 2 * p2 * c + 2 * (pin * e + e) + 2 * (3 * e * e + e) + 2 * e * e + e + 2 * (e * o + o)
    n += 9 * s + s + s * o + o + o * k + k
    if b.reverse_mode == "learned":
        n += e * e + e
    return n


def analytic_flops(cfg, batch):
    b = cfg.block
    p2, e, o, L = b.spatial_dim ** 2, b.hidden_dim, b.output_dim, b.seq_len
    s = math.ceil(e / 2)
    per = 2 * L * b.proj_in * e + 2 * L * e * e * 3 + 2 * e * e + 2 * e * o
    per += 9 * p2 * s + s * o + o * cfg.num_classes
    if b.reverse_mode == "learned":
        per += L * e * e
    return batch * per


# ----------------------------------------------------------------- estimate

def test_hsimamba_asymptotic_strings():
    prof = estimate("hsimamba", 2, 5, 5, 144, D=8)
    assert (prof.params_class, prof.flops_class) == ("O(C + HW)", "O(BHW · C)")
    assert prof.params == 144 + 25


def test_cnn_flops_scale_with_kernel_area():
    assert estimate("cnn", 4, 7, 7, 30, k=5).flops / estimate("cnn", 4, 7, 7, 30, k=1).flops == 25


def test_transformer_flops_quadratic_in_channels():
    assert estimate("transformer", 4, 7, 7, 60).flops / estimate("transformer", 4, 7, 7, 30).flops == 4


def test_estimate_rejects_bad_input():
    with pytest.raises(ValueError):
        estimate("rnn", 1, 1, 1, 1)
    with pytest.raises(ValueError):
        estimate("cnn", 0, 1, 1, 1)


# --------------------------------------------------------------- count_actual

@pytest.mark.parametrize("kw", [{}, {"sequence_mode": "literal"}, {"reverse_mode": "learned"}])
def test_param_count_matches_enumeration(tmp_path, kw):
    cfg = mcfg(p=5, ch=10, e=6, o=4, **kw)
    prof = count_actual(cfg)
    assert prof.params == analytic_params(cfg)
    save_checkpoint(tmp_path / "m.ckpt", init_model(cfg), cfg)
    assert param_count_from_checkpoint(tmp_path / "m.ckpt") == prof.params


@pytest.mark.parametrize("kw", [{}, {"sequence_mode": "literal"}, {"reverse_mode": "learned"}])
def test_flop_count_matches_closed_form(kw):
    cfg = mcfg(p=5, ch=10, e=6, o=4, **kw)
    assert count_actual(cfg, batch=3).flops == analytic_flops(cfg, 3)


def test_flops_double_with_batch():
    cfg = mcfg(p=5, ch=12)
    assert count_actual(cfg, 8).flops == 2 * count_actual(cfg, 4).flops


def test_flops_linear_in_bands():
    ch = np.array([16, 32, 64])
    f = np.array([count_actual(mcfg(p=5, ch=int(c), e=8)).flops for c in ch], dtype=float)
    slope, icept = np.polyfit(ch, f, 1)
    r2 = 1 - np.sum((f - (slope * ch + icept)) ** 2) / np.sum((f - f.mean()) ** 2)
    assert r2 >= 0.999


@pytest.mark.parametrize("p", [5, 7, 9])
@pytest.mark.parametrize("e", [2, 4])
@pytest.mark.parametrize("ch", [16, 32, 64])
def test_estimate_within_factor_four(p, e, ch):
    est = estimate("hsimamba", 2, p, p, ch, D=e).flops
    act = count_actual(mcfg(p=p, ch=ch, e=e), batch=2).flops
    assert 0.25 <= act / est <= 4


# --------------------------------------------------------------------- bench

def test_bench_positive():
    r = bench(mcfg(), 64)
    assert r.test_seconds > 0 and r.memory_mb > 0 and r.flops_per_sample > 0


def test_inference_time_trend_over_patch_sweep():
    patches = [1, 3, 5, 7, 9, 11, 13, 15]
    flops, times = [], []
    for p in patches:
        cfg = mcfg(p=p, ch=20, e=8)
        params = init_model(cfg)
        x = np.random.default_rng(0).random((1500, p, p, 20))
        flops.append(count_actual(cfg, 1, params).flops)
        times.append(time_inference(params, cfg, x))
    assert all(b > a for a, b in zip(flops, flops[1:]))
    # wall clock: non-decreasing up to 10% timer jitter, and clearly rising end to end
    assert all(b >= 0.9 * a for a, b in zip(times, times[1:])), times
    assert times[-1] > times[0]


# ------------------------------------------------------------------ schemas

def _bench_rows():
    return [{"patch": p, "OA": 0.9, "memory_mb": 1.5, "train_s": 2.0, "test_s": 0.1}
            for p in (1, 3, 5, 7, 9, 11, 13, 15)]


def test_bench_csv_long_and_wide_layouts():
    rows = _bench_rows()
    buf = io.StringIO()
    write_rows(rows, BENCH_COLUMNS, buf)
    back = read_rows(buf.getvalue())
    validate_bench_rows(back)
    assert buf.getvalue().splitlines()[0] == "patch,OA,memory_mb,train_s,test_s"
    buf = io.StringIO()
    write_wide(rows, buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "Metrics,1,3,5,7,9,11,13,15"
    assert [ln.split(",")[0] for ln in lines[1:]] == ["OA", "Memory (MB)", "Training (s)", "Test (s)"]
    validate_bench_rows(read_wide(buf.getvalue()))


def test_bench_schema_rejects_bad_rows():
    rows = _bench_rows()
    rows[2]["OA"] = 1.5
    with pytest.raises(jsonschema.ValidationError):
        validate_bench_rows(rows)
    with pytest.raises(jsonschema.ValidationError):
        validate_bench_rows(_bench_rows()[:7])


def test_ablation_schema():
    marks = {True: "✓", False: "×"}
    from hsimamba.model import ABLATIONS
    rows = [{"method": m, "input": ABLATION_INPUT, "forward": marks[f], "backward": marks[b],
             "spatial": marks[s], "OA": 0.9, "AA": 0.9, "kappa": 0.8} for m, (f, b, s) in ABLATIONS.items()]
    validate_ablation_rows(rows)
    rows[4]["spatial"] = "×"
    with pytest.raises(jsonschema.ValidationError):
        validate_ablation_rows(rows)
    with pytest.raises(jsonschema.ValidationError):
        validate_ablation_rows(rows[:4])
