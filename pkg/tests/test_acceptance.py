"""Acceptance criteria, one test each.

Every test prints a single PASS/FAIL line (also collected into the
"acceptance criteria" section of the terminal summary) and enforces its
runtime budget.
"""
import io
import time
from contextlib import contextmanager
from dataclasses import replace

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from hsimamba import tensor as T
from hsimamba.block import BlockConfig, block_forward, init_params
from hsimamba.cli import main
from hsimamba.data import build_split, gen_synthetic
from hsimamba.efficiency import count_actual
from hsimamba.experiments import (PATCH_SWEEP, read_rows, read_wide, validate_ablation_rows,
                                  validate_bench_rows)
from hsimamba.gradcheck import check_gradients
from hsimamba.model import (ABLATIONS, ModelConfig, init_model, load_checkpoint, model_forward,
                            save_checkpoint)
from hsimamba.tensor import Tensor
from hsimamba.train import TrainConfig, metrics, train


@contextmanager
def criterion(name: str, budget_s: float):
    """Time the body, check the budget, and emit one PASS/FAIL line."""
    info: dict = {}
    t0 = time.perf_counter()
    try:
        yield info
        elapsed = time.perf_counter() - t0
        assert elapsed < budget_s, f"took {elapsed:.1f}s, budget {budget_s:.0f}s"
    except BaseException as exc:
        line = f"FAIL  {name}: {exc}".splitlines()[0]
        print(line)
        ACCEPTANCE_LINES.append(line)
        raise
    detail = info.get("detail", "")
    line = f"PASS  {name} ({elapsed:.1f}s){': ' + detail if detail else ''}"
    print(line)
    ACCEPTANCE_LINES.append(line)


# ---------------------------------------------------------------- gradients

def _op_cases(rng):
    def leaf(*shape):
        return Tensor(rng.standard_normal(shape), requires_grad=True)

    x2, w, b = leaf(4, 5), leaf(5, 3), leaf(3)
    seq, k1, kb1 = leaf(2, 3, 6), leaf(3, 3, 3), leaf(3)
    img, k2, kb2 = leaf(2, 1, 5, 5), leaf(2, 1, 3, 3), leaf(2)
    g, be = leaf(5), leaf(5)
    a, c = leaf(3, 4), leaf(4)
    logits, labels = leaf(5, 4), rng.integers(0, 4, size=5)
    return {
        "add": (lambda: T.tsum(T.tanh(T.add(a, c))), dict(a=a, c=c)),
        "mul": (lambda: T.tsum(T.mul(a, c)), dict(a=a, c=c)),
        "silu": (lambda: T.tsum(T.silu(a)), dict(a=a)),
        "tanh": (lambda: T.tsum(T.tanh(a)), dict(a=a)),
        "reshape/transpose": (lambda: T.tsum(T.mul(T.transpose(T.reshape(a, (2, 6)), (1, 0)),
                                                   Tensor(np.arange(12.0).reshape(6, 2)))), dict(a=a)),
        "flip": (lambda: T.tsum(T.mul(T.flip(a, axis=-1), c)), dict(a=a, c=c)),
        "broadcast_to": (lambda: T.tsum(T.tanh(T.broadcast_to(T.reshape(c, (1, 4)), (3, 4)))), dict(c=c)),
        "mean": (lambda: T.tsum(T.tanh(T.mean(a, axis=1))), dict(a=a)),
        "matmul": (lambda: T.tsum(T.tanh(T.matmul(x2, w))), dict(x=x2, w=w)),
        "linear": (lambda: T.tsum(T.tanh(T.linear(x2, w, b))), dict(x=x2, w=w, b=b)),
        "conv1d": (lambda: T.tsum(T.tanh(T.conv1d(seq, k1, kb1))), dict(x=seq, k=k1, b=kb1)),
        "conv2d": (lambda: T.tsum(T.tanh(T.conv2d(img, k2, kb2))), dict(x=img, k=k2, b=kb2)),
        "layernorm": (lambda: T.tsum(T.tanh(T.layernorm(x2, g, be))), dict(x=x2, g=g, b=be)),
        "cross_entropy": (lambda: T.softmax_cross_entropy(logits, labels), dict(l=logits)),
    }


def test_gradient_correctness():
    with criterion("gradient correctness", 30) as info:
        rng = np.random.default_rng(0)
        worst_op = 0.0
        for name, (fn, params) in _op_cases(rng).items():
            err = max(check_gradients(fn, params).values())
            assert err <= 1e-6, f"{name}: rel err {err:.2e} > 1e-6"
            worst_op = max(worst_op, err)
        worst_model = 0.0
        for mode in ("spectral", "literal"):
            cfg = ModelConfig(BlockConfig(3, 8, 4, 4, sequence_mode=mode), 3, seed=1)
            params = init_model(cfg, np.float64)
            x = Tensor(rng.standard_normal((2, 3, 3, 8)))
            y = rng.integers(0, 3, size=2)
            errs = check_gradients(lambda: T.softmax_cross_entropy(model_forward(x, params, cfg), y),
                                   params.named())
            worst = max(errs.values())
            assert worst <= 1e-4, f"full model ({mode}): rel err {worst:.2e} > 1e-4"
            worst_model = max(worst_model, worst)
        info["detail"] = f"ops max {worst_op:.1e} <= 1e-6, model max {worst_model:.1e} <= 1e-4"


# ------------------------------------------------------------ shape contract

def test_shape_contract():
    with criterion("shape contract and additivity", 10) as info:
        rng = np.random.default_rng(1)
        n_cfg = 0
        for mode in ("spectral", "literal"):
            for _ in range(12):
                p = int(rng.choice([1, 3, 5, 7]))
                ch, e, o, n = (int(v) for v in (rng.integers(3, 17), rng.integers(1, 9),
                                                rng.integers(1, 6), rng.integers(1, 5)))
                rev = str(rng.choice(["flip", "learned"]))
                cfg = BlockConfig(p, ch, e, o, sequence_mode=mode, reverse_mode=rev)
                params = init_params(cfg, int(rng.integers(1 << 30)))
                out = block_forward(Tensor(rng.standard_normal((n, p, p, ch))), params, cfg)
                L = ch if mode == "spectral" else 1
                d = out.diagnostics
                for key in ("x_proj", "z_proj_reversed", "x_forward", "x_backward", "h_forward", "h_backward"):
                    assert d[key].shape == (n, e, L), f"{key} {d[key].shape} != {(n, e, L)} for {cfg}"
                for key in ("reduced_fwd", "reduced_bwd"):
                    assert d[key].shape == (n, e), f"{key} for {cfg}"
                for y in (out.y_fwd, out.y_bwd, out.y_combined):
                    assert y.shape == (n, o)
                assert np.array_equal(out.y_combined.data, out.y_fwd.data + out.y_bwd.data), cfg
                n_cfg += 1
        info["detail"] = f"{n_cfg} configs, both sequence modes, additivity bit-exact"


# ------------------------------------------------------------------ symmetry

def _tie(params, cfg, rng):
    params.w_z.data = params.w_x.data.copy()
    params.b_z.data = params.b_x.data.copy()
    params.k_bwd.data = params.k_fwd.data.copy()
    params.kb_bwd.data = params.kb_fwd.data.copy()
    params.B.data = params.A.data.copy()
    params.w_bwd.data = params.w_fwd.data.copy()
    params.b_bwd.data = params.b_fwd.data.copy()
    # random norm affine that is itself symmetric under band reversal
    shape = (cfg.spatial_dim ** 2, cfg.num_bands)
    for t in (params.norm_gamma, params.norm_beta):
        r = rng.standard_normal(shape)
        t.data = (0.5 * (r + r[:, ::-1])).reshape(-1)
    return params


def test_bidirectional_symmetry():
    with criterion("bidirectional symmetry", 10) as info:
        rng = np.random.default_rng(2)
        worst = 0.0
        for trial in range(100):
            p, ch, e = int(rng.choice([1, 3, 5])), int(rng.integers(3, 13)), int(rng.integers(1, 7))
            cfg = BlockConfig(p, ch, e, int(rng.integers(1, 5)), delta_init=float(rng.uniform(0.05, 1.0)))
            params = _tie(init_params(cfg, trial), cfg, rng)
            params.A.data = params.B.data = rng.standard_normal((e, e))
            x = rng.standard_normal((3, p, p, ch))
            y = block_forward(Tensor(x), params, cfg).y_combined.data
            y_rev = block_forward(Tensor(x[..., ::-1].copy()), params, cfg).y_combined.data
            worst = max(worst, float(np.abs(y - y_rev).max()))
            assert worst <= 1e-10, f"trial {trial}: |diff| {worst:.2e} > 1e-10"
        info["detail"] = f"100 trials, max |diff| {worst:.1e} <= 1e-10"


# ------------------------------------------------------------- learnability

SCENE = dict(height=64, width=64, bands=20, classes=4, sigma=0.05)
PER_CLASS, HIDDEN, PATCH = 40, 16, 5


@pytest.fixture(scope="module")
def scene():
    cube = gen_synthetic(SCENE["height"], SCENE["width"], SCENE["bands"], SCENE["classes"], SCENE["sigma"], 0)
    return cube, build_split(cube, PER_CLASS, 0)


def _cfg(cube, ablation=(True, True, True)):
    return ModelConfig(BlockConfig(PATCH, cube.shape[2], HIDDEN, HIDDEN), cube.num_classes, *ablation, seed=0)


_runs: dict = {}


def _run(scene, name):
    if name not in _runs:
        cube, manifest = scene
        _runs[name] = train(_cfg(cube, ABLATIONS[name]), cube, manifest, TrainConfig(epochs=50, seed=0))[1]
    return _runs[name]


def test_learnability(scene):
    with criterion("learnability on synthetic cube", 300) as info:
        cube, manifest = scene
        _, first = train(_cfg(cube), cube, manifest, TrainConfig(epochs=50, seed=0))
        _runs["FullHSIMamba1"] = first
        _, second = train(_cfg(cube), cube, manifest, TrainConfig(epochs=50, seed=0))
        assert first.train_oa >= 0.99, f"train OA {first.train_oa:.4f} < 0.99"
        assert first.oa >= 0.95, f"test OA {first.oa:.4f} < 0.95"
        assert (first.confusion, first.epoch_loss) == (second.confusion, second.epoch_loss), \
            "two runs with the same seed differ"
        info["detail"] = f"train OA {first.train_oa:.4f} >= 0.99, test OA {first.oa:.4f} >= 0.95, repeatable"


def test_ablation_ordering(scene):
    with criterion("ablation ordering", 300) as info:
        oa = {name: _run(scene, name).oa for name in ABLATIONS}
        full = oa["FullHSIMamba1"]
        for name in ("FullHSIMamba2", "FullHSIMamba3", "FullHSIMamba4"):
            assert full >= oa[name] - 0.02, f"full {full:.4f} < {name} {oa[name]:.4f} - 0.02"
        weakest = min(oa.values())
        assert oa["FullHSIMamba5"] <= weakest + 0.02, f"spatial-only {oa['FullHSIMamba5']:.4f} not weakest"
        info["detail"] = "test OA " + ", ".join(f"{k[-1]}={v:.4f}" for k, v in oa.items())


# ------------------------------------------------------------------ metrics

def _direct(cm):
    k = len(cm)
    n = sum(cm[i][j] for i in range(k) for j in range(k))
    oa = sum(cm[i][i] for i in range(k)) / n
    rec = [cm[i][i] / sum(cm[i]) for i in range(k) if sum(cm[i]) > 0]
    aa = sum(rec) / len(rec)
    pe = sum(sum(cm[i]) * sum(cm[j][i] for j in range(k)) for i in range(k)) / (n * n)
    kappa = 1.0 if pe == 1.0 else (oa - pe) / (1 - pe)
    return oa, aa, kappa


def test_metric_oracle():
    with criterion("metric oracle", 30) as info:
        rng = np.random.default_rng(3)
        worst = 0.0
        for _ in range(1000):
            k = int(rng.integers(2, 9))
            cm = rng.integers(0, 50, size=(k, k))
            if rng.random() < 0.3:
                cm += np.diag(rng.integers(0, 500, size=k))
            if cm.sum() == 0:
                cm[0, 0] = 1
            got, want = metrics(cm), _direct(cm.tolist())
            worst = max(worst, max(abs(g - w) for g, w in zip(got, want)))
            assert worst <= 1e-12, f"deviation {worst:.2e} on {cm.tolist()}"
            assert got[2] <= got[0] + 1e-15, f"kappa {got[2]} > OA {got[0]}"
        for k in range(2, 9):
            assert metrics(np.diag(rng.integers(1, 100, size=k))) == (1.0, 1.0, 1.0)
        info["detail"] = f"1000 matrices, max deviation {worst:.1e}, kappa <= OA, diagonal -> (1, 1, 1)"


# --------------------------------------------------------------- complexity

def _analytic_params(cfg):
    b = cfg.block
    p2, c, e, o, k = b.spatial_dim ** 2, b.num_bands, b.hidden_dim, b.output_dim, cfg.num_classes
    s = (e + 1) // 2
    return (2 * p2 * c + 2 * (b.proj_in * e + e) + 2 * (3 * e * e + e) + 2 * e * e + e + 2 * (e * o + o)
            + 9 * s + s + s * o + o + o * k + k + (e * e + e if b.reverse_mode == "learned" else 0))


def test_complexity():
    with criterion("complexity scaling", 30) as info:
        cfg = ModelConfig(BlockConfig(5, 20, 8, 8), 4)
        for batch in (1, 4, 16):
            assert count_actual(cfg, 2 * batch).flops == 2 * count_actual(cfg, batch).flops
        ch = np.array([16, 32, 64])
        f = np.array([count_actual(replace(cfg, block=replace(cfg.block, num_bands=int(c)))).flops
                      for c in ch], dtype=float)
        fit = np.polyval(np.polyfit(ch, f, 1), ch)
        r2 = 1 - np.sum((f - fit) ** 2) / np.sum((f - f.mean()) ** 2)
        assert r2 >= 0.999, f"R^2 {r2:.6f} < 0.999"
        for kw in ({}, {"sequence_mode": "literal"}, {"reverse_mode": "learned"}):
            c = ModelConfig(BlockConfig(5, 12, 6, 4, **kw), 3)
            got, want = count_actual(c).params, _analytic_params(c)
            assert got == want, f"{kw}: {got} params, analytic {want}"
        info["detail"] = f"batch doubling x2 exact, bands R^2 {r2:.6f}, param count exact"


# ------------------------------------------------------------------- tables

def test_table_outputs(tmp_path):
    with criterion("table-shaped outputs", 120) as info:
        cube = tmp_path / "c.hsic"
        assert main(["synth", "--out", str(cube), "--height", "16", "--width", "16", "--bands", "6",
                     "--classes", "3"]) == 0
        fast = ["--hidden", "4", "--epochs", "1", "--train-per-class", "5", "--no-augment"]
        wide, long, abl = tmp_path / "w.csv", tmp_path / "l.csv", tmp_path / "a.csv"
        assert main(["bench", "--cube", str(cube), *fast, "--wide", "--out-csv", str(wide)]) == 0
        header = wide.read_text().splitlines()[0].split(",")
        assert header[1:] == [str(p) for p in PATCH_SWEEP], header
        validate_bench_rows(read_wide(wide.read_text()))
        assert main(["bench", "--cube", str(cube), *fast, "--out-csv", str(long)]) == 0
        validate_bench_rows(read_rows(long.read_text()))
        assert main(["sweep-ablation", "--cube", str(cube), "--patch", "3", *fast, "--out-csv", str(abl)]) == 0
        rows = read_rows(abl.read_text(encoding="utf-8"))
        validate_ablation_rows(rows)
        info["detail"] = f"bench {len(header) - 1} patch columns, ablation {len(rows)} rows, schemas valid"


# -------------------------------------------------------------- determinism

def test_determinism_and_persistence(tmp_path):
    with criterion("determinism and persistence", 60) as info:
        cube = gen_synthetic(24, 24, 8, 3, 0.05, 4)
        manifest = build_split(cube, 10, 4)
        cfg = ModelConfig(BlockConfig(3, 8, 6, 6), 3, seed=4)
        tcfg = TrainConfig(epochs=3, dtype="float64", seed=4)
        params, a = train(cfg, cube, manifest, tcfg)
        _, b = train(cfg, cube, manifest, tcfg)
        for key in ("oa", "aa", "kappa", "epoch_loss", "confusion", "initial_loss"):
            assert getattr(a, key) == getattr(b, key), f"{key} differs between identical runs"
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, params, cfg, {"note": "x"})
        loaded, cfg2, extra = load_checkpoint(path)
        assert cfg2 == cfg and extra == {"note": "x"}
        for name, t in params.named().items():
            u = loaded.named()[name]
            assert t.data.dtype == u.data.dtype and np.array_equal(t.data, u.data), name
        x = Tensor(np.random.default_rng(5).standard_normal((7, 3, 3, 8)))
        assert np.array_equal(model_forward(x, params, cfg).data, model_forward(x, loaded, cfg2).data)
        info["detail"] = "64-bit metrics identical, checkpoint bit-exact, logits identical"
