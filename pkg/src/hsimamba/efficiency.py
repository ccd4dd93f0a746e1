"""Parameter / FLOP accounting and timing probes.

FLOP here means one multiply-add, counted only for matmul-like work (linear,
matmul, conv1d, conv2d). ``estimate`` gives leading-term counts (all constants
1) for the asymptotic classes of transformer, CNN and HSIMamba layers;
``count_actual`` runs one instrumented forward pass.
"""
from __future__ import annotations

import statistics
import time
import tracemalloc
from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as T
from .checkpoint import read_archive
from .model import ModelConfig, ModelParams, init_model, model_forward
from .tensor import Tensor

ASYMPTOTIC = {
    "transformer": ("O(C² + CHW)", "O(BHW · C²)"),
    "cnn": ("O(k² · C²)", "O(BHW · k² · C)"),
    "hsimamba": ("O(C + HW)", "O(BHW · C)"),
}


@dataclass(frozen=True)
class ComplexityProfile:
    params: int
    flops: int
    params_class: str
    flops_class: str

    def to_dict(self) -> dict:
        return asdict(self)


def estimate(model_kind: str, B: int, H: int, W: int, C: int, k: int = 3, D: int = 1) -> ComplexityProfile:
    """Leading-term counts. ``k`` is the CNN kernel side, ``D`` the HSIMamba hidden width."""
    if model_kind not in ASYMPTOTIC:
        raise ValueError(f"model_kind must be one of {sorted(ASYMPTOTIC)}")
    if min(B, H, W, C, k, D) < 1:
        raise ValueError("all dimensions must be positive")
    if model_kind == "transformer":
        params, flops = C * C + C * H * W, B * H * W * C * C
    elif model_kind == "cnn":
        params, flops = k * k * C * C, B * H * W * k * k * C
    else:
        params, flops = C + H * W, B * H * W * C * D
    return ComplexityProfile(params, flops, *ASYMPTOTIC[model_kind])


def param_count_from_checkpoint(path) -> int:
    arrays, _ = read_archive(path)
    return int(sum(a.size for a in arrays.values()))


def count_actual(cfg: ModelConfig, batch: int = 1, params: ModelParams | None = None) -> ComplexityProfile:
    """Exact parameter count and counted multiply-adds of one forward pass."""
    params = params if params is not None else init_model(cfg)
    b = cfg.block
    x = Tensor(np.random.default_rng(0).standard_normal((batch, b.spatial_dim, b.spatial_dim, b.num_bands)))
    with T.count_flops() as counter:
        model_forward(x, params, cfg)
    return ComplexityProfile(params.count(), counter.total, *ASYMPTOTIC["hsimamba"])


def time_inference(params: ModelParams, cfg: ModelConfig, x: np.ndarray,
                   warmup: int = 3, repeats: int = 5, batch_size: int = 256) -> float:
    """Median wall-clock seconds to run the model over all of ``x``."""
    dtype = params.w_c.dtype

    def run():
        for lo in range(0, len(x), batch_size):
            model_forward(Tensor(np.asarray(x[lo:lo + batch_size], dtype=dtype)), params, cfg)

    for _ in range(warmup):
        run()
    samples = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        run()
        samples.append(time.perf_counter() - t0)
    return statistics.median(samples)


def train_step_memory_mb(params: ModelParams, cfg: ModelConfig, x: np.ndarray, y: np.ndarray) -> float:
    """Peak traced allocation (MB) of one forward + backward pass on a batch."""
    dtype = params.w_c.dtype
    tracemalloc.start()
    try:
        tracemalloc.reset_peak()
        loss = T.softmax_cross_entropy(model_forward(Tensor(np.asarray(x, dtype=dtype)), params, cfg), y)
        T.backward(loss)
        _, peak = tracemalloc.get_traced_memory()
    finally:
        tracemalloc.stop()
    for p in params.named().values():
        p.grad = None
    return peak / 2 ** 20


@dataclass
class BenchResult:
    test_seconds: float
    memory_mb: float
    flops_per_sample: int


def bench(cfg: ModelConfig, n_samples: int, params: ModelParams | None = None,
          batch_size: int = 32, seed: int = 0) -> BenchResult:
    """Inference time over ``n_samples`` random patches plus a training-step memory probe."""
    params = params if params is not None else init_model(cfg)
    b = cfg.block
    rng = np.random.default_rng(seed)
    x = rng.random((n_samples, b.spatial_dim, b.spatial_dim, b.num_bands))
    y = rng.integers(0, cfg.num_classes, size=min(batch_size, n_samples))
    secs = time_inference(params, cfg, x)
    mem = train_step_memory_mb(params, cfg, x[:len(y)], y)
    return BenchResult(secs, mem, count_actual(cfg, 1, params).flops)
