"""Adam training loop, evaluation and OA / AA / kappa metrics."""
from __future__ import annotations

import csv
import io
import json
import logging
import resource
import sys
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .data import AUGMENT_OPS, HsiCube, SplitManifest, augment_array, extract_patches, normalize_values, padded
from .model import ModelConfig, ModelParams, init_model, model_forward, predict_logits
from .tensor import NonFiniteError, Tensor

log = logging.getLogger(__name__)

DTYPES = {"float32": np.float32, "float64": np.float64}


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss."""


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 5e-4
    batch_size: int = 32
    epochs: int = 50
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    augment: bool = True
    dtype: str = "float32"
    normalization: str = "minmax"

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("lr must be > 0")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")
        if self.dtype not in DTYPES:
            raise ValueError(f"dtype must be one of {sorted(DTYPES)}")

    def to_dict(self) -> dict:
        return asdict(self)


# ------------------------------------------------------------------- metrics

def confusion_matrix(y_true, y_pred, k: int) -> np.ndarray:
    """Rows are true classes, columns predictions."""
    cm = np.zeros((k, k), dtype=np.int64)
    np.add.at(cm, (np.asarray(y_true), np.asarray(y_pred)), 1)
    return cm


def metrics(cm) -> tuple[float, float, float]:
    """(OA, AA, kappa). AA averages recall over classes that have true samples."""
    cm = np.asarray(cm, dtype=np.float64)
    total = cm.sum()
    if total <= 0:
        raise ValueError("confusion matrix is empty")
    rows, cols = cm.sum(axis=1), cm.sum(axis=0)
    oa = np.trace(cm) / total
    present = rows > 0
    aa = float(np.mean(np.diag(cm)[present] / rows[present]))
    pe = float((rows * cols).sum() / (total * total))
    kappa = 1.0 if pe == 1.0 else (oa - pe) / (1.0 - pe)
    return float(oa), aa, float(kappa)


# ---------------------------------------------------------------------- adam

@dataclass
class AdamState:
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict[str, Tensor], state: AdamState, cfg: TrainConfig) -> None:
    """Bias-corrected Adam; parameters without a grad are left alone."""
    state.t += 1
    b1, b2 = cfg.beta1, cfg.beta2
    c1, c2 = 1.0 - b1 ** state.t, 1.0 - b2 ** state.t
    for name, p in params.items():
        g = p.grad
        if g is None:
            continue
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        step = cfg.lr * (m / c1) / (np.sqrt(v / c2) + cfg.eps)
        p.data = (p.data - step).astype(p.data.dtype, copy=False)


# -------------------------------------------------------------------- report

@dataclass
class RunReport:
    epoch_loss: list[float]
    confusion: list[list[int]]
    oa: float
    aa: float
    kappa: float
    train_seconds: float
    test_seconds: float
    peak_memory_mb: float
    config: dict
    train_confusion: list[list[int]] | None = None
    initial_loss: float | None = None

    @property
    def train_oa(self) -> float | None:
        return None if self.train_confusion is None else metrics(self.train_confusion)[0]

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    @classmethod
    def from_json(cls, text: str) -> RunReport:
        return cls(**json.loads(text))

    def confusion_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        k = len(self.confusion)
        w.writerow(["true\\pred"] + [str(i) for i in range(k)])
        for i, row in enumerate(self.confusion):
            w.writerow([str(i)] + [str(v) for v in row])
        return buf.getvalue()


def peak_rss_mb() -> float:
    kb = resource.getrusage(resource.RUSAGE_SELF).ru_maxrss
    # macOS reports bytes, Linux kilobytes
    return kb / (1024 * 1024) if sys.platform == "darwin" else kb / 1024


# ---------------------------------------------------------------- train/eval

def prepare(cube: HsiCube, manifest: SplitManifest, p: int, which: str,
            normalization: str = "minmax", values=None) -> tuple[np.ndarray, np.ndarray]:
    """Patches [n, p, p, CH] and 0-based labels for one side of the split."""
    vals = normalize_values(cube.values, normalization) if values is None else values
    coords, labels = manifest.coords(which)
    return extract_patches(vals, coords, p, padded(vals, p)), labels


def augment_set(x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Identity plus the five augmentations, so 6x the samples."""
    xs = [x] + [augment_array(x, op) for op in AUGMENT_OPS]
    return np.concatenate(xs), np.tile(y, len(xs))


def evaluate(params: ModelParams, cfg: ModelConfig, x: np.ndarray, y: np.ndarray,
             batch_size: int = 256) -> np.ndarray:
    """Confusion matrix over every sample of (x, y)."""
    dtype = params.w_c.dtype
    preds = np.empty(len(x), dtype=np.int64)
    for lo in range(0, len(x), batch_size):
        xb = Tensor(np.asarray(x[lo:lo + batch_size], dtype=dtype))
        preds[lo:lo + batch_size] = predict_logits(model_forward(xb, params, cfg))
    return confusion_matrix(y, preds, cfg.num_classes)


def fit(params: ModelParams, cfg: ModelConfig, x: np.ndarray, y: np.ndarray,
        tcfg: TrainConfig) -> tuple[list[float], float | None]:
    """Mini-batch Adam over (x, y). Returns per-epoch mean loss and the first batch loss."""
    named = params.named()
    dtype = DTYPES[tcfg.dtype]
    state = AdamState()
    rng = np.random.default_rng([tcfg.seed, 7])
    epoch_loss: list[float] = []
    first = None
    for epoch in range(tcfg.epochs):
        order = rng.permutation(len(x))
        total = 0.0
        for lo in range(0, len(x), tcfg.batch_size):
            idx = order[lo:lo + tcfg.batch_size]
            for p in named.values():
                p.grad = None
            try:
                loss = T.softmax_cross_entropy(
                    model_forward(Tensor(x[idx].astype(dtype, copy=False)), params, cfg), y[idx])
            except NonFiniteError as exc:
                raise DivergenceError(f"epoch {epoch + 1}: {exc}") from exc
            lv = float(loss.data)
            if first is None:
                first = lv
            T.backward(loss)
            adam_step(named, state, tcfg)
            total += lv * len(idx)
        epoch_loss.append(total / len(x))
        if not np.isfinite(epoch_loss[-1]):
            raise DivergenceError(f"epoch {epoch + 1}: non-finite loss")
        log.debug("epoch %d loss %.6f", epoch + 1, epoch_loss[-1])
    return epoch_loss, first


def train(cfg: ModelConfig, cube: HsiCube, manifest: SplitManifest,
          tcfg: TrainConfig) -> tuple[ModelParams, RunReport]:
    """Train from scratch on the manifest's train side, evaluate on its test side."""
    p = cfg.block.spatial_dim
    vals = normalize_values(cube.values, tcfg.normalization)
    x_tr, y_tr = prepare(cube, manifest, p, "train", values=vals)
    if len(x_tr) == 0:
        raise ValueError("training split is empty")
    x_te, y_te = prepare(cube, manifest, p, "test", values=vals)
    x_fit, y_fit = augment_set(x_tr, y_tr) if tcfg.augment else (x_tr, y_tr)

    params = init_model(cfg, DTYPES[tcfg.dtype])
    t0 = time.perf_counter()
    losses, first = fit(params, cfg, x_fit, y_fit, tcfg)
    train_s = time.perf_counter() - t0

    t0 = time.perf_counter()
    cm = evaluate(params, cfg, x_te, y_te) if len(x_te) else np.zeros((cfg.num_classes,) * 2, np.int64)
    test_s = time.perf_counter() - t0
    cm_tr = evaluate(params, cfg, x_tr, y_tr)
    oa, aa, kappa = metrics(cm) if cm.sum() else (float("nan"),) * 3
    report = RunReport(
        epoch_loss=losses, confusion=cm.tolist(), oa=oa, aa=aa, kappa=kappa,
        train_seconds=train_s, test_seconds=test_s, peak_memory_mb=peak_rss_mb(),
        config={"model": cfg.to_dict(), "train": tcfg.to_dict()},
        train_confusion=cm_tr.tolist(), initial_loss=first,
    )
    log.info("train OA %.4f  test OA %.4f  AA %.4f  kappa %.4f  (%.1fs)",
             report.train_oa, oa, aa, kappa, train_s)
    return params, report
