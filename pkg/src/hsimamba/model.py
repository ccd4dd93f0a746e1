"""End-to-end classifier: spectral block + spatial branch + linear head."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as T
from .block import BlockConfig, BlockParams, block_forward, init_params
from .checkpoint import read_archive, write_archive
from .spatial import SpatialParams, fuse, init_spatial, spatial_forward
from .tensor import Tensor

# (forward, backward, spatial) switches of the five ablation variants.
ABLATIONS = {
    "FullHSIMamba1": (True, True, True),
    "FullHSIMamba2": (True, True, False),
    "FullHSIMamba3": (True, False, True),
    "FullHSIMamba4": (False, True, True),
    "FullHSIMamba5": (False, False, True),
}


@dataclass(frozen=True)
class ModelConfig:
    block: BlockConfig
    num_classes: int
    forward_on: bool = True
    backward_on: bool = True
    spatial_on: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if not (self.forward_on or self.backward_on or self.spatial_on):
            raise ValueError("at least one of forward/backward/spatial must be enabled")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> ModelConfig:
        d = dict(d)
        d["block"] = BlockConfig(**d["block"])
        return cls(**d)


@dataclass
class ModelParams:
    block: BlockParams
    spatial: SpatialParams
    w_c: Tensor
    b_c: Tensor

    def named(self) -> dict[str, Tensor]:
        out = {f"block.{k}": v for k, v in self.block.named().items()}
        out.update({f"spatial.{k}": v for k, v in self.spatial.named().items()})
        out["classifier.w_c"] = self.w_c
        out["classifier.b_c"] = self.b_c
        return out

    @classmethod
    def from_named(cls, named: dict[str, Tensor]) -> ModelParams:
        groups: dict[str, dict] = {"block": {}, "spatial": {}, "classifier": {}}
        for key, t in named.items():
            prefix, name = key.split(".", 1)
            groups[prefix][name] = t
        return cls(BlockParams.from_named(groups["block"]),
                   SpatialParams.from_named(groups["spatial"]),
                   groups["classifier"]["w_c"], groups["classifier"]["b_c"])

    def count(self) -> int:
        return sum(t.data.size for t in self.named().values())


def init_model(cfg: ModelConfig, dtype=np.float64) -> ModelParams:
    s_block, s_spatial, s_head = np.random.SeedSequence(cfg.seed).spawn(3)
    bc = cfg.block
    block = init_params(bc, np.random.default_rng(s_block), dtype)
    spatial = init_spatial(bc.hidden_dim, bc.output_dim, np.random.default_rng(s_spatial), dtype)
    rng = np.random.default_rng(s_head)
    bound = 1.0 / np.sqrt(bc.output_dim)
    w_c = Tensor(rng.uniform(-bound, bound, (bc.output_dim, cfg.num_classes)).astype(dtype), requires_grad=True)
    b_c = Tensor(rng.uniform(-bound, bound, (cfg.num_classes,)).astype(dtype), requires_grad=True)
    return ModelParams(block, spatial, w_c, b_c)


def features(x: Tensor, params: ModelParams, cfg: ModelConfig) -> Tensor:
    """Fused [N, output_dim] representation fed to the classifier."""
    n = x.shape[0]
    if cfg.forward_on or cfg.backward_on:
        y_spec = block_forward(x, params.block, cfg.block, (cfg.forward_on, cfg.backward_on)).y_combined
    else:
        y_spec = T.zeros((n, cfg.block.output_dim), dtype=params.w_c.dtype)
    if cfg.spatial_on:
        y_sp = spatial_forward(x, params.spatial)
    else:
        y_sp = T.zeros(y_spec.shape, dtype=y_spec.dtype)
    return fuse(y_spec, y_sp)


def model_forward(x, params: ModelParams, cfg: ModelConfig) -> Tensor:
    """Logits [N, K] for patches [N, p, p, CH]."""
    if not isinstance(x, Tensor):
        x = Tensor(np.asarray(x, dtype=params.w_c.dtype))
    return T.linear(features(x, params, cfg), params.w_c, params.b_c)


def predict_logits(logits) -> np.ndarray:
    """Argmax per row; ties go to the lowest class index."""
    arr = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
    return np.argmax(arr, axis=1)


def predict(x, params: ModelParams, cfg: ModelConfig) -> np.ndarray:
    return predict_logits(model_forward(x, params, cfg))


def save_checkpoint(path, params: ModelParams, cfg: ModelConfig, extra: dict | None = None) -> None:
    arrays = {k: t.data for k, t in params.named().items()}
    write_archive(path, arrays, {"config": cfg.to_dict(), "seed": cfg.seed, "extra": extra or {}})


def load_checkpoint(path) -> tuple[ModelParams, ModelConfig, dict]:
    arrays, meta = read_archive(path)
    cfg = ModelConfig.from_dict(meta["config"])
    params = ModelParams.from_named({k: Tensor(v, requires_grad=True) for k, v in arrays.items()})
    return params, cfg, meta.get("extra", {})
