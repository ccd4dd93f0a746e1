"""Spatial branch: band mean -> 3x3 conv -> SiLU -> global average pool -> linear.

It sees only the band-averaged image, so it is blind to band order, and its
output is fused with the spectral block output by addition.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np

from . import tensor as T
from .tensor import Tensor


def spatial_channels(hidden_dim: int) -> int:
    return math.ceil(hidden_dim / 2)


@dataclass
class SpatialParams:
    kernel: Tensor   # [S, 1, 3, 3]
    bias: Tensor     # [S]
    w_sp: Tensor     # [S, output_dim]
    b_sp: Tensor     # [output_dim]

    def named(self) -> dict[str, Tensor]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_named(cls, arrays: dict[str, Tensor]) -> SpatialParams:
        return cls(**arrays)


def init_spatial(hidden_dim: int, output_dim: int, seed=0, dtype=np.float64) -> SpatialParams:
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    s = spatial_channels(hidden_dim)

    def u(fan_in, shape):
        b = 1.0 / np.sqrt(fan_in)
        return Tensor(rng.uniform(-b, b, size=shape).astype(dtype), requires_grad=True)

    return SpatialParams(kernel=u(9, (s, 1, 3, 3)), bias=u(9, (s,)),
                         w_sp=u(s, (s, output_dim)), b_sp=u(s, (output_dim,)))


def spatial_forward(x: Tensor, params: SpatialParams) -> Tensor:
    """[N, p, p, CH] -> [N, output_dim]."""
    if x.ndim != 4 or x.shape[1] != x.shape[2] or x.shape[1] < 1:
        raise ValueError(f"expected square patches [N, p, p, CH] with p >= 1, got {x.shape}")
    n, p = x.shape[0], x.shape[1]
    img = T.reshape(T.mean(x, axis=3), (n, 1, p, p))
    feat = T.silu(T.conv2d(img, params.kernel, params.bias))
    s = feat.shape[1]
    pooled = T.mean(T.reshape(feat, (n, s, p * p)), axis=2)
    return T.linear(pooled, params.w_sp, params.b_sp)


def fuse(y_spectral: Tensor, y_spatial: Tensor) -> Tensor:
    if y_spectral.shape != y_spatial.shape:
        raise ValueError(f"cannot fuse {y_spectral.shape} with {y_spatial.shape}")
    return T.add(y_spectral, y_spatial)
