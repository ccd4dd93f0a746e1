"""Bidirectional spectral block.

Pipeline for a batch of patches ``x`` of shape [N, p, p, CH]::

    flatten -> layernorm -> two projections (x path, z path)
    z path reversed along the band sequence
    per-direction dense conv1d (k=3, pad 1)
    SiLU of the conv output      (diagnostic only)
    tanh(conv output + A @ delta)  /  tanh(conv output + B @ delta)
    mean over the sequence -> per-direction linear -> sum

``sequence_mode="spectral"`` projects each band's p*p spatial vector to the
hidden width, giving a sequence of length CH. ``"literal"`` projects the whole
flattened patch at once and reshapes to a length-1 sequence.

``reverse_mode="flip"`` reverses the z path along the sequence axis;
``"learned"`` applies an extra hidden-to-hidden linear map instead.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import tensor as T
from .tensor import Tensor

SEQUENCE_MODES = ("spectral", "literal")
REVERSE_MODES = ("flip", "learned")
LN_EPS = 1e-5


@dataclass(frozen=True)
class BlockConfig:
    spatial_dim: int
    num_bands: int
    hidden_dim: int
    output_dim: int
    delta_init: float = 0.1
    sequence_mode: str = "spectral"
    reverse_mode: str = "flip"

    def __post_init__(self):
        if self.spatial_dim < 1 or self.spatial_dim % 2 == 0:
            raise ValueError(f"spatial_dim must be a positive odd int, got {self.spatial_dim}")
        if self.num_bands < 3:
            raise ValueError(f"num_bands must be >= 3, got {self.num_bands}")
        if self.hidden_dim < 1 or self.output_dim < 1:
            raise ValueError("hidden_dim and output_dim must be positive")
        if not self.delta_init > 0:
            raise ValueError("delta_init must be > 0")
        if self.sequence_mode not in SEQUENCE_MODES:
            raise ValueError(f"sequence_mode must be one of {SEQUENCE_MODES}")
        if self.reverse_mode not in REVERSE_MODES:
            raise ValueError(f"reverse_mode must be one of {REVERSE_MODES}")

    @property
    def seq_len(self) -> int:
        return self.num_bands if self.sequence_mode == "spectral" else 1

    @property
    def proj_in(self) -> int:
        p2 = self.spatial_dim ** 2
        return p2 if self.sequence_mode == "spectral" else p2 * self.num_bands

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class BlockParams:
    norm_gamma: Tensor
    norm_beta: Tensor
    w_x: Tensor
    b_x: Tensor
    w_z: Tensor
    b_z: Tensor
    k_fwd: Tensor
    kb_fwd: Tensor
    k_bwd: Tensor
    kb_bwd: Tensor
    A: Tensor
    B: Tensor
    delta: Tensor
    w_fwd: Tensor
    b_fwd: Tensor
    w_bwd: Tensor
    b_bwd: Tensor
    w_z_rev: Tensor | None = None
    b_z_rev: Tensor | None = None

    def named(self) -> dict[str, Tensor]:
        return {f.name: getattr(self, f.name) for f in fields(self)
                if getattr(self, f.name) is not None}

    @classmethod
    def from_named(cls, arrays: dict[str, Tensor]) -> BlockParams:
        return cls(**arrays)


@dataclass
class BlockOutput:
    y_combined: Tensor
    y_fwd: Tensor | None
    y_bwd: Tensor | None
    diagnostics: dict = field(default_factory=dict)


def _uniform(rng, fan_in, shape, dtype):
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape).astype(dtype), requires_grad=True)


def init_params(cfg: BlockConfig, seed=0, dtype=np.float64) -> BlockParams:
    """Fan-in uniform weights, A and B at scale 0.01, delta filled with ``delta_init``."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    e, o = cfg.hidden_dim, cfg.output_dim
    feat = cfg.spatial_dim ** 2 * cfg.num_bands
    ones = lambda n: Tensor(np.ones(n, dtype=dtype), requires_grad=True)  # noqa: E731
    zeros = lambda n: Tensor(np.zeros(n, dtype=dtype), requires_grad=True)  # noqa: E731
    small = lambda: Tensor((0.01 * rng.standard_normal((e, e))).astype(dtype), requires_grad=True)  # noqa: E731

    p = BlockParams(
        norm_gamma=ones(feat),
        norm_beta=zeros(feat),
        w_x=_uniform(rng, cfg.proj_in, (cfg.proj_in, e), dtype),
        b_x=_uniform(rng, cfg.proj_in, (e,), dtype),
        w_z=_uniform(rng, cfg.proj_in, (cfg.proj_in, e), dtype),
        b_z=_uniform(rng, cfg.proj_in, (e,), dtype),
        k_fwd=_uniform(rng, 3 * e, (e, e, 3), dtype),
        kb_fwd=_uniform(rng, 3 * e, (e,), dtype),
        k_bwd=_uniform(rng, 3 * e, (e, e, 3), dtype),
        kb_bwd=_uniform(rng, 3 * e, (e,), dtype),
        A=small(),
        B=small(),
        delta=Tensor(np.full(e, cfg.delta_init, dtype=dtype), requires_grad=True),
        w_fwd=_uniform(rng, e, (e, o), dtype),
        b_fwd=_uniform(rng, e, (o,), dtype),
        w_bwd=_uniform(rng, e, (e, o), dtype),
        b_bwd=_uniform(rng, e, (o,), dtype),
    )
    if cfg.reverse_mode == "learned":
        p.w_z_rev = _uniform(rng, e, (e, e), dtype)
        p.b_z_rev = _uniform(rng, e, (e,), dtype)
    return p


def _check_input(x: Tensor, cfg: BlockConfig) -> None:
    want = (cfg.spatial_dim, cfg.spatial_dim, cfg.num_bands)
    if x.ndim != 4 or x.shape[1:] != want:
        raise ValueError(f"expected input [N, {want[0]}, {want[1]}, {want[2]}], got {x.shape}")


def normalize_input(x: Tensor, params: BlockParams, cfg: BlockConfig) -> Tensor:
    _check_input(x, cfg)
    flat = T.reshape(x, (x.shape[0], -1))
    return T.layernorm(flat, params.norm_gamma, params.norm_beta, LN_EPS)


def _project(xn: Tensor, w: Tensor, b: Tensor, cfg: BlockConfig) -> Tensor:
    """[N, p*p*CH] -> [N, E, L]."""
    n = xn.shape[0]
    if cfg.sequence_mode == "literal":
        return T.reshape(T.linear(xn, w, b), (n, cfg.hidden_dim, 1))
    p2, ch = cfg.spatial_dim ** 2, cfg.num_bands
    per_band = T.reshape(T.transpose(T.reshape(xn, (n, p2, ch)), (0, 2, 1)), (n * ch, p2))
    proj = T.reshape(T.linear(per_band, w, b), (n, ch, cfg.hidden_dim))
    return T.transpose(proj, (0, 2, 1))


def _learned_reverse(z: Tensor, params: BlockParams) -> Tensor:
    n, e, length = z.shape
    rows = T.reshape(T.transpose(z, (0, 2, 1)), (n * length, e))
    out = T.linear(rows, params.w_z_rev, params.b_z_rev)
    return T.transpose(T.reshape(out, (n, length, e)), (0, 2, 1))


def project_inputs(x: Tensor, params: BlockParams, cfg: BlockConfig) -> tuple[Tensor, Tensor]:
    """Normalize, project to the hidden width, and reverse the z path.

    Returns ``(x_proj, z_proj_reversed)``, both [N, E, L].
    """
    xn = normalize_input(x, params, cfg)
    x_proj = _project(xn, params.w_x, params.b_x, cfg)
    z_proj = _project(xn, params.w_z, params.b_z, cfg)
    if cfg.reverse_mode == "flip":
        z_rev = T.flip(z_proj, axis=-1)
    else:
        z_rev = _learned_reverse(z_proj, params)
    return x_proj, z_rev


@dataclass
class DirectionalStates:
    pre_fwd: Tensor | None      # conv_fwd(x_proj)
    pre_bwd: Tensor | None      # conv_bwd(z_proj_reversed)
    x_forward: Tensor | None    # SiLU(pre_fwd)
    x_backward: Tensor | None   # SiLU(pre_bwd)


def directional_states(x_proj: Tensor, z_proj_reversed: Tensor, params: BlockParams,
                       directions=(True, True)) -> DirectionalStates:
    pre_f = pre_b = xf = xb = None
    if directions[0]:
        pre_f = T.conv1d(x_proj, params.k_fwd, params.kb_fwd)
        xf = T.silu(pre_f)
    if directions[1]:
        pre_b = T.conv1d(z_proj_reversed, params.k_bwd, params.kb_bwd)
        xb = T.silu(pre_b)
    return DirectionalStates(pre_f, pre_b, xf, xb)


def transition_bias(mat: Tensor, delta: Tensor, n: int) -> Tensor:
    """``mat @ delta`` for every sample: delta is expanded to [N, E] first.

    Returned as [N, E, 1] so it broadcasts along the sequence.
    """
    e = delta.shape[0]
    expanded = T.broadcast_to(T.reshape(delta, (1, e)), (n, e))
    return T.reshape(T.matmul(expanded, T.transpose(mat, (1, 0))), (n, e, 1))


def state_update(states: DirectionalStates, params: BlockParams) -> tuple[Tensor | None, Tensor | None]:
    """tanh of the raw conv outputs plus the A/B transition biases."""
    h_f = h_b = None
    if states.pre_fwd is not None:
        n = states.pre_fwd.shape[0]
        h_f = T.tanh(T.add(states.pre_fwd, transition_bias(params.A, params.delta, n)))
    if states.pre_bwd is not None:
        n = states.pre_bwd.shape[0]
        h_b = T.tanh(T.add(states.pre_bwd, transition_bias(params.B, params.delta, n)))
    return h_f, h_b


def reduce_and_project(h_forward: Tensor | None, h_backward: Tensor | None,
                       params: BlockParams) -> BlockOutput:
    y_f = y_b = None
    diag = {}
    if h_forward is not None:
        diag["reduced_fwd"] = T.mean(h_forward, axis=2)
        y_f = T.linear(diag["reduced_fwd"], params.w_fwd, params.b_fwd)
    if h_backward is not None:
        diag["reduced_bwd"] = T.mean(h_backward, axis=2)
        y_b = T.linear(diag["reduced_bwd"], params.w_bwd, params.b_bwd)
    if y_f is None and y_b is None:
        raise ValueError("at least one direction must be enabled")
    if y_f is None:
        y = y_b
    elif y_b is None:
        y = y_f
    else:
        y = T.add(y_f, y_b)
    return BlockOutput(y, y_f, y_b, diag)


def block_forward(x: Tensor, params: BlockParams, cfg: BlockConfig,
                  directions=(True, True)) -> BlockOutput:
    """Full block. ``directions`` toggles the forward / backward paths."""
    x_proj, z_rev = project_inputs(x, params, cfg)
    states = directional_states(x_proj, z_rev, params, directions)
    h_f, h_b = state_update(states, params)
    out = reduce_and_project(h_f, h_b, params)
    out.diagnostics.update(
        x_proj=x_proj, z_proj_reversed=z_rev,
        x_forward=states.x_forward, x_backward=states.x_backward,
        h_forward=h_f, h_backward=h_b,
    )
    return out
