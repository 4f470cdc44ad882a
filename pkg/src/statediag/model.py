"""Three-branch attention reconstructor over windows and state matrices.

The model embeds three streams — the raw window rows, the temporal state
matrix rows, and the spatial state matrix rows — into a shared hidden
width, runs K stacked blocks of per-branch multi-head attention plus a
position-wise feed-forward (post-norm residuals in both places), and
reconstructs all three inputs through per-branch linear heads. Every
block's row-stochastic attention maps are returned so the losses and
the diagnosis stage can reuse them.

The temporal and spatial branches can be disabled individually for
ablations; the series branch is always present.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import ndgrad as ng
from .errors import ConfigError, ShapeError
from .ndgrad import Tensor2

__all__ = [
    "ModelConfig",
    "ModelState",
    "AssociationMaps",
    "ForwardOutput",
    "init_state",
    "parameter_count",
    "embed",
    "attention_block",
    "layer_forward",
    "forward",
]

_BRANCHES = ("series", "temporal", "spatial")


@dataclass
class ModelConfig:
    """Shape and architecture parameters.

    ``hidden`` is the width every stream is embedded to; it must be
    divisible by ``heads``. The window length ``window`` and sensor
    count ``sensors`` are baked into the temporal-branch and head
    parameters, so a trained state is tied to both.
    """

    window: int = 100
    sensors: int = 7
    hidden: int = 64
    heads: int = 4
    blocks: int = 2
    ff_mult: int = 2
    eps_ln: float = 1e-5
    dtype: str = "f32"  # "f32" or "f64"
    temporal_branch: bool = True
    spatial_branch: bool = True

    def __post_init__(self):
        if self.hidden % self.heads != 0:
            raise ConfigError(f"hidden={self.hidden} not divisible by heads={self.heads}")
        if self.blocks < 1:
            raise ConfigError("blocks must be >= 1")
        if self.window < 2 or self.sensors < 2:
            raise ConfigError("window and sensors must both be >= 2")
        if self.dtype not in ("f32", "f64"):
            raise ConfigError(f"dtype must be f32 or f64, got {self.dtype!r}")

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "f32" else np.float64

    def branches(self) -> tuple[str, ...]:
        out = ["series"]
        if self.temporal_branch:
            out.append("temporal")
        if self.spatial_branch:
            out.append("spatial")
        return tuple(out)

    def to_dict(self) -> dict:
        return {
            "window": self.window,
            "sensors": self.sensors,
            "hidden": self.hidden,
            "heads": self.heads,
            "blocks": self.blocks,
            "ff_mult": self.ff_mult,
            "eps_ln": self.eps_ln,
            "dtype": self.dtype,
            "temporal_branch": self.temporal_branch,
            "spatial_branch": self.spatial_branch,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


@dataclass
class AssociationMaps:
    """Per-block row-stochastic attention maps, one list entry per block.

    ``series`` and ``temporal`` maps are (w, w); ``spatial`` maps are
    (n, n). Disabled branches hold None. Entries are head-averaged, so
    rows still sum to one.
    """

    series: list[Tensor2]
    temporal: list[Tensor2] | None
    spatial: list[Tensor2] | None


@dataclass
class ForwardOutput:
    """Reconstructions plus the attention maps that produced them."""

    values_rec: Tensor2          # (w, n)
    temporal_rec: Tensor2 | None  # (w, w)
    spatial_rec: Tensor2 | None   # (n, n)
    maps: AssociationMaps


@dataclass
class ModelState:
    """All learnable parameters, keyed by a stable hierarchical name."""

    config: ModelConfig
    params: dict[str, Tensor2] = field(default_factory=dict)

    def param_list(self) -> list[Tensor2]:
        return [self.params[k] for k in sorted(self.params)]

    def values_snapshot(self) -> dict[str, np.ndarray]:
        return {k: np.array(v.value, copy=True) for k, v in self.params.items()}

    def load_values(self, snapshot: dict[str, np.ndarray]) -> None:
        for k, p in self.params.items():
            src = snapshot[k]
            if src.shape != p.value.shape:
                raise ShapeError(f"parameter {k}: shape {src.shape} != {p.value.shape}")
            p.value = np.ascontiguousarray(src.astype(p.value.dtype, copy=True))


def _branch_input_width(cfg: ModelConfig, branch: str) -> int:
    # rows of the series and spatial streams carry one value per sensor;
    # rows of the temporal state matrix carry one value per timestep
    return cfg.window if branch == "temporal" else cfg.sensors


def _head_output_width(cfg: ModelConfig, branch: str) -> int:
    return cfg.window if branch == "temporal" else cfg.sensors


def init_state(cfg: ModelConfig, seed: int = 0) -> ModelState:
    """Allocate parameters with symmetric-uniform 1/sqrt(fan_in) init.

    Weights draw from U(-1/sqrt(fan_in), +1/sqrt(fan_in)); biases start
    at zero and layer-norm gains at one. Allocation order is fixed so a
    given seed always produces the same state.
    """
    rng = np.random.default_rng(seed)
    dt = cfg.np_dtype
    state = ModelState(config=cfg)

    def weight(name: str, fan_in: int, fan_out: int):
        bound = 1.0 / math.sqrt(fan_in)
        w = rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(dt)
        state.params[name] = ng.tensor(w, requires_grad=True, name=name)

    def const(name: str, width: int, value: float):
        state.params[name] = ng.tensor(
            np.full((1, width), value, dtype=dt), requires_grad=True, name=name
        )

    d = cfg.hidden
    for branch in cfg.branches():
        w_in = _branch_input_width(cfg, branch)
        widths = [w_in, d, d, d]
        for i in range(3):
            weight(f"enc/{branch}/{i}/w", widths[i], widths[i + 1])
            const(f"enc/{branch}/{i}/b", widths[i + 1], 0.0)
    for k in range(cfg.blocks):
        for branch in cfg.branches():
            base = f"block{k}/{branch}"
            for proj in ("wq", "wk", "wv"):
                weight(f"{base}/{proj}", d, d)
            weight(f"{base}/wo", d, d)
            const(f"{base}/bo", d, 0.0)
            const(f"{base}/ln1_g", d, 1.0)
            const(f"{base}/ln1_b", d, 0.0)
            weight(f"{base}/ff1_w", d, cfg.ff_mult * d)
            const(f"{base}/ff1_b", cfg.ff_mult * d, 0.0)
            weight(f"{base}/ff2_w", cfg.ff_mult * d, d)
            const(f"{base}/ff2_b", d, 0.0)
            const(f"{base}/ln2_g", d, 1.0)
            const(f"{base}/ln2_b", d, 0.0)
    for branch in cfg.branches():
        out_w = _head_output_width(cfg, branch)
        weight(f"head/{branch}/w", d, out_w)
        const(f"head/{branch}/b", out_w, 0.0)
    return state


def parameter_count(cfg: ModelConfig) -> int:
    """Closed-form parameter total; must match actual allocation.

    Per branch with input width m and head width m (m = w for the
    temporal branch, n otherwise), d = hidden, f = ff_mult, K = blocks:

        encoder   m*d + d  +  2*(d*d + d)
        per block 4*d*d + d (qkv + output proj)  +  2*d (ln1)
                  + d*f*d + f*d + f*d*d + d (feed-forward)  +  2*d (ln2)
        head      d*m + m
    """
    d, f = cfg.hidden, cfg.ff_mult
    total = 0
    for branch in cfg.branches():
        m = _branch_input_width(cfg, branch)
        total += m * d + d + 2 * (d * d + d)
        total += cfg.blocks * (4 * d * d + d + 2 * d + d * f * d + f * d + f * d * d + d + 2 * d)
        total += d * m + m
    return total


def _affine(x: Tensor2, w: Tensor2, b: Tensor2) -> Tensor2:
    return ng.add(ng.matmul(x, w), b)


def embed(cfg: ModelConfig, state: ModelState, branch: str, x: Tensor2) -> Tensor2:
    """Per-row 3-layer affine stack with a smooth nonlinearity between."""
    p = state.params
    h = _affine(x, p[f"enc/{branch}/0/w"], p[f"enc/{branch}/0/b"])
    h = ng.gelu(h)
    h = _affine(h, p[f"enc/{branch}/1/w"], p[f"enc/{branch}/1/b"])
    h = ng.gelu(h)
    return _affine(h, p[f"enc/{branch}/2/w"], p[f"enc/{branch}/2/b"])


def attention_block(
    cfg: ModelConfig, state: ModelState, block: int, branch: str, h: Tensor2
) -> tuple[Tensor2, Tensor2]:
    """Multi-head self-attention for one branch of one block.

    Q/K/V are bias-free projections of the hidden rows; each is split
    into ``heads`` column groups, every head applies a row softmax of
    ``sqrt(heads/hidden) * Q K^T``, and head outputs are concatenated
    and passed through the branch output projection. Returns the block
    output and the head-averaged (still row-stochastic) attention map.
    """
    p = state.params
    base = f"block{block}/{branch}"
    q = ng.matmul(h, p[f"{base}/wq"])
    k = ng.matmul(h, p[f"{base}/wk"])
    v = ng.matmul(h, p[f"{base}/wv"])
    n_heads = cfg.heads
    scale = math.sqrt(n_heads / cfg.hidden)
    q_heads = ng.split_cols(q, n_heads)
    k_heads = ng.split_cols(k, n_heads)
    v_heads = ng.split_cols(v, n_heads)
    outs = []
    map_sum = None
    for ql, kl, vl in zip(q_heads, k_heads, v_heads):
        logits = ng.scale(ng.matmul(ql, ng.transpose(kl)), scale)
        attn = ng.softmax_rows(logits)
        outs.append(ng.matmul(attn, vl))
        map_sum = attn if map_sum is None else ng.add(map_sum, attn)
    merged = ng.concat_cols(outs)
    out = _affine(merged, p[f"{base}/wo"], p[f"{base}/bo"])
    return out, ng.scale(map_sum, 1.0 / n_heads)


def layer_forward(
    cfg: ModelConfig, state: ModelState, block: int, streams: dict[str, Tensor2]
) -> tuple[dict[str, Tensor2], dict[str, Tensor2]]:
    """One block: attention + residual + norm, then MLP + residual + norm."""
    p = state.params
    new_streams: dict[str, Tensor2] = {}
    maps: dict[str, Tensor2] = {}
    for branch, h in streams.items():
        base = f"block{block}/{branch}"
        attn_out, attn_map = attention_block(cfg, state, block, branch, h)
        maps[branch] = attn_map
        h1 = ng.layer_norm(ng.add(h, attn_out), p[f"{base}/ln1_g"], p[f"{base}/ln1_b"], cfg.eps_ln)
        ff = ng.gelu(_affine(h1, p[f"{base}/ff1_w"], p[f"{base}/ff1_b"]))
        ff = _affine(ff, p[f"{base}/ff2_w"], p[f"{base}/ff2_b"])
        new_streams[branch] = ng.layer_norm(
            ng.add(h1, ff), p[f"{base}/ln2_g"], p[f"{base}/ln2_b"], cfg.eps_ln
        )
    return new_streams, maps


def forward(
    state: ModelState,
    values: np.ndarray,
    temporal_state: np.ndarray | None,
    spatial_state: np.ndarray | None,
    trace: dict | None = None,
) -> ForwardOutput:
    """Embed, run all blocks, project reconstruction heads.

    ``values`` is the (w, n) normalized window; the state matrices may
    be None only when the matching branch is disabled. When ``trace``
    is a dict, intermediate stream values are recorded into it in
    forward order (used for non-finite diagnostics).
    """
    cfg = state.config
    dt = cfg.np_dtype
    w, n = values.shape
    if (w, n) != (cfg.window, cfg.sensors):
        raise ShapeError(f"forward: window is {w}x{n}, model expects {cfg.window}x{cfg.sensors}")
    inputs: dict[str, Tensor2] = {"series": ng.tensor(values, dtype=dt)}
    if cfg.temporal_branch:
        if temporal_state is None:
            raise ShapeError("forward: temporal branch enabled but no temporal state given")
        if temporal_state.shape != (w, w):
            raise ShapeError(f"forward: temporal state must be {w}x{w}, got {temporal_state.shape}")
        inputs["temporal"] = ng.tensor(temporal_state, dtype=dt)
    if cfg.spatial_branch:
        if spatial_state is None:
            raise ShapeError("forward: spatial branch enabled but no spatial state given")
        if spatial_state.shape != (n, n):
            raise ShapeError(f"forward: spatial state must be {n}x{n}, got {spatial_state.shape}")
        inputs["spatial"] = ng.tensor(spatial_state, dtype=dt)

    def note(key: str, t: Tensor2):
        if trace is not None:
            trace[key] = t.value

    streams = {b: embed(cfg, state, b, x) for b, x in inputs.items()}
    for b, h in streams.items():
        note(f"embed/{b}", h)
    all_maps: dict[str, list[Tensor2]] = {b: [] for b in streams}
    for k in range(cfg.blocks):
        streams, maps = layer_forward(cfg, state, k, streams)
        for b in streams:
            all_maps[b].append(maps[b])
            note(f"block{k}/{b}", streams[b])

    p = state.params
    recs: dict[str, Tensor2] = {}
    for b in streams:
        recs[b] = _affine(streams[b], p[f"head/{b}/w"], p[f"head/{b}/b"])
        note(f"head/{b}", recs[b])
    return ForwardOutput(
        values_rec=recs["series"],
        temporal_rec=recs.get("temporal"),
        spatial_rec=recs.get("spatial"),
        maps=AssociationMaps(
            series=all_maps["series"],
            temporal=all_maps.get("temporal"),
            spatial=all_maps.get("spatial"),
        ),
    )
