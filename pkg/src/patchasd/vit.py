"""Transformer encoder over spectrogram patch tokens.

Pre-norm blocks (LN -> multi-head self-attention -> residual, LN -> GELU MLP
-> residual) with a final layernorm, no class token: pooling downstream
aggregates all patch tokens. Positional information is factored into a
frequency-row table plus a time-column table, summed per patch, so clips of
different lengths share one parameter set. No dropout: encoding stays
deterministic, which the gradient checks rely on.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .augment import PATCH, PatchGrid
from .autodiff import Tensor
from .checkpoint import check_shapes, load_tensors, save_tensors

ViTParams = dict[str, Tensor]


@dataclass(frozen=True)
class ViTConfig:
    depth: int = 2
    dim: int = 64
    heads: int = 4
    mlp_ratio: float = 4.0
    patch_dim: int = PATCH * PATCH
    max_grid_rows: int = 8
    max_grid_cols: int = 64

    def __post_init__(self):
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        if self.dim % self.heads != 0:
            raise ValueError(f"dim {self.dim} not divisible by heads {self.heads}")

    @property
    def head_dim(self) -> int:
        return self.dim // self.heads

    @property
    def mlp_hidden(self) -> int:
        return int(self.dim * self.mlp_ratio)


def trunc_normal(shape, std: float, rng: np.random.Generator) -> np.ndarray:
    """Normal(0, std) with samples beyond 2*std redrawn."""
    x = rng.standard_normal(shape) * std
    bad = np.abs(x) > 2.0 * std
    while bad.any():
        x[bad] = rng.standard_normal(int(bad.sum())) * std
        bad = np.abs(x) > 2.0 * std
    return x


def expected_shapes(cfg: ViTConfig) -> dict[str, tuple]:
    d, h = cfg.dim, cfg.mlp_hidden
    shapes: dict[str, tuple] = {
        "patch_proj.w": (cfg.patch_dim, d),
        "patch_proj.b": (d,),
        "pos.row": (cfg.max_grid_rows, d),
        "pos.col": (cfg.max_grid_cols, d),
        "final_ln.scale": (d,),
        "final_ln.offset": (d,),
    }
    for i in range(cfg.depth):
        p = f"layers.{i}."
        shapes[p + "ln1.scale"] = (d,)
        shapes[p + "ln1.offset"] = (d,)
        for name in ("wq", "wk", "wv", "wo"):
            shapes[p + f"attn.{name}"] = (d, d)
        for name in ("bq", "bk", "bv", "bo"):
            shapes[p + f"attn.{name}"] = (d,)
        shapes[p + "ln2.scale"] = (d,)
        shapes[p + "ln2.offset"] = (d,)
        shapes[p + "mlp.w1"] = (d, h)
        shapes[p + "mlp.b1"] = (h,)
        shapes[p + "mlp.w2"] = (h, d)
        shapes[p + "mlp.b2"] = (d,)
    return shapes


def init_params(cfg: ViTConfig, rng: np.random.Generator,
                dtype=np.float64) -> ViTParams:
    """Truncated-normal weights (std 0.02), zero biases, unit layernorm scales."""
    params: ViTParams = {}
    for name, shape in expected_shapes(cfg).items():
        leaf = name.rsplit(".", 1)[-1]
        if leaf == "scale":
            arr = np.ones(shape)
        elif leaf in ("offset",) or leaf.startswith("b"):
            arr = np.zeros(shape)
        else:
            arr = trunc_normal(shape, 0.02, rng)
        params[name] = Tensor(arr.astype(dtype))
    return params


def _attention(x, params: ViTParams, prefix: str, cfg: ViTConfig):
    b, n, d = x.shape
    heads, hd = cfg.heads, cfg.head_dim

    def project(name):
        y = ad.add(ad.matmul(x, params[prefix + "attn.w" + name]),
                   params[prefix + "attn.b" + name])
        return ad.transpose(ad.reshape(y, (b, n, heads, hd)), (0, 2, 1, 3))

    q, k, v = project("q"), project("k"), project("v")
    scores = ad.mul(ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(hd))
    attn = ad.softmax(scores, axis=-1)
    ctx = ad.reshape(ad.transpose(ad.matmul(attn, v), (0, 2, 1, 3)), (b, n, d))
    return ad.add(ad.matmul(ctx, params[prefix + "attn.wo"]), params[prefix + "attn.bo"])


def encode_batch(patch_vectors, row_idx, col_idx, params: ViTParams,
                 cfg: ViTConfig) -> Tensor:
    """Encode a batch of equally-shaped patch grids.

    ``patch_vectors`` is [batch, n_patches, patch_dim]; ``row_idx``/``col_idx``
    give each patch's grid coordinates (shared across the batch). Returns
    token embeddings [batch, n_patches, dim].
    """
    row_idx = np.asarray(row_idx)
    col_idx = np.asarray(col_idx)
    if row_idx.size and row_idx.max() >= cfg.max_grid_rows:
        raise ValueError(
            f"grid rows up to {row_idx.max()} exceed positional table ({cfg.max_grid_rows})"
        )
    if col_idx.size and col_idx.max() >= cfg.max_grid_cols:
        raise ValueError(
            f"grid cols up to {col_idx.max()} exceed positional table ({cfg.max_grid_cols})"
        )
    x = ad.add(ad.matmul(ad._lift(patch_vectors), params["patch_proj.w"]),
               params["patch_proj.b"])
    pos = ad.add(ad.take_rows(params["pos.row"], row_idx),
                 ad.take_rows(params["pos.col"], col_idx))
    x = ad.add(x, pos)
    for i in range(cfg.depth):
        p = f"layers.{i}."
        h = ad.layernorm(x, params[p + "ln1.scale"], params[p + "ln1.offset"])
        x = ad.add(x, _attention(h, params, p, cfg))
        h = ad.layernorm(x, params[p + "ln2.scale"], params[p + "ln2.offset"])
        h = ad.gelu(ad.add(ad.matmul(h, params[p + "mlp.w1"]), params[p + "mlp.b1"]))
        h = ad.add(ad.matmul(h, params[p + "mlp.w2"]), params[p + "mlp.b2"])
        x = ad.add(x, h)
    return ad.layernorm(x, params["final_ln.scale"], params["final_ln.offset"])


def encode(grid: PatchGrid, params: ViTParams, cfg: ViTConfig) -> Tensor:
    """Encode one patch grid to per-patch tokens [n_patches, dim]."""
    r, c = grid.row_col_indices()
    vectors = grid.vectors()[None, :, :]
    tokens = encode_batch(vectors, r, c, params, cfg)
    return ad.reshape(tokens, (grid.n_patches, cfg.dim))


def save_checkpoint(cfg: ViTConfig, params: ViTParams, path,
                    extra_meta: dict | None = None) -> None:
    meta = {"vit_config": asdict(cfg)}
    if extra_meta:
        meta.update(extra_meta)
    save_tensors(path, {k: v.data for k, v in params.items()}, meta)


def load_checkpoint(path) -> tuple[ViTConfig, ViTParams]:
    """Load and validate an encoder checkpoint; shape mismatches name the tensor."""
    tensors, meta = load_tensors(path)
    cfg = ViTConfig(**meta["vit_config"])
    check_shapes(tensors, expected_shapes(cfg))
    return cfg, {k: Tensor(v) for k, v in tensors.items()}
