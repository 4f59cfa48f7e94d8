"""Clip embedding head and the angular-margin classification loss.

Patch tokens are aggregated by attentive statistics pooling: a per-token
bottleneck MLP scores every token, scores are softmax-normalized over tokens
independently per channel, and the attention-weighted mean and standard
deviation are concatenated. A linear projection maps the pooled vector to the
low-dimensional clip embedding used for both the margin loss and
nearest-neighbor scoring. Embeddings are deliberately not L2-normalized:
every consumer works in cosine geometry, which normalizes implicitly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .vit import trunc_normal

POOL_EPS = 1e-8
COS_CLAMP = 1e-7
EMBED_DIM = 128


@dataclass(frozen=True)
class ArcFaceHead:
    """Class-weight matrix plus the scale and angular margin.

    Column j of ``weights`` is the registered embedding of class j. The loss
    adds margin ``m`` (radians) to the target-class angle before the scaled
    softmax.
    """

    weights: Tensor          # [embed_dim, n_classes]
    scale: float = 30.0
    margin: float = 0.5

    def __post_init__(self):
        if self.weights.ndim != 2 or self.n_classes < 2:
            raise ValueError(f"weights must be [dim, c>=2], got {self.weights.shape}")
        if self.scale <= 0:
            raise ValueError("scale must be positive")
        if not 0.0 <= self.margin < math.pi / 2:
            raise ValueError("margin must lie in [0, pi/2)")

    @property
    def n_classes(self) -> int:
        return self.weights.shape[1]


def init_pool_params(dim: int, rng: np.random.Generator,
                     dtype=np.float64, prefix: str = "pool.") -> dict[str, Tensor]:
    hidden = max(dim // 2, 1)
    return {
        prefix + "w1": Tensor(trunc_normal((dim, hidden), 0.02, rng).astype(dtype)),
        prefix + "b1": Tensor(np.zeros(hidden, dtype=dtype)),
        prefix + "w2": Tensor(trunc_normal((hidden, dim), 0.02, rng).astype(dtype)),
        prefix + "b2": Tensor(np.zeros(dim, dtype=dtype)),
    }


def pool_batch(tokens, params: dict[str, Tensor], prefix: str = "pool.") -> Tensor:
    """Attentive statistics pooling over axis 1 of [batch, n_tokens, dim]."""
    t = ad._lift(tokens)
    if t.ndim != 3 or t.shape[1] < 1:
        raise ValueError(f"expected non-empty [batch, n_tokens, dim] tokens, got {t.shape}")
    scores = ad.add(
        ad.matmul(ad.tanh(ad.add(ad.matmul(t, params[prefix + "w1"]),
                                 params[prefix + "b1"])),
                  params[prefix + "w2"]),
        params[prefix + "b2"],
    )
    w = ad.softmax(scores, axis=1)   # per-channel weights over tokens
    mean = ad.sum_(ad.mul(w, t), axis=1)
    m2 = ad.sum_(ad.mul(w, ad.mul(t, t)), axis=1)
    var = ad.clip(ad.sub(m2, ad.mul(mean, mean)), 0.0, math.inf)
    std = ad.sqrt(ad.add(var, POOL_EPS))
    return ad.concat([mean, std], axis=-1)


def attentive_stats_pool(tokens, params: dict[str, Tensor],
                         prefix: str = "pool.") -> Tensor:
    """Pool [n_tokens, dim] tokens to a [2*dim] utterance embedding."""
    t = ad._lift(tokens)
    if t.ndim != 2:
        raise ValueError(f"expected [n_tokens, dim] tokens, got {t.shape}")
    pooled = pool_batch(ad.reshape(t, (1,) + t.shape), params, prefix)
    return ad.reshape(pooled, (pooled.shape[-1],))


def project(u, weight, bias) -> Tensor:
    """Linear map to the clip embedding: x = W^T u + b."""
    u = ad._lift(u)
    single = u.ndim == 1
    if single:
        u = ad.reshape(u, (1,) + u.shape)
    x = ad.add(ad.matmul(u, weight), bias)
    if single:
        x = ad.reshape(x, (x.shape[-1],))
    return x


def _validate_nonzero_columns(w: np.ndarray) -> None:
    norms = np.sqrt((w * w).sum(axis=0))
    if np.any(norms == 0):
        j = int(np.argmin(norms))
        raise ValueError(f"class weight column {j} has zero norm")


def cosines(x, weights) -> Tensor:
    """Cosine similarity between embeddings [..., d] and weight columns [d, c]."""
    x = ad._lift(x)
    weights = ad._lift(weights)
    single = x.ndim == 1
    if single:
        x = ad.reshape(x, (1,) + x.shape)
    xnorm = np.sqrt((x.data * x.data).sum(axis=1))
    if np.any(xnorm == 0):
        raise ValueError("embedding has zero norm")
    _validate_nonzero_columns(weights.data)
    xn = ad.sqrt(ad.sum_(ad.mul(x, x), axis=1, keepdims=True))
    wn = ad.sqrt(ad.sum_(ad.mul(weights, weights), axis=0, keepdims=True))
    cos = ad.div(ad.matmul(x, weights), ad.mul(xn, wn))
    if single:
        cos = ad.reshape(cos, (cos.shape[-1],))
    return cos


def angles(x, weights) -> Tensor:
    """Angle between an embedding and each registered class embedding."""
    return ad.arccos(cosines(x, weights))


def arcface_loss(embeddings, labels, head: ArcFaceHead) -> Tensor:
    """Mean angular-margin softmax loss over a batch.

    The margin is applied to the target-class angle only, via
    cos(theta + m) = cos(theta) cos(m) - sin(theta) sin(m) with
    sin(theta) = sqrt(1 - cos^2); cosines are clamped away from +-1 so the
    expression stays differentiable.
    """
    x = ad._lift(embeddings)
    if x.ndim != 2 or x.shape[0] < 1:
        raise ValueError(f"expected non-empty [batch, dim] embeddings, got {x.shape}")
    y = np.asarray(labels)
    c = head.n_classes
    if y.shape != (x.shape[0],) or y.min() < 0 or y.max() >= c:
        raise ValueError(f"labels must be ints in [0, {c}) with shape ({x.shape[0]},)")

    cos = ad.clip(cosines(x, head.weights), -1.0 + COS_CLAMP, 1.0 - COS_CLAMP)
    sin = ad.sqrt(ad.sub(1.0, ad.mul(cos, cos)))
    cos_margined = ad.sub(ad.mul(cos, math.cos(head.margin)),
                          ad.mul(sin, math.sin(head.margin)))
    onehot = np.zeros((x.shape[0], c), dtype=x.dtype)
    onehot[np.arange(x.shape[0]), y] = 1.0
    logits = ad.mul(
        ad.add(ad.mul(cos_margined, onehot), ad.mul(cos, 1.0 - onehot)),
        head.scale,
    )
    log_p = ad.log(ad.softmax(logits, axis=1))
    return ad.neg(ad.mean(ad.sum_(ad.mul(log_p, onehot), axis=1)))


def init_head_params(dim: int, n_classes: int, rng: np.random.Generator,
                     dtype=np.float64, embed_dim: int = EMBED_DIM) -> dict[str, Tensor]:
    """Pooling + projection + class weights for a token width of ``dim``."""
    params = init_pool_params(dim, rng, dtype)
    params["proj.w"] = Tensor(trunc_normal((2 * dim, embed_dim), 0.02, rng).astype(dtype))
    params["proj.b"] = Tensor(np.zeros(embed_dim, dtype=dtype))
    params["arcface.w"] = Tensor(trunc_normal((embed_dim, n_classes), 0.02, rng).astype(dtype))
    return params


def embed_tokens(tokens, params: dict[str, Tensor]) -> Tensor:
    """Tokens [batch, n, dim] -> clip embeddings [batch, embed_dim]."""
    return project(pool_batch(tokens, params), params["proj.w"], params["proj.b"])
