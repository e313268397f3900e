"""Network layers composed from the autodiff primitives.

Layers accept a single sequence (n, d) or a batch of sequences (B, n, d);
attention and layer norm act on the last one or two axes either way.
"""

from __future__ import annotations

from dataclasses import dataclass

from ..errors import ShapeError
from ..rng import Rng
from .tensor import (
    Param,
    Tensor,
    add,
    attention_core,
    dense_gelu_dense,
    matmul,
    reshape,
)
from .tensor import layer_norm as _layer_norm_op


@dataclass(frozen=True)
class AttentionConfig:
    model_dim: int
    num_heads: int

    def __post_init__(self):
        if self.model_dim % self.num_heads != 0:
            raise ShapeError(
                f"num_heads {self.num_heads} must divide model_dim {self.model_dim}"
            )

    @property
    def head_dim(self) -> int:
        return self.model_dim // self.num_heads


@dataclass
class MsaParams:
    w_q: Param
    b_q: Param
    w_k: Param
    b_k: Param
    w_v: Param
    b_v: Param
    w_o: Param
    b_o: Param

    def all(self) -> list[Param]:
        return [self.w_q, self.b_q, self.w_k, self.b_k, self.w_v, self.b_v, self.w_o, self.b_o]


@dataclass
class MlpParams:
    w1: Param
    b1: Param
    w2: Param
    b2: Param

    def all(self) -> list[Param]:
        return [self.w1, self.b1, self.w2, self.b2]


@dataclass
class LnParams:
    gamma: Param
    beta: Param

    def all(self) -> list[Param]:
        return [self.gamma, self.beta]


def linear(x: Tensor, w: Param | Tensor, b: Param | Tensor | None = None) -> Tensor:
    """y = x @ w + b, broadcasting the bias over leading axes."""
    y = matmul(x, w)
    if b is not None:
        y = add(y, b)
    return y


def layer_norm(x: Tensor, gamma: Param, beta: Param, eps: float = 1e-12) -> Tensor:
    return _layer_norm_op(x, gamma, beta, eps)


def msa(x: Tensor, p: MsaParams, cfg: AttentionConfig) -> Tensor:
    """Multi-head self-attention, bidirectional (no mask).

    Scaled dot-product attention per head with scale 1/sqrt(head_dim),
    heads concatenated, then output projection.
    """
    squeeze = x.ndim == 2
    xb = reshape(x, (1,) + x.shape) if squeeze else x
    if xb.ndim != 3 or xb.shape[-1] != cfg.model_dim:
        raise ShapeError(f"msa expected (..., n, {cfg.model_dim}), got {x.shape}")
    b, n, d = xb.shape
    q = linear(xb, p.w_q, p.b_q)
    k = linear(xb, p.w_k, p.b_k)
    v = linear(xb, p.w_v, p.b_v)
    context = attention_core(q, k, v, cfg.num_heads)
    out = linear(context, p.w_o, p.b_o)
    return reshape(out, (n, d)) if squeeze else out


def mlp(x: Tensor, p: MlpParams) -> Tensor:
    """linear(d -> 4d) -> GELU -> linear(4d -> d)."""
    return dense_gelu_dense(x, p.w1, p.b1, p.w2, p.b2)


# ---------------------------------------------------------------------------
# parameter construction


def _normal(rng: Rng, shape: tuple[int, ...], sigma: float):
    import numpy as np

    flat = rng.normals(int(np.prod(shape)) if shape else 1, sigma)
    return np.array(flat, dtype=np.float64).reshape(shape)


def _zeros(shape):
    import numpy as np

    return np.zeros(shape, dtype=np.float64)


def _ones(shape):
    import numpy as np

    return np.ones(shape, dtype=np.float64)


INIT_SIGMA = 0.02


def init_msa(prefix: str, cfg: AttentionConfig, rng: Rng) -> MsaParams:
    d = cfg.model_dim
    return MsaParams(
        w_q=Param(_normal(rng, (d, d), INIT_SIGMA), f"{prefix}.w_q"),
        b_q=Param(_zeros((d,)), f"{prefix}.b_q"),
        w_k=Param(_normal(rng, (d, d), INIT_SIGMA), f"{prefix}.w_k"),
        b_k=Param(_zeros((d,)), f"{prefix}.b_k"),
        w_v=Param(_normal(rng, (d, d), INIT_SIGMA), f"{prefix}.w_v"),
        b_v=Param(_zeros((d,)), f"{prefix}.b_v"),
        w_o=Param(_normal(rng, (d, d), INIT_SIGMA), f"{prefix}.w_o"),
        b_o=Param(_zeros((d,)), f"{prefix}.b_o"),
    )


def init_mlp(prefix: str, d: int, rng: Rng) -> MlpParams:
    return MlpParams(
        w1=Param(_normal(rng, (d, 4 * d), INIT_SIGMA), f"{prefix}.w1"),
        b1=Param(_zeros((4 * d,)), f"{prefix}.b1"),
        w2=Param(_normal(rng, (4 * d, d), INIT_SIGMA), f"{prefix}.w2"),
        b2=Param(_zeros((d,)), f"{prefix}.b2"),
    )


def init_ln(prefix: str, d: int) -> LnParams:
    return LnParams(
        gamma=Param(_ones((d,)), f"{prefix}.gamma"),
        beta=Param(_zeros((d,)), f"{prefix}.beta"),
    )
