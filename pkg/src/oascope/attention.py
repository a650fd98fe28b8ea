"""Standard attention building blocks: plain dot-product attention and
multiheaded scaled dot-product self-attention."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import (RngState, ShapeError, Tensor, add, concat, linear, matmul,
                     parameter, scale, softmax, transpose)


def dot_product_attention(q: Tensor, c: Tensor) -> Tensor:
    """Summarize context rows per query row.

    q [n, dk], c [m, dk] -> [n, dk]. Row-softmax over the m context
    positions, weighted sum of context rows. No scaling, no projection.
    """
    if c.shape[0] == 0:
        raise ShapeError("dot_product_attention: empty context")
    if q.shape[-1] != c.shape[-1]:
        raise ShapeError(f"feature dims disagree: {q.shape} vs {c.shape}")
    scores = matmul(q, transpose(c))  # [n, m]
    weights = softmax(scores, axis=-1)
    return matmul(weights, c)


@dataclass
class SelfAttentionParams:
    """Per-head q/k/v projections plus the shared output projection.

    Each per-head weight is [dk, d]; the output projection is [d, d].
    """

    w_q: list
    b_q: list
    w_k: list
    b_k: list
    w_v: list
    b_v: list
    w_o: Tensor
    b_o: Tensor
    n_heads: int
    d: int

    @property
    def d_k(self) -> int:
        return self.d // self.n_heads

    @classmethod
    def init(cls, d: int, n_heads: int, rng: RngState, init_scale: float = 0.02):
        if d % n_heads != 0:
            raise ShapeError(f"d={d} not divisible by n_heads={n_heads}")
        dk = d // n_heads
        g = rng.generator

        def w():
            return parameter(g.normal(0.0, init_scale, size=(dk, d)))

        def b():
            return parameter(np.zeros(dk))

        return cls(
            w_q=[w() for _ in range(n_heads)], b_q=[b() for _ in range(n_heads)],
            w_k=[w() for _ in range(n_heads)], b_k=[b() for _ in range(n_heads)],
            w_v=[w() for _ in range(n_heads)], b_v=[b() for _ in range(n_heads)],
            w_o=parameter(g.normal(0.0, init_scale, size=(d, d))),
            b_o=parameter(np.zeros(d)),
            n_heads=n_heads, d=d,
        )

    def named(self, prefix: str) -> dict:
        out = {}
        for h in range(self.n_heads):
            out[f"{prefix}.head{h}.w_q"] = self.w_q[h]
            out[f"{prefix}.head{h}.b_q"] = self.b_q[h]
            out[f"{prefix}.head{h}.w_k"] = self.w_k[h]
            out[f"{prefix}.head{h}.b_k"] = self.b_k[h]
            out[f"{prefix}.head{h}.w_v"] = self.w_v[h]
            out[f"{prefix}.head{h}.b_v"] = self.b_v[h]
        out[f"{prefix}.w_o"] = self.w_o
        out[f"{prefix}.b_o"] = self.b_o
        return out


def multihead_self_attention(x: Tensor, params: SelfAttentionParams) -> Tensor:
    """Unmasked multiheaded self-attention over the rows of x [m, d].

    Per head, logits are scaled by 1/sqrt(dk); heads are concatenated along
    features and projected by w_o. No positional encoding, no mask.
    """
    if x.shape[0] == 0:
        raise ShapeError("multihead_self_attention: empty input")
    if x.shape[1] != params.d:
        raise ShapeError(f"input width {x.shape[1]} != d {params.d}")
    dk = params.d_k
    heads = []
    for h in range(params.n_heads):
        q = linear(x, params.w_q[h], params.b_q[h])  # [m, dk]
        k = linear(x, params.w_k[h], params.b_k[h])
        v = linear(x, params.w_v[h], params.b_v[h])
        logits = scale(matmul(q, transpose(k)), 1.0 / np.sqrt(dk))  # [m, m]
        weights = softmax(logits, axis=-1)
        heads.append(matmul(weights, v))
    return add(matmul(concat(heads, axis=1), transpose(params.w_o)), params.b_o)
