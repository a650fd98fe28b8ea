"""Orthogonal attention: query-aware context encoding with per-pair keys and values.

A single head builds one key/value pair per (context word i, query word j)
through a pair-interaction function (elementwise multiplicative or
convolutional), plus one query vector per query word. Value vectors are then
summarized per context word with softmax weights over the query axis. Four
variants are provided:

    em   elementwise-multiplicative pair interaction, query-only queries
    emb  same pair interaction, context-aware (bidirectional) queries
    c    filters generated from query words, convolved over context rows
    ca   convolutional pair interaction, context-aware convolutional queries
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .attention import SelfAttentionParams, dot_product_attention, multihead_self_attention
from .tensor import (RngState, ShapeError, Tensor, add, concat, conv1d_dynamic,
                     conv1d_paired, dropout, layer_norm, linear, matmul, mul,
                     parameter, relu, reshape, scale, softmax, transpose, tsum)

VARIANTS = ("em", "emb", "c", "ca")


@dataclass
class OAConfig:
    """Width and head layout shared by every orthogonal attention layer."""

    d: int
    n_heads: int
    variant: str
    dropout_p: float = 0.3
    d_ff: int | None = None  # feed-forward hidden width, defaults to d

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.d % self.n_heads != 0:
            raise ShapeError(f"d={self.d} not divisible by n_heads={self.n_heads}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError(f"dropout_p must satisfy 0 <= p < 1, got {self.dropout_p}")
        if self.variant in ("c", "ca") and self.sqrt_dk ** 2 != self.d_k:
            raise ShapeError(
                f"convolutional variants need square d_k, got d_k={self.d_k}")
        if self.d_ff is None:
            self.d_ff = self.d

    @property
    def d_k(self) -> int:
        return self.d // self.n_heads

    @property
    def d_v(self) -> int:
        return self.d // self.n_heads

    @property
    def sqrt_dk(self) -> int:
        return int(math.isqrt(self.d_k))


# ---------------------------------------------------------------------------
# per-variant parameter containers


def _w(rng, out_f, in_f, init_scale):
    return parameter(rng.generator.normal(0.0, init_scale, size=(out_f, in_f)))


def _b(out_f):
    return parameter(np.zeros(out_f))


def randomize_biases(named_params: dict, rng: RngState, scale: float = 0.1) -> None:
    """Give 1-D bias parameters small random values.

    Zero biases leave many ReLU pre-activations exactly at the kink, where
    central differences disagree with any subgradient choice; finite-difference
    checks should run on a perturbed parameter point.
    """
    for p in named_params.values():
        if p.data.ndim == 1:
            p.data[:] = rng.generator.normal(0.0, scale, size=p.data.shape)


@dataclass
class AlphaEMParams:
    """Pair embeddings from elementwise multiplication of projected rows."""

    context_w: Tensor  # [dk, d]
    context_b: Tensor
    query_w: Tensor    # [dk, d]
    query_b: Tensor
    out_w: Tensor      # [dk, dk]
    out_b: Tensor

    @classmethod
    def init(cls, cfg: OAConfig, rng: RngState, init_scale: float):
        dk = cfg.d_k
        return cls(_w(rng, dk, cfg.d, init_scale), _b(dk),
                   _w(rng, dk, cfg.d, init_scale), _b(dk),
                   _w(rng, dk, dk, init_scale), _b(dk))

    def named(self, prefix):
        return {f"{prefix}.context_w": self.context_w, f"{prefix}.context_b": self.context_b,
                f"{prefix}.query_w": self.query_w, f"{prefix}.query_b": self.query_b,
                f"{prefix}.out_w": self.out_w, f"{prefix}.out_b": self.out_b}


@dataclass
class AlphaConvParams:
    """Pair embeddings from query-generated filters convolved over context rows."""

    context_w: Tensor  # [dk, d]
    context_b: Tensor
    filter_w: Tensor   # [dk, d] -> reshaped to sqrt_dk filters of sqrt_dk taps
    filter_b: Tensor
    bias_w: Tensor     # [1, d] -> one bias per query word
    bias_b: Tensor
    out_w: Tensor      # [dk, dk]
    out_b: Tensor

    @classmethod
    def init(cls, cfg: OAConfig, rng: RngState, init_scale: float):
        dk = cfg.d_k
        return cls(_w(rng, dk, cfg.d, init_scale), _b(dk),
                   _w(rng, dk, cfg.d, init_scale), _b(dk),
                   _w(rng, 1, cfg.d, init_scale), _b(1),
                   _w(rng, dk, dk, init_scale), _b(dk))

    def named(self, prefix):
        return {f"{prefix}.context_w": self.context_w, f"{prefix}.context_b": self.context_b,
                f"{prefix}.filter_w": self.filter_w, f"{prefix}.filter_b": self.filter_b,
                f"{prefix}.bias_w": self.bias_w, f"{prefix}.bias_b": self.bias_b,
                f"{prefix}.out_w": self.out_w, f"{prefix}.out_b": self.out_b}


@dataclass
class BetaEMParams:
    """Query vectors from a single projection of the query input."""

    w: Tensor  # [dk, d]
    b: Tensor

    @classmethod
    def init(cls, cfg: OAConfig, rng: RngState, init_scale: float):
        return cls(_w(rng, cfg.d_k, cfg.d, init_scale), _b(cfg.d_k))

    def named(self, prefix):
        return {f"{prefix}.w": self.w, f"{prefix}.b": self.b}


@dataclass
class BetaEMBParams:
    """Context-aware query vectors via dot-product attention and gating."""

    context_w: Tensor  # [dk, d]
    context_b: Tensor
    query_w: Tensor    # [dk, d]
    query_b: Tensor
    out_w: Tensor      # [dk, dk]
    out_b: Tensor

    @classmethod
    def init(cls, cfg: OAConfig, rng: RngState, init_scale: float):
        dk = cfg.d_k
        return cls(_w(rng, dk, cfg.d, init_scale), _b(dk),
                   _w(rng, dk, cfg.d, init_scale), _b(dk),
                   _w(rng, dk, dk, init_scale), _b(dk))

    def named(self, prefix):
        return {f"{prefix}.context_w": self.context_w, f"{prefix}.context_b": self.context_b,
                f"{prefix}.query_w": self.query_w, f"{prefix}.query_b": self.query_b,
                f"{prefix}.out_w": self.out_w, f"{prefix}.out_b": self.out_b}


@dataclass
class BetaCAParams:
    """Context-aware query vectors via attention-generated convolution filters."""

    context_w: Tensor  # [dk, d]
    context_b: Tensor
    query_w: Tensor    # [dk, d]
    query_b: Tensor
    filter_w: Tensor   # [dk, dk]
    filter_b: Tensor
    bias_w: Tensor     # [1, dk]
    bias_b: Tensor

    @classmethod
    def init(cls, cfg: OAConfig, rng: RngState, init_scale: float):
        dk = cfg.d_k
        return cls(_w(rng, dk, cfg.d, init_scale), _b(dk),
                   _w(rng, dk, cfg.d, init_scale), _b(dk),
                   _w(rng, dk, dk, init_scale), _b(dk),
                   _w(rng, 1, dk, init_scale), _b(1))

    def named(self, prefix):
        return {f"{prefix}.context_w": self.context_w, f"{prefix}.context_b": self.context_b,
                f"{prefix}.query_w": self.query_w, f"{prefix}.query_b": self.query_b,
                f"{prefix}.filter_w": self.filter_w, f"{prefix}.filter_b": self.filter_b,
                f"{prefix}.bias_w": self.bias_w, f"{prefix}.bias_b": self.bias_b}


@dataclass
class OAHeadParams:
    """One attention head: two independent pair-embedding generators (keys,
    values) and one query-vector generator."""

    alpha_k: AlphaEMParams | AlphaConvParams
    alpha_v: AlphaEMParams | AlphaConvParams
    beta: BetaEMParams | BetaEMBParams | BetaCAParams

    @classmethod
    def init(cls, cfg: OAConfig, rng: RngState, init_scale: float = 0.02):
        alpha_cls = AlphaEMParams if cfg.variant in ("em", "emb") else AlphaConvParams
        beta_cls = {"em": BetaEMParams, "c": BetaEMParams,
                    "emb": BetaEMBParams, "ca": BetaCAParams}[cfg.variant]
        return cls(alpha_cls.init(cfg, rng, init_scale),
                   alpha_cls.init(cfg, rng, init_scale),
                   beta_cls.init(cfg, rng, init_scale))

    def named(self, prefix):
        out = {}
        out.update(self.alpha_k.named(f"{prefix}.alpha_k"))
        out.update(self.alpha_v.named(f"{prefix}.alpha_v"))
        out.update(self.beta.named(f"{prefix}.beta"))
        return out


@dataclass
class OAEncoderState:
    """All parameters of one orthogonal attention encoder block."""

    heads: list
    w_d: Tensor  # [d, d] multihead output projection
    self_attn: SelfAttentionParams
    fc1_w: Tensor  # [d_ff, d]
    fc1_b: Tensor
    fc2_w: Tensor  # [d, d_ff]
    fc2_b: Tensor
    ln1_gain: Tensor
    ln1_bias: Tensor
    ln2_gain: Tensor
    ln2_bias: Tensor
    config: OAConfig = field(repr=False, default=None)

    @classmethod
    def init(cls, cfg: OAConfig, rng: RngState, init_scale: float = 0.02):
        d, d_ff = cfg.d, cfg.d_ff
        return cls(
            heads=[OAHeadParams.init(cfg, rng, init_scale) for _ in range(cfg.n_heads)],
            w_d=_w(rng, d, d, init_scale),
            self_attn=SelfAttentionParams.init(d, cfg.n_heads, rng, init_scale),
            fc1_w=_w(rng, d_ff, d, init_scale), fc1_b=_b(d_ff),
            fc2_w=_w(rng, d, d_ff, init_scale), fc2_b=_b(d),
            ln1_gain=parameter(np.ones(d)), ln1_bias=parameter(np.zeros(d)),
            ln2_gain=parameter(np.ones(d)), ln2_bias=parameter(np.zeros(d)),
            config=cfg,
        )

    def named(self, prefix):
        out = {}
        for h, head in enumerate(self.heads):
            out.update(head.named(f"{prefix}.head{h}"))
        out[f"{prefix}.w_d"] = self.w_d
        out.update(self.self_attn.named(f"{prefix}.self_attn"))
        out[f"{prefix}.fc1_w"] = self.fc1_w
        out[f"{prefix}.fc1_b"] = self.fc1_b
        out[f"{prefix}.fc2_w"] = self.fc2_w
        out[f"{prefix}.fc2_b"] = self.fc2_b
        out[f"{prefix}.ln1_gain"] = self.ln1_gain
        out[f"{prefix}.ln1_bias"] = self.ln1_bias
        out[f"{prefix}.ln2_gain"] = self.ln2_gain
        out[f"{prefix}.ln2_bias"] = self.ln2_bias
        return out


# ---------------------------------------------------------------------------
# variant building blocks


def _check_cq(c: Tensor, q: Tensor):
    if q.shape[0] == 0:
        raise ShapeError("sample without cue: query side is empty")
    if c.shape[0] == 0:
        raise ShapeError("empty context")


def alpha_em(c: Tensor, q: Tensor, p: AlphaEMParams) -> Tensor:
    """Pair embeddings via elementwise multiplication. c [m,d], q [n,d] -> [m,n,dk]."""
    _check_cq(c, q)
    m, n = c.shape[0], q.shape[0]
    dk = p.context_w.shape[0]
    c1 = relu(linear(c, p.context_w, p.context_b))      # [m, dk]
    q1 = relu(linear(q, p.query_w, p.query_b))          # [n, dk]
    x1 = mul(reshape(c1, (m, 1, dk)), reshape(q1, (1, n, dk)))  # [m, n, dk]
    return relu(linear(x1, p.out_w, p.out_b))


def beta_em(q: Tensor, p: BetaEMParams) -> Tensor:
    """Query vectors from one projection of q. [n,d] -> [n,dk]."""
    return relu(linear(q, p.w, p.b))


def beta_emb(c: Tensor, q: Tensor, p: BetaEMBParams) -> Tensor:
    """Context-aware query vectors: attention summary gated into the queries."""
    _check_cq(c, q)
    c1 = relu(linear(c, p.context_w, p.context_b))  # [m, dk]
    q1 = relu(linear(q, p.query_w, p.query_b))      # [n, dk]
    cq = dot_product_attention(q1, c1)              # [n, dk]
    q2 = mul(q1, cq)
    return relu(linear(q2, p.out_w, p.out_b))


def _conv_filters(source: Tensor, w, b, bias_w, bias_b, sqrt_dk: int):
    """Generate per-row filter banks [rows, sqrt_dk, sqrt_dk] and biases [rows, 1]."""
    rows = source.shape[0]
    flat = linear(source, w, b)  # [rows, dk]
    filters = reshape(flat, (rows, sqrt_dk, sqrt_dk))
    biases = linear(source, bias_w, bias_b)  # [rows, 1]
    return filters, biases


def alpha_c(c: Tensor, q: Tensor, p: AlphaConvParams, cfg: OAConfig) -> Tensor:
    """Pair embeddings from query-generated filters convolved over context rows.

    c [m,d], q [n,d] -> [m,n,dk]. Each query word contributes sqrt_dk filters
    of size sqrt_dk, applied at stride sqrt_dk over each projected context row
    and flattened.
    """
    _check_cq(c, q)
    s = cfg.sqrt_dk
    c1 = relu(linear(c, p.context_w, p.context_b))  # [m, dk]
    filters, biases = _conv_filters(q, p.filter_w, p.filter_b, p.bias_w, p.bias_b, s)
    x = conv1d_dynamic(c1, filters, biases, stride=s)  # [m, n, dk]
    return relu(linear(x, p.out_w, p.out_b))


def beta_ca(c: Tensor, q: Tensor, p: BetaCAParams, cfg: OAConfig) -> Tensor:
    """Context-aware convolutional query vectors. [n,d] -> [n,dk].

    The attention summary of the context per query word generates the filters
    that are convolved over that same query word's projection. The flattened
    feature maps are used directly (no trailing activation).
    """
    _check_cq(c, q)
    s = cfg.sqrt_dk
    c1 = relu(linear(c, p.context_w, p.context_b))  # [m, dk]
    q1 = relu(linear(q, p.query_w, p.query_b))      # [n, dk]
    cq = dot_product_attention(q1, c1)              # [n, dk]
    filters, biases = _conv_filters(cq, p.filter_w, p.filter_b, p.bias_w, p.bias_b, s)
    return conv1d_paired(q1, filters, biases, stride=s)  # [n, dk]


def _alpha(c, q, p, cfg):
    if cfg.variant in ("em", "emb"):
        return alpha_em(c, q, p)
    return alpha_c(c, q, p, cfg)


def _beta(c, q, p, cfg):
    if cfg.variant in ("em", "c"):
        return beta_em(q, p)
    if cfg.variant == "emb":
        return beta_emb(c, q, p)
    return beta_ca(c, q, p, cfg)


# ---------------------------------------------------------------------------
# head, multihead, encoder block


def oa_head(c: Tensor, q: Tensor, head: OAHeadParams, cfg: OAConfig,
            training: bool = False, rng: RngState | None = None,
            trace: dict | None = None) -> Tensor:
    """One orthogonal attention head: c [m,d], q [n,d] -> [m,dv].

    Scores are the pairwise products k_s[i,j] . q_s[j] / sqrt(dk), computed
    directly instead of slicing the diagonal of a full [m,n,n] product.
    Softmax runs over the query axis, so each context word's weights sum to 1.
    """
    _check_cq(c, q)
    m, n = c.shape[0], q.shape[0]
    dk = cfg.d_k
    k_s = _alpha(c, q, head.alpha_k, cfg)   # [m, n, dk]
    v_s = _alpha(c, q, head.alpha_v, cfg)   # [m, n, dv]
    q_s = _beta(c, q, head.beta, cfg)       # [n, dk]
    scores = scale(tsum(mul(k_s, reshape(q_s, (1, n, dk))), axis=2), 1.0 / np.sqrt(dk))
    weights = softmax(scores, axis=1)       # [m, n]
    if training and cfg.dropout_p > 0.0:
        weights = dropout(weights, cfg.dropout_p, rng, training=True)
    w_s = reshape(weights, (m, n, 1))
    out = tsum(mul(w_s, v_s), axis=1)       # [m, dv]
    if trace is not None:
        trace.update(q_s=q_s, k_s=k_s, v_s=v_s, w_s=w_s, c_q=out)
    return out


def oa_multihead(c: Tensor, q: Tensor, state: OAEncoderState, cfg: OAConfig,
                 training: bool = False, rng: RngState | None = None,
                 trace: dict | None = None) -> Tensor:
    """Concatenate per-head outputs along features and project back to d."""
    outs = []
    for i, head in enumerate(state.heads):
        head_trace = {} if trace is not None else None
        outs.append(oa_head(c, q, head, cfg, training, rng, head_trace))
        if trace is not None:
            trace[f"head{i}"] = head_trace
    combined = concat(outs, axis=1)  # [m, n_heads * dv] = [m, d]
    out = matmul(combined, transpose(state.w_d))
    if trace is not None:
        trace["c_o"] = out
    return out


def oa_encoder_block(c: Tensor, q: Tensor, state: OAEncoderState, cfg: OAConfig,
                     training: bool = False, rng: RngState | None = None) -> Tensor:
    """Orthogonal attention encoder: attention, residual, norm, self-attention,
    feed-forward, residual skipping over both, norm. Output shape equals c."""
    z = oa_multihead(c, q, state, cfg, training, rng)
    x1 = add(z, c)
    x2 = layer_norm(x1, state.ln1_gain, state.ln1_bias)
    x3 = multihead_self_attention(x2, state.self_attn)
    x4 = linear(relu(linear(x3, state.fc1_w, state.fc1_b)), state.fc2_w, state.fc2_b)
    x5 = add(x4, x2)
    return layer_norm(x5, state.ln2_gain, state.ln2_bias)
