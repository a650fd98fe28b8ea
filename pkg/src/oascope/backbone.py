"""Contextual token embedding producers.

Two interchangeable backbones sit behind one interface: a small trainable
transformer encoder (hashed vocabulary, learned positions) and a frozen
table of precomputed per-sample embeddings loaded from a binary file, so
that externally exported embeddings can be injected without retraining.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from .attention import SelfAttentionParams, multihead_self_attention
from .tensor import (RngState, ShapeError, Tensor, add, gather_rows, layer_norm,
                     linear, parameter, relu)

EMB_MAGIC = b"OAEMB1"


class EmbeddingFileError(ValueError):
    """Malformed precomputed-embedding file."""


@dataclass
class TokenSequence:
    """One tokenized sample: ids, the original words, and cue positions."""

    token_ids: list
    words: list
    cue_ids: list
    sample_id: int = 0

    def __post_init__(self):
        if len(self.token_ids) != len(self.words):
            raise ShapeError("token_ids and words lengths differ")
        if not self.cue_ids:
            raise ShapeError("cueless sample: cue_ids is empty")
        if list(self.cue_ids) != sorted(set(self.cue_ids)):
            raise ShapeError("cue_ids must be strictly increasing")
        if self.cue_ids[-1] >= len(self.token_ids):
            raise ShapeError("cue position beyond sequence length")

    def __len__(self):
        return len(self.token_ids)


@dataclass
class BackboneSpec:
    kind: str = "toy_encoder"  # or "precomputed"
    d: int = 64
    vocab_size: int = 8192
    n_layers: int = 2
    n_heads: int = 4
    max_len: int = 128
    path: str | None = None
    init_scale: float = 0.02
    embed_scale: float = 0.5

    def __post_init__(self):
        if self.kind not in ("toy_encoder", "precomputed"):
            raise ValueError(f"unknown backbone kind {self.kind!r}")


def hash_token(word: str, vocab_size: int) -> int:
    """Process-independent word id (crc32 is stable across runs and machines)."""
    return zlib.crc32(word.encode("utf-8")) % vocab_size


def tokenize(words, cue_ids, vocab_size: int, sample_id: int = 0) -> TokenSequence:
    return TokenSequence(token_ids=[hash_token(w, vocab_size) for w in words],
                         words=list(words), cue_ids=list(cue_ids), sample_id=sample_id)


@dataclass
class EncoderLayer:
    """Plain transformer encoder layer: self-attention and feed-forward,
    each wrapped in residual + layer norm."""

    self_attn: SelfAttentionParams
    fc1_w: Tensor
    fc1_b: Tensor
    fc2_w: Tensor
    fc2_b: Tensor
    ln1_gain: Tensor
    ln1_bias: Tensor
    ln2_gain: Tensor
    ln2_bias: Tensor

    @classmethod
    def init(cls, d: int, n_heads: int, rng: RngState, init_scale: float):
        g = rng.generator
        return cls(
            self_attn=SelfAttentionParams.init(d, n_heads, rng, init_scale),
            fc1_w=parameter(g.normal(0.0, init_scale, size=(d, d))),
            fc1_b=parameter(np.zeros(d)),
            fc2_w=parameter(g.normal(0.0, init_scale, size=(d, d))),
            fc2_b=parameter(np.zeros(d)),
            ln1_gain=parameter(np.ones(d)), ln1_bias=parameter(np.zeros(d)),
            ln2_gain=parameter(np.ones(d)), ln2_bias=parameter(np.zeros(d)),
        )

    def forward(self, x: Tensor) -> Tensor:
        h = layer_norm(add(x, multihead_self_attention(x, self.self_attn)),
                       self.ln1_gain, self.ln1_bias)
        ff = linear(relu(linear(h, self.fc1_w, self.fc1_b)), self.fc2_w, self.fc2_b)
        return layer_norm(add(h, ff), self.ln2_gain, self.ln2_bias)

    def named(self, prefix):
        out = self.self_attn.named(f"{prefix}.self_attn")
        out[f"{prefix}.fc1_w"] = self.fc1_w
        out[f"{prefix}.fc1_b"] = self.fc1_b
        out[f"{prefix}.fc2_w"] = self.fc2_w
        out[f"{prefix}.fc2_b"] = self.fc2_b
        out[f"{prefix}.ln1_gain"] = self.ln1_gain
        out[f"{prefix}.ln1_bias"] = self.ln1_bias
        out[f"{prefix}.ln2_gain"] = self.ln2_gain
        out[f"{prefix}.ln2_bias"] = self.ln2_bias
        return out


def sinusoidal_positions(max_len: int, d: int) -> np.ndarray:
    """Fixed-frequency position table. Used as the trainable position
    embedding's starting point: relative offsets are then decodable from
    products of embedding coordinates, which the attention layers exploit
    long before gradient descent could shape random positions."""
    pos = np.arange(max_len)[:, None]
    idx = np.arange(d // 2)[None, :]
    angles = pos / (10000.0 ** (2 * idx / d))
    table = np.zeros((max_len, d))
    table[:, 0::2] = np.sin(angles)
    table[:, 1::2] = np.cos(angles)
    return table


@dataclass
class ToyEncoder:
    """Trainable desk-scale encoder: word + position embeddings, then
    n_layers standard self-attention encoder layers."""

    spec: BackboneSpec
    word_emb: Tensor = field(repr=False, default=None)
    pos_emb: Tensor = field(repr=False, default=None)
    layers: list = field(repr=False, default=None)

    @classmethod
    def init(cls, spec: BackboneSpec, rng: RngState):
        g = rng.generator
        word = parameter(g.normal(0.0, spec.embed_scale, size=(spec.vocab_size, spec.d)))
        pos = parameter(sinusoidal_positions(spec.max_len, spec.d))
        layers = [EncoderLayer.init(spec.d, spec.n_heads, rng, spec.init_scale)
                  for _ in range(spec.n_layers)]
        return cls(spec=spec, word_emb=word, pos_emb=pos, layers=layers)

    def embed(self, seq: TokenSequence, training: bool = False) -> Tensor:
        m = len(seq)
        if m > self.spec.max_len:
            raise ShapeError(f"sequence length {m} exceeds max_len {self.spec.max_len}")
        ids = np.asarray(seq.token_ids)
        if ids.min() < 0 or ids.max() >= self.spec.vocab_size:
            raise ShapeError("token id outside vocabulary")
        x = add(gather_rows(self.word_emb, ids), gather_rows(self.pos_emb, np.arange(m)))
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def named(self, prefix="backbone"):
        out = {f"{prefix}.word_emb": self.word_emb, f"{prefix}.pos_emb": self.pos_emb}
        for i, layer in enumerate(self.layers):
            out.update(layer.named(f"{prefix}.layer{i}"))
        return out


@dataclass
class PrecomputedBackbone:
    """Frozen per-sample embedding matrices keyed by sample id."""

    spec: BackboneSpec
    tables: dict = field(repr=False, default=None)

    @classmethod
    def from_file(cls, spec: BackboneSpec):
        tables = load_precomputed(spec.path)
        for sid, arr in tables.items():
            if arr.shape[1] != spec.d:
                raise EmbeddingFileError(
                    f"{spec.path}: sample {sid} has width {arr.shape[1]}, expected d={spec.d}")
        return cls(spec=spec, tables=tables)

    def embed(self, seq: TokenSequence, training: bool = False) -> Tensor:
        if seq.sample_id not in self.tables:
            raise EmbeddingFileError(f"no precomputed embedding for sample id {seq.sample_id}")
        arr = self.tables[seq.sample_id]
        if arr.shape[0] != len(seq):
            raise EmbeddingFileError(
                f"sample {seq.sample_id}: embedding rows {arr.shape[0]} != tokens {len(seq)}")
        return Tensor(arr)  # frozen: no gradient

    def named(self, prefix="backbone"):
        return {}


def build_backbone(spec: BackboneSpec, rng: RngState):
    if spec.kind == "toy_encoder":
        return ToyEncoder.init(spec, rng)
    return PrecomputedBackbone.from_file(spec)


# ---------------------------------------------------------------------------
# precomputed-embedding file format: magic "OAEMB1", u32 sample count, then
# per sample u32 id, u32 m, u32 d, m*d little-endian float32


def write_embeddings(path, tables: dict) -> None:
    with open(path, "wb") as fh:
        fh.write(EMB_MAGIC)
        fh.write(struct.pack("<I", len(tables)))
        for sid, arr in tables.items():
            arr32 = np.ascontiguousarray(arr, dtype="<f4")
            m, d = arr32.shape
            fh.write(struct.pack("<III", int(sid), m, d))
            fh.write(arr32.tobytes())


def load_precomputed(path) -> dict:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:len(EMB_MAGIC)] != EMB_MAGIC:
        raise EmbeddingFileError(f"{path}: bad magic, expected {EMB_MAGIC!r}")
    off = len(EMB_MAGIC)

    def take(n, what):
        nonlocal off
        if off + n > len(blob):
            raise EmbeddingFileError(f"{path}: truncated while reading {what} at byte {off}")
        piece = blob[off:off + n]
        off += n
        return piece

    (count,) = struct.unpack("<I", take(4, "sample count"))
    tables = {}
    for _ in range(count):
        sid, m, d = struct.unpack("<III", take(12, "sample header"))
        data = np.frombuffer(take(4 * m * d, f"sample {sid} data"), dtype="<f4")
        tables[sid] = data.reshape(m, d).astype(np.float64)
    if off != len(blob):
        raise EmbeddingFileError(f"{path}: {len(blob) - off} trailing bytes at byte {off}")
    return tables
