"""The full scope-resolution model: backbone embeddings, two orthogonal
attention encoder blocks queried by the cue-token rows, a residual back to
the raw embeddings, and a two-way token classifier."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .backbone import BackboneSpec, TokenSequence, build_backbone
from .checkpoint import load_checkpoint, restore_into, save_checkpoint
from .ortho import OAConfig, OAEncoderState, oa_encoder_block
from .tensor import (RngState, ShapeError, Tensor, add, dropout, gather_pairs,
                     gather_rows, linear, log_softmax, mean, parameter, scale,
                     softmax)


@dataclass
class Prediction:
    probs: np.ndarray   # [m, 2], rows sum to 1
    labels: np.ndarray  # argmax per token
    logits: Tensor = field(repr=False, default=None)


@dataclass
class ScopeModel:
    config: OAConfig
    backbone_spec: BackboneSpec
    backbone: object = field(repr=False, default=None)
    block1: OAEncoderState = field(repr=False, default=None)
    block2: OAEncoderState = field(repr=False, default=None)
    classifier_w: Tensor = field(repr=False, default=None)
    classifier_b: Tensor = field(repr=False, default=None)
    rng: RngState = field(repr=False, default=None)

    @classmethod
    def init(cls, config: OAConfig, backbone_spec: BackboneSpec, seed: int):
        if backbone_spec.d != config.d:
            raise ShapeError(f"backbone d={backbone_spec.d} != model d={config.d}")
        rng = RngState(seed)
        backbone = build_backbone(backbone_spec, rng.derive(1))
        block1 = OAEncoderState.init(config, rng.derive(2))
        block2 = OAEncoderState.init(config, rng.derive(3))
        # classifier starts at zero so initial label margins come only from training
        classifier_w = parameter(np.zeros((2, config.d)))
        classifier_b = parameter(np.zeros(2))
        return cls(config=config, backbone_spec=backbone_spec, backbone=backbone,
                   block1=block1, block2=block2, classifier_w=classifier_w,
                   classifier_b=classifier_b, rng=rng.derive(4))

    # -- forward ------------------------------------------------------------

    def forward(self, seq: TokenSequence, training: bool = False) -> Tensor:
        """Token logits [m, 2] for one sample."""
        if not seq.cue_ids:
            raise ShapeError("cueless sample: forward needs at least one cue token")
        p = self.config.dropout_p
        cue = np.asarray(seq.cue_ids)
        x1 = self.backbone.embed(seq, training)
        x2 = dropout(x1, p, self.rng, training)
        x3 = oa_encoder_block(x2, gather_rows(x2, cue), self.block1, self.config,
                              training, self.rng)
        x4 = oa_encoder_block(x3, gather_rows(x3, cue), self.block2, self.config,
                              training, self.rng)
        x5 = dropout(x4, p, self.rng, training)
        x6 = add(x5, x1)
        x7 = dropout(x6, p, self.rng, training)
        return linear(x7, self.classifier_w, self.classifier_b)

    def predict(self, seq: TokenSequence) -> Prediction:
        logits = self.forward(seq, training=False)
        probs = softmax(logits, axis=-1).data
        return Prediction(probs=probs, labels=probs.argmax(axis=1), logits=logits)

    def loss(self, logits: Tensor, labels) -> Tensor:
        """Mean token-wise cross-entropy against {0, 1} labels."""
        labels = np.asarray(labels)
        if labels.shape[0] != logits.shape[0]:
            raise ShapeError(f"{labels.shape[0]} labels for {logits.shape[0]} tokens")
        if not np.isin(labels, (0, 1)).all():
            raise ValueError("labels must be 0 or 1")
        picked = gather_pairs(log_softmax(logits, axis=-1), labels)
        return scale(mean(picked), -1.0)

    # -- parameters ---------------------------------------------------------

    def named_parameters(self) -> dict:
        out = {}
        out.update(self.backbone.named("backbone"))
        out.update(self.block1.named("block1"))
        out.update(self.block2.named("block2"))
        out["classifier.w"] = self.classifier_w
        out["classifier.b"] = self.classifier_b
        return out

    def parameter_groups(self) -> dict:
        """Backbone parameters versus attention/classifier parameters; the
        two groups train under different learning rates."""
        named = self.named_parameters()
        backbone = {k: v for k, v in named.items() if k.startswith("backbone.")}
        rest = {k: v for k, v in named.items() if not k.startswith("backbone.")}
        return {"backbone": backbone, "oa": rest}

    def snapshot(self) -> dict:
        return {k: v.data.copy() for k, v in self.named_parameters().items()}

    def restore(self, snap: dict) -> None:
        for k, v in self.named_parameters().items():
            v.data[...] = snap[k]

    def save(self, path) -> None:
        save_checkpoint(path, self.named_parameters())

    def load(self, path) -> None:
        restore_into(self.named_parameters(), load_checkpoint(path), path=str(path))


def count_parameters(obj) -> dict:
    """Exact per-component parameter counts.

    Accepts a ScopeModel (counts backbone, both blocks, classifier) or a
    bare OAEncoderState.
    """
    if isinstance(obj, OAEncoderState):
        return {"oa_block": sum(p.size for p in obj.named("b").values())}
    counts = {
        "backbone": sum(p.size for p in obj.backbone.named("backbone").values()),
        "oa_block_1": sum(p.size for p in obj.block1.named("block1").values()),
        "oa_block_2": sum(p.size for p in obj.block2.named("block2").values()),
        "classifier": obj.classifier_w.size + obj.classifier_b.size,
    }
    counts["total"] = sum(counts.values())
    return counts
