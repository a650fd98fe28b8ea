"""Orthogonal attention layers and a negation scope resolution pipeline."""

__version__ = "0.1.0"

from .tensor import RngState, ShapeError, Tensor, backward, no_grad
from .ortho import OAConfig, OAEncoderState, oa_encoder_block, oa_head, oa_multihead
from .attention import dot_product_attention, multihead_self_attention
from .backbone import BackboneSpec, TokenSequence
from .model import ScopeModel, count_parameters
from .corpus import ScopeSample, preprocess, read_jsonl, synthetic_corpus, write_jsonl
from .training import TrainConfig, run_cv, token_f1

__all__ = [
    "RngState", "ShapeError", "Tensor", "backward", "no_grad",
    "OAConfig", "OAEncoderState", "oa_encoder_block", "oa_head", "oa_multihead",
    "dot_product_attention", "multihead_self_attention",
    "BackboneSpec", "TokenSequence", "ScopeModel", "count_parameters",
    "ScopeSample", "preprocess", "read_jsonl", "synthetic_corpus", "write_jsonl",
    "TrainConfig", "run_cv", "token_f1",
]
