"""Desk-scale few-shot class-incremental learning engine.

Image features retrieve key-prompt pairs from a growing memory; the
weighted prompts bias class token embeddings, a frozen text encoder turns
them into per-image classifiers, and sessions train with an exact freeze
policy so earlier knowledge stays byte-identical.
"""

from .autograd import Tensor, cosine_sim, cross_entropy, finite_diff_grad, no_grad, softmax, value_and_grad
from .config import RunConfig, parse_config
from .datasets import FscilSplit, SyntheticSpec, gen_synthetic, make_fscil_splits
from .encoders import ImageFeatureSource, TextEncoder, TokenEmbedding, load_image_features, tokenize_embed
from .metrics import AccuracyCell, MetricSummary, SessionAccuracy, SessionReport, summarize
from .optim import SgdState, sgd_step
from .trainer import Engine, eval_checkpoint, load_engine, resume_protocol, run_protocol, save_engine

__version__ = "0.1.0"

__all__ = [
    "AccuracyCell",
    "Engine",
    "FscilSplit",
    "ImageFeatureSource",
    "MetricSummary",
    "RunConfig",
    "SessionAccuracy",
    "SessionReport",
    "SgdState",
    "SyntheticSpec",
    "Tensor",
    "TextEncoder",
    "TokenEmbedding",
    "cosine_sim",
    "cross_entropy",
    "eval_checkpoint",
    "finite_diff_grad",
    "gen_synthetic",
    "load_engine",
    "load_image_features",
    "make_fscil_splits",
    "no_grad",
    "parse_config",
    "resume_protocol",
    "run_protocol",
    "save_engine",
    "sgd_step",
    "softmax",
    "summarize",
    "tokenize_embed",
    "value_and_grad",
]
