"""Text-side embedding machinery and the image-feature source.

The tokenizer is hash-based: each whitespace token maps to a deterministic
pseudo-random vector keyed by (seed, FNV-1a hash of the token), so the same
text always embeds to the same padded matrix.  The reference text encoder is
a frozen two-layer tanh map over the row-mean of the full padded matrix --
paddings included, so an added bias matrix acts uniformly.  Image features
come precomputed from IOSF-EMB files.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from . import embfile
from .autograd import Tensor, add, matvec, mean_rows, tanh
from .errors import CapacityError, ContractError

# SeedSequence domain tags; keep disjoint from token hashes by construction
ENCODER_TAG = 0x7445_6E63  # "tEnc"
KEYMAP_TAG = 0x6B4D_6170   # "kMap"
SYNTH_TAG = 0x7379_6E74    # "synt"
SPLIT_TAG = 0x7370_6C74    # "splt"
RUN_TAG = 0x7472_6169      # "trai"

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_U64 = 0xFFFFFFFFFFFFFFFF


def fnv1a64(data: bytes) -> int:
    h = _FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * _FNV_PRIME) & _U64
    return h


@dataclass
class TokenEmbedding:
    """Padded ctx_len x dim token matrix with its unpadded length."""

    matrix: Tensor
    valid_len: int

    def __post_init__(self):
        if self.matrix.data.ndim != 2:
            raise ContractError("token embedding must be a matrix")
        if not 1 <= self.valid_len <= self.ctx_len:
            raise ContractError(
                f"valid_len {self.valid_len} outside [1, {self.ctx_len}]"
            )

    @property
    def ctx_len(self) -> int:
        return self.matrix.data.shape[0]

    @property
    def dim(self) -> int:
        return self.matrix.data.shape[1]


def token_vector(token: str, seed: int, dim: int) -> np.ndarray:
    """Deterministic embedding row for one token: uniform(-1, 1)/sqrt(dim)."""
    h = fnv1a64(token.encode("utf-8"))
    rng = np.random.default_rng(np.random.SeedSequence([seed, h]))
    return rng.uniform(-1.0, 1.0, dim) / np.sqrt(dim)


def tokenize_embed(text: str, seed: int, ctx_len: int, dim: int) -> TokenEmbedding:
    """Lowercase, whitespace-split and embed ``text`` into a padded matrix."""
    tokens = text.strip().lower().split()
    if not tokens:
        raise ValueError("cannot tokenize empty text")
    if len(tokens) > ctx_len:
        raise CapacityError(
            f"{len(tokens)} tokens exceed context length {ctx_len}: {text!r}"
        )
    matrix = np.zeros((ctx_len, dim), dtype=np.float64)
    for row, token in enumerate(tokens):
        matrix[row] = token_vector(token, seed, dim)
    return TokenEmbedding(matrix=Tensor(matrix), valid_len=len(tokens))


class TextEncoder:
    """Frozen reference text encoder: W2 . tanh(W1 . mean_rows(E) + b1) + b2.

    Weights are drawn once from a seeded PRNG and never trained; gradients
    flow through the encoder into its input but never into the weights.
    """

    def __init__(self, dim: int, ctx_len: int, seed: int):
        self.dim = dim
        self.ctx_len = ctx_len
        self.seed = seed
        rng = np.random.default_rng(np.random.SeedSequence([seed, ENCODER_TAG]))
        bound = 1.0 / np.sqrt(dim)
        self.w1 = Tensor(rng.uniform(-bound, bound, (dim, dim)))
        self.b1 = Tensor(rng.uniform(-bound, bound, dim))
        self.w2 = Tensor(rng.uniform(-bound, bound, (dim, dim)))
        self.b2 = Tensor(rng.uniform(-bound, bound, dim))

    def encode(self, emb: TokenEmbedding | Tensor) -> Tensor:
        matrix = emb.matrix if isinstance(emb, TokenEmbedding) else emb
        if matrix.data.shape != (self.ctx_len, self.dim):
            raise ContractError(
                f"expected {(self.ctx_len, self.dim)} matrix, got {matrix.data.shape}"
            )
        pooled = mean_rows(matrix)
        hidden = tanh(add(matvec(self.w1, pooled), self.b1))
        return add(matvec(self.w2, hidden), self.b2)

    def encode_value(self, matrix: np.ndarray) -> np.ndarray:
        """Plain-array forward, for graph-free consumers (pair initialization)."""
        pooled = matrix.mean(axis=0)
        hidden = np.tanh(self.w1.data @ pooled + self.b1.data)
        return self.w2.data @ hidden + self.b2.data

    def weights_digest(self) -> str:
        h = hashlib.sha256()
        for t in (self.w1, self.b1, self.w2, self.b2):
            h.update(t.data.tobytes())
        return h.hexdigest()


class ImageFeatureSource:
    """Labeled D-dimensional features standing in for image-encoder outputs."""

    def __init__(self, data: embfile.EmbeddingData):
        self._data = data

    @property
    def dim(self) -> int:
        return self._data.dim

    @property
    def count(self) -> int:
        return self._data.count

    @property
    def class_names(self) -> dict[int, str]:
        return self._data.class_names

    def feature(self, sample_id: int) -> np.ndarray:
        return self._data.features[sample_id]

    def label(self, sample_id: int) -> int:
        return int(self._data.labels[sample_id])

    def labels_by_sample(self) -> dict[int, int]:
        return {i: int(lbl) for i, lbl in enumerate(self._data.labels)}


def load_image_features(path) -> ImageFeatureSource:
    """Load an IOSF-EMB directory into an in-memory feature source."""
    return ImageFeatureSource(embfile.read_embeddings(path))
