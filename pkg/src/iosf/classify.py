"""Per-image textual classifiers, all-seen-class logits, and the sample loss.

Classifiers are regenerated per image because the prompt bias depends on the
image; the probability vector always spans every class seen so far, ordered
session-ascending then class-position-ascending.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autograd import Tensor, add, cosine_sim, cross_entropy, scale, softmax, stack
from .encoders import TextEncoder, TokenEmbedding
from .errors import SetupError
from .promptmem import ClassTokenBank, KeyMap, PromptMemory, make_bias, pair_similarities, prompt_weights, topk_2d


@dataclass
class ClassifierEntry:
    session: int
    class_id: int
    vector: Tensor


@dataclass
class ClassifierSet:
    entries: list[ClassifierEntry]
    conditioned_on: int | None = None  # sample id the bias came from

    def class_ids(self) -> list[int]:
        return [e.class_id for e in self.entries]


@dataclass
class ProbVector:
    probs: Tensor
    class_ids: list[int]

    def values(self) -> np.ndarray:
        return self.probs.data


def gen_classifiers(
    bias: TokenEmbedding,
    bank: ClassTokenBank,
    through_session: int,
    encoder: TextEncoder,
    conditioned_on: int | None = None,
) -> ClassifierSet:
    """Encode bias-shifted class embeddings for every class seen so far."""
    entries = bank.entries_through(through_session)
    if not entries:
        raise SetupError("class bank is empty")
    out = []
    for session, entry in entries:
        shifted = add(bias.matrix, entry.embedding.matrix)
        out.append(ClassifierEntry(session, entry.class_id, encoder.encode(shifted)))
    return ClassifierSet(out, conditioned_on)


def class_logits(feature: Tensor, classifiers: ClassifierSet, tau: float) -> ProbVector:
    """Softmax over tau-scaled cosine similarities against all seen classes."""
    if tau <= 0:
        raise ValueError(f"tau must be positive, got {tau}")
    if float(np.linalg.norm(feature.data)) == 0.0:
        raise ValueError("zero image feature has no direction to classify")
    sims = stack([cosine_sim(feature, e.vector) for e in classifiers.entries])
    probs = softmax(scale(sims, tau))
    return ProbVector(probs, classifiers.class_ids())


def image_probabilities(
    feature_value: np.ndarray,
    bank: ClassTokenBank,
    memory: PromptMemory,
    keymap: KeyMap,
    encoder: TextEncoder,
    tau: float,
    top_k: int,
    through_session: int,
    sample_id: int | None = None,
) -> ProbVector:
    """Full per-image forward pass: key, retrieval, bias, classifiers, logits."""
    feature = Tensor(feature_value)
    key = keymap.apply(feature)
    sims = pair_similarities(key.data, memory, through_session)
    selection = topk_2d(sims, top_k)
    weights = prompt_weights(selection, key, memory)
    bias = make_bias(selection, weights, memory)
    classifiers = gen_classifiers(bias, bank, through_session, encoder, sample_id)
    return class_logits(feature, classifiers, tau)


def sample_loss(
    feature_value: np.ndarray,
    label: int,
    bank: ClassTokenBank,
    memory: PromptMemory,
    keymap: KeyMap,
    encoder: TextEncoder,
    tau: float,
    top_k: int,
    through_session: int,
) -> Tensor:
    """Cross-entropy of the true class under the per-image classifier head."""
    probs = image_probabilities(
        feature_value, bank, memory, keymap, encoder, tau, top_k, through_session
    )
    try:
        target = probs.class_ids.index(label)
    except ValueError:
        raise SetupError(f"label {label} is not among the classes seen so far") from None
    return cross_entropy(probs.probs, target)
