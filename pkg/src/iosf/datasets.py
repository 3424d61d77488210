"""FSCIL split construction and the synthetic embedding-dataset generator.

A split partitions classes into one data-rich base session plus N-way K-shot
incremental sessions with disjoint classes; each session's test set covers
every class seen so far.  The synthetic generator writes IOSF-EMB train/test
directories of unit-prototype Gaussians so the whole engine can run without
any real encoder.

Prototypes are paired with the text side: each class prototype is the
centered, normalized direction of the frozen text encoder's output for that
class's prompt.  Real vision-language checkpoints pair their image and text
encoders contrastively, so text-derived classifiers start roughly aligned
with image features; the generator reproduces that property at desk scale
(generate and train with the same seed to keep the pairing).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import embfile
from .encoders import SPLIT_TAG, SYNTH_TAG, TextEncoder, tokenize_embed
from .errors import SetupError


@dataclass
class SyntheticSpec:
    classes: int
    train_per_class: int
    test_per_class: int
    dim: int
    noise: float = 0.1
    seed: int = 0
    ctx_len: int = 16


# strength of the shared-attribute component mixed into every prototype;
# high enough that classes genuinely compete over shared structure, low
# enough that the class-specific direction still decides
ATTRIBUTE_BLEND = 3.5


def class_prototypes(spec: SyntheticSpec) -> np.ndarray:
    """Unit prototypes: text-paired class directions plus shared attributes.

    The per-class part is the centered text-encoder output of the class
    prompt, so text-derived classifiers start aligned with image features.
    Each class also carries a blend of object-attribute directions shared
    across classes, the way real classes share visual parts; that overlap is
    what makes wide-scope incremental updates able to damage earlier classes.
    """
    encoder = TextEncoder(spec.dim, spec.ctx_len, spec.seed)
    raw = np.empty((spec.classes, spec.dim), dtype=np.float64)
    for cid in range(spec.classes):
        emb = tokenize_embed(f"a photo of a class_{cid:03d}", spec.seed, spec.ctx_len, spec.dim)
        raw[cid] = encoder.encode_value(emb.matrix.data)
    centered = raw - raw.mean(axis=0, keepdims=True)
    class_part = centered / np.linalg.norm(centered, axis=1, keepdims=True)

    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, SYNTH_TAG, 1]))
    n_attrs = max(2, spec.classes // 3)
    attrs = rng.normal(size=(n_attrs, spec.dim))
    attrs /= np.linalg.norm(attrs, axis=1, keepdims=True)
    protos = np.empty_like(class_part)
    for cid in range(spec.classes):
        picks = rng.choice(n_attrs, size=min(2, n_attrs), replace=False)
        weights = rng.uniform(0.5, 1.0, size=len(picks))
        mix = weights @ attrs[picks]
        mix /= np.linalg.norm(mix)
        protos[cid] = class_part[cid] + ATTRIBUTE_BLEND * mix
    return protos / np.linalg.norm(protos, axis=1, keepdims=True)


def gen_synthetic(spec: SyntheticSpec, out_dir: str | Path) -> tuple[Path, Path]:
    """Generate train/ and test/ IOSF-EMB directories; returns their paths."""
    if spec.noise < 0:
        raise ValueError(f"noise must be >= 0, got {spec.noise}")
    if spec.classes < 1 or spec.train_per_class < 1 or spec.test_per_class < 1:
        raise ValueError("class and per-class sample counts must be positive")
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, SYNTH_TAG, 2]))
    protos = class_prototypes(spec)

    def sample_block(per_class: int) -> tuple[list[int], np.ndarray]:
        labels: list[int] = []
        rows = np.empty((spec.classes * per_class, spec.dim), dtype=np.float64)
        pos = 0
        for cid in range(spec.classes):
            if spec.noise == 0.0:
                block = np.repeat(protos[cid][None, :], per_class, axis=0)
            else:
                block = protos[cid] + spec.noise * rng.normal(size=(per_class, spec.dim))
                block /= np.linalg.norm(block, axis=1, keepdims=True)
            rows[pos : pos + per_class] = block
            labels.extend([cid] * per_class)
            pos += per_class
        return labels, rows

    class_names = {cid: f"class_{cid:03d}" for cid in range(spec.classes)}
    out = Path(out_dir)
    train_labels, train_rows = sample_block(spec.train_per_class)
    test_labels, test_rows = sample_block(spec.test_per_class)
    notes = f"synthetic prototypes, noise={spec.noise}, seed={spec.seed}"
    train_dir = embfile.write_embeddings(out / "train", train_labels, train_rows, class_names, notes)
    test_dir = embfile.write_embeddings(out / "test", test_labels, test_rows, class_names, notes)
    return train_dir, test_dir


@dataclass
class SessionSplit:
    session: int            # 1-based
    classes: list[int]      # class ids owned by this session, ascending
    train_ids: list[int]    # sample ids in the train pool
    test_ids: list[int]     # sample ids in the test pool, classes seen so far


@dataclass
class FscilSplit:
    sessions: list[SessionSplit]

    def classes_through(self, session: int) -> list[int]:
        out: list[int] = []
        for s in self.sessions[:session]:
            out.extend(s.classes)
        return out


def make_fscil_splits(
    train_labels: dict[int, int],
    test_labels: dict[int, int],
    base_classes: int,
    ways: int,
    shots: int,
    sessions: int,
    seed: int,
) -> FscilSplit:
    """Partition classes into disjoint sessions and draw the K-shot train sets.

    The base session keeps every training sample of its classes; incremental
    sessions get exactly ``shots`` seeded samples per class.  Test sets keep
    all test samples of the classes seen so far.
    """
    all_classes = sorted(set(train_labels.values()))
    needed = base_classes + (sessions - 1) * ways
    if sessions < 1 or base_classes < 1:
        raise SetupError("need at least one session and one base class")
    if needed > len(all_classes):
        raise SetupError(
            f"{needed} classes required for base {base_classes} + "
            f"{sessions - 1} x {ways}-way sessions, dataset has {len(all_classes)}"
        )
    rng = np.random.default_rng(np.random.SeedSequence([seed, SPLIT_TAG]))
    order = [all_classes[i] for i in rng.permutation(len(all_classes))]

    session_classes = [sorted(order[:base_classes])]
    cursor = base_classes
    for _ in range(1, sessions):
        session_classes.append(sorted(order[cursor : cursor + ways]))
        cursor += ways

    train_by_class: dict[int, list[int]] = {}
    for sid in sorted(train_labels):
        train_by_class.setdefault(train_labels[sid], []).append(sid)
    test_by_class: dict[int, list[int]] = {}
    for sid in sorted(test_labels):
        test_by_class.setdefault(test_labels[sid], []).append(sid)

    splits = []
    seen: list[int] = []
    for t, classes in enumerate(session_classes, start=1):
        seen.extend(classes)
        if t == 1:
            train_ids = [sid for cid in classes for sid in train_by_class.get(cid, [])]
            if not train_ids:
                raise SetupError("base session has no training samples")
        else:
            train_ids = []
            for cid in classes:
                pool = train_by_class.get(cid, [])
                if len(pool) < shots:
                    raise SetupError(
                        f"class {cid} has {len(pool)} train samples, needs {shots} shots"
                    )
                chosen = rng.choice(len(pool), size=shots, replace=False)
                train_ids.extend(sorted(pool[i] for i in chosen))
        test_ids = [sid for cid in sorted(seen) for sid in test_by_class.get(cid, [])]
        splits.append(SessionSplit(t, list(classes), train_ids, sorted(test_ids)))
    return FscilSplit(splits)
