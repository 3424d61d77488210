"""Shared builders for engine and training-run tests."""

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from iosf.config import RunConfig
from iosf.datasets import SyntheticSpec, gen_synthetic
from iosf.promptmem import init_key_prompt_pairs
from iosf.trainer import Engine

CLASS_WORDS = [
    "ant", "bee", "cat", "dog", "elk", "fox", "gnu", "hen", "ibis", "jay",
    "koi", "lynx", "mole", "newt", "owl", "pika", "quail", "rat", "seal", "toad",
]


def build_engine(
    dim=4,
    ctx_len=6,
    seed=1,
    classes_per_session=(3,),
    pairs_per_session=(3,),
    variant="FC1",
    learnable=True,
):
    """Engine with initialized sessions but no training steps taken."""
    cfg = RunConfig(
        dim=dim,
        ctx_len=ctx_len,
        seed=seed,
        keymap=variant,
        pairs_base=pairs_per_session[0],
        pairs_inc=pairs_per_session[-1],
        sessions=len(classes_per_session),
    )
    engine = Engine(cfg)
    next_id = 0
    for t, (n_classes, n_pairs) in enumerate(
        zip(classes_per_session, pairs_per_session), start=1
    ):
        classes = [(next_id + i, CLASS_WORDS[next_id + i]) for i in range(n_classes)]
        next_id += n_classes
        engine.bank.add_session(t, classes)
        pairs = init_key_prompt_pairs(t, n_pairs, engine.bank, engine.encoder, engine.rng)
        engine.memory.add_session(t, pairs)
    if learnable:
        for tensor in engine.named_params().values():
            tensor.requires_grad = True
    return engine


def engine_to_straightline(engine):
    """Extract plain arrays for the straight-line oracle."""
    sessions = []
    for t in sorted(engine.bank.sessions):
        sessions.append(
            {
                "classes": [
                    (e.class_id, e.embedding.matrix.data.copy())
                    for e in engine.bank.sessions[t]
                ],
                "pairs": [
                    (p.key.data.copy(), p.prompt.matrix.data.copy())
                    for p in engine.memory.sessions[t]
                ],
            }
        )
    keymap = {"variant": engine.keymap.variant}
    keymap.update({k: v.data.copy() for k, v in engine.keymap.params.items()})
    enc = engine.encoder
    encoder = {
        "w1": enc.w1.data.copy(),
        "b1": enc.b1.data.copy(),
        "w2": enc.w2.data.copy(),
        "b2": enc.b2.data.copy(),
    }
    return sessions, keymap, encoder


def benchmark_config(data_root: Path, seed: int, **overrides) -> RunConfig:
    """Synthetic benchmark: D=32, 6 base + 2x2 incremental classes, 5-shot.

    The dataset seed follows the run seed so seed sweeps vary the whole
    pipeline; datasets are cached per seed under ``data_root``.
    """
    cfg = RunConfig(
        dim=32,
        ctx_len=8,
        seed=seed,
        tau=16.0,
        ways=2,
        shots=5,
        sessions=3,
        base_classes=6,
        synth_classes=10,
        synth_train_per_class=8,
        synth_test_per_class=60,
        synth_noise=0.1,
    )
    for key, value in overrides.items():
        setattr(cfg, key, value)
    data_dir = data_root / (
        f"synth_seed{cfg.seed}_d{cfg.dim}_c{cfg.synth_classes}"
        f"_tr{cfg.synth_train_per_class}_te{cfg.synth_test_per_class}_n{cfg.synth_noise}"
    )
    if not (data_dir / "train").exists():
        spec = SyntheticSpec(
            classes=cfg.synth_classes,
            train_per_class=cfg.synth_train_per_class,
            test_per_class=cfg.synth_test_per_class,
            dim=cfg.dim,
            noise=cfg.synth_noise,
            seed=cfg.seed,
            ctx_len=cfg.ctx_len,
        )
        gen_synthetic(spec, data_dir)
    cfg.train_features = str(data_dir / "train")
    cfg.test_features = str(data_dir / "test")
    return cfg


@pytest.fixture(scope="session")
def synth_data_root(tmp_path_factory):
    return tmp_path_factory.mktemp("synth_data")
