"""Run configuration: strict JSON parsing with documented defaults.

Defaults follow the reference training recipe: SGD lr 0.002 / momentum 0.9 /
weight decay 0.0005, batch 16, 5 base and 3 incremental epochs, top-K 3, and
20/3 key-prompt pairs for base/incremental sessions.  ``tau`` scales the
cosine logits; 1.0 is the literal formula, 16.0 is the documented
recommendation for desk-scale convergence.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from pathlib import Path

from .errors import ConfigError

KEYMAP_CHOICES = ("FC1", "FC2", "RES2")
SCOPE_CHOICES = ("current_only", "plus_keymap", "all_params")
INIT_CHOICES = ("embedding", "random")


@dataclass
class RunConfig:
    dim: int = 32
    ctx_len: int = 16
    seed: int = 0
    tau: float = 1.0
    pairs_base: int = 20
    pairs_inc: int = 3
    top_k: int = 3
    lr: float = 0.002
    momentum: float = 0.9
    weight_decay: float = 0.0005
    batch_size: int = 16
    epochs_base: int = 5
    epochs_inc: int = 3
    keymap: str = "FC1"
    update_scope: str = "current_only"
    init_strategy: str = "embedding"
    ways: int = 5
    shots: int = 5
    sessions: int = 9
    base_classes: int = 60
    train_features: str | None = None
    test_features: str | None = None
    token_embeddings: str | None = None
    synth_classes: int = 10
    synth_train_per_class: int = 30
    synth_test_per_class: int = 20
    synth_noise: float = 0.1

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


_INT_KEYS = {
    "dim", "ctx_len", "seed", "pairs_base", "pairs_inc", "top_k", "batch_size",
    "epochs_base", "epochs_inc", "ways", "shots", "sessions", "base_classes",
    "synth_classes", "synth_train_per_class", "synth_test_per_class",
}
_FLOAT_KEYS = {"tau", "lr", "momentum", "weight_decay", "synth_noise"}
_STR_KEYS = {"keymap", "update_scope", "init_strategy"}
_PATH_KEYS = {"train_features", "test_features", "token_embeddings"}


def config_from_dict(raw: dict) -> RunConfig:
    """Build a RunConfig, rejecting unknown keys and wrong types by name."""
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    cfg = RunConfig()
    for key, value in raw.items():
        if key in _INT_KEYS:
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigError(f"key {key!r} must be an integer, got {value!r}")
            setattr(cfg, key, value)
        elif key in _FLOAT_KEYS:
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"key {key!r} must be a number, got {value!r}")
            setattr(cfg, key, float(value))
        elif key in _STR_KEYS:
            if not isinstance(value, str):
                raise ConfigError(f"key {key!r} must be a string, got {value!r}")
            setattr(cfg, key, value)
        elif key in _PATH_KEYS:
            if value is not None and not isinstance(value, str):
                raise ConfigError(f"key {key!r} must be a path string, got {value!r}")
            setattr(cfg, key, value)
        else:
            raise ConfigError(f"unknown config key {key!r}")
    _validate(cfg)
    return cfg


def _validate(cfg: RunConfig) -> None:
    def positive(name):
        if getattr(cfg, name) <= 0:
            raise ConfigError(f"key {name!r} must be positive")

    for name in (
        "dim", "ctx_len", "tau", "pairs_base", "pairs_inc", "top_k", "batch_size",
        "ways", "shots", "sessions", "base_classes", "synth_classes",
        "synth_train_per_class", "synth_test_per_class",
    ):
        positive(name)
    for name in ("lr", "weight_decay", "synth_noise", "epochs_base", "epochs_inc"):
        if getattr(cfg, name) < 0:
            raise ConfigError(f"key {name!r} must be >= 0")
    if cfg.seed < 0:
        raise ConfigError("key 'seed' must be >= 0")
    if not 0.0 <= cfg.momentum < 1.0:
        raise ConfigError("key 'momentum' must be in [0, 1)")
    if cfg.keymap not in KEYMAP_CHOICES:
        raise ConfigError(f"key 'keymap' must be one of {KEYMAP_CHOICES}")
    if cfg.update_scope not in SCOPE_CHOICES:
        raise ConfigError(f"key 'update_scope' must be one of {SCOPE_CHOICES}")
    if cfg.init_strategy not in INIT_CHOICES:
        raise ConfigError(f"key 'init_strategy' must be one of {INIT_CHOICES}")


def parse_config(path: str | Path) -> RunConfig:
    """Parse a UTF-8 JSON config file into a validated RunConfig."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return config_from_dict(raw)
