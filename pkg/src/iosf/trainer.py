"""Session lifecycle: base and incremental training, freeze policy, protocol.

The base session optimizes the key-map together with its own class
embeddings, keys and prompts; incremental sessions optimize only the
current session's parameters (``update_scope`` widens this for the ablation
harness).  Every parameter outside the update set is digest-checked before
and after training; a mismatch is a hard freeze violation.  After each
session the live state is rounded through the checkpoint's 32-bit precision
so resumed and uninterrupted runs stay bit-identical.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from .autograd import Tensor, mean_of, no_grad, value_and_grad
from .classify import image_probabilities, sample_loss
from .config import RunConfig, config_from_dict
from .datasets import FscilSplit, make_fscil_splits
from .embfile import read_token_embeddings
from .encoders import RUN_TAG, ImageFeatureSource, TextEncoder, TokenEmbedding, load_image_features
from .errors import ConfigError, FormatError, FreezeViolationError, SetupError
from .metrics import (
    SessionAccuracy,
    SessionReport,
    accuracy_subset,
    emit_report,
    report_from_row,
)
from .optim import SgdState, sgd_step
from .promptmem import (
    ClassEntry,
    ClassTokenBank,
    KeyMap,
    KeyPromptPair,
    PromptMemory,
    init_key_prompt_pairs,
    init_random_pairs,
)

Sample = tuple[int, np.ndarray, int]  # (sample id, feature, class label)


@dataclass
class SessionState:
    session: int
    learnable: list[str]
    loss_trace: list[float]
    frozen_digests: dict[str, str] = field(default_factory=dict)


class Engine:
    """All live model state for one run."""

    def __init__(self, config: RunConfig):
        self.config = config
        self.encoder = TextEncoder(config.dim, config.ctx_len, config.seed)
        self.keymap = KeyMap(config.keymap, config.dim, config.seed)
        self.bank = ClassTokenBank(config.ctx_len, config.dim, config.seed)
        self.memory = PromptMemory()
        self.opt = SgdState(
            lr=config.lr, momentum=config.momentum, weight_decay=config.weight_decay
        )
        self.rng = np.random.default_rng(np.random.SeedSequence([config.seed, RUN_TAG]))
        self.trained_session = 0

    def named_params(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for name, tensor in self.keymap.params.items():
            out[f"keymap/{name}"] = tensor
        for t in sorted(self.bank.sessions):
            for entry in self.bank.sessions[t]:
                out[f"emb/s{t}/c{entry.class_id}"] = entry.embedding.matrix
        for t in sorted(self.memory.sessions):
            for pair in self.memory.sessions[t]:
                out[f"key/s{t}/p{pair.index_in_session}"] = pair.key
                out[f"prompt/s{t}/p{pair.index_in_session}"] = pair.prompt.matrix
        return out

    def _session_param_names(self, session: int) -> tuple[str, ...]:
        return (f"emb/s{session}/", f"key/s{session}/", f"prompt/s{session}/")

    def update_set(self, session: int) -> dict[str, Tensor]:
        """Learnable parameters for this session under the configured scope."""
        params = self.named_params()
        scope = self.config.update_scope
        if session > 1 and scope == "all_params":
            return params
        prefixes = self._session_param_names(session)
        chosen = {n: p for n, p in params.items() if n.startswith(prefixes)}
        if session == 1 or scope == "plus_keymap":
            chosen.update({n: p for n, p in params.items() if n.startswith("keymap/")})
        return chosen

    def digest_all(self) -> dict[str, str]:
        digests = {
            name: hashlib.sha256(t.data.tobytes()).hexdigest()
            for name, t in self.named_params().items()
        }
        digests["encoder"] = self.encoder.weights_digest()
        return digests

    def round_to_f32(self) -> None:
        """Snap every parameter and velocity to checkpoint (f32) precision."""
        for tensor in self.named_params().values():
            tensor.data = tensor.data.astype(np.float32).astype(np.float64)
        for name in self.opt.velocity:
            self.opt.velocity[name] = (
                self.opt.velocity[name].astype(np.float32).astype(np.float64)
            )


def _init_session(engine: Engine, session: int, classes, token_overrides) -> None:
    cfg = engine.config
    engine.bank.add_session(session, classes, token_overrides)
    n_pairs = cfg.pairs_base if session == 1 else cfg.pairs_inc
    if cfg.init_strategy == "embedding":
        pairs = init_key_prompt_pairs(session, n_pairs, engine.bank, engine.encoder, engine.rng)
    else:
        pairs = init_random_pairs(session, n_pairs, cfg.ctx_len, cfg.dim, engine.rng)
    engine.memory.add_session(session, pairs)


def train_session(
    engine: Engine,
    session: int,
    train_data: list[Sample],
    classes: list[tuple[int, str]],
    token_overrides: dict | None = None,
) -> SessionState:
    """Initialize and train one session; verifies the freeze invariant."""
    cfg = engine.config
    if session != engine.trained_session + 1:
        raise SetupError(
            f"session {session} cannot start after session {engine.trained_session}"
        )
    if not train_data:
        raise SetupError(f"session {session}: empty training set")
    if session > 1 and len(train_data) != cfg.ways * cfg.shots:
        raise SetupError(
            f"session {session}: expected {cfg.ways}x{cfg.shots} samples, "
            f"got {len(train_data)}"
        )
    _init_session(engine, session, classes, token_overrides)
    # fresh optimizer state per session: velocities never carry across
    # session boundaries, so later sessions cannot coast on earlier momentum
    engine.opt.velocity.clear()

    update = engine.update_set(session)
    for name, tensor in engine.named_params().items():
        tensor.requires_grad = name in update
    frozen_before = {
        name: digest
        for name, digest in engine.digest_all().items()
        if name not in update
    }

    epochs = cfg.epochs_base if session == 1 else cfg.epochs_inc
    trace: list[float] = []
    update_order = list(update)
    params = [update[name] for name in update_order]
    for _ in range(epochs):
        order = engine.rng.permutation(len(train_data))
        epoch_sum = 0.0
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            losses = [
                sample_loss(
                    train_data[i][1],
                    train_data[i][2],
                    engine.bank,
                    engine.memory,
                    engine.keymap,
                    engine.encoder,
                    cfg.tau,
                    cfg.top_k,
                    session,
                )
                for i in batch
            ]
            batch_loss = mean_of(losses)
            value, grads = value_and_grad(batch_loss, params)
            sgd_step(update, dict(zip(update_order, grads)), engine.opt)
            epoch_sum += value * len(batch)
        trace.append(epoch_sum / len(train_data))

    after = engine.digest_all()
    for name, digest in frozen_before.items():
        if after[name] != digest:
            raise FreezeViolationError(
                f"frozen parameter {name!r} changed during session {session}"
            )
    engine.trained_session = session
    return SessionState(session, sorted(update), trace, frozen_before)


def train_base_session(engine: Engine, train_data, classes, token_overrides=None) -> SessionState:
    if engine.trained_session != 0:
        raise SetupError("base session must be the first session trained")
    return train_session(engine, 1, train_data, classes, token_overrides)


def train_incremental_session(
    engine: Engine, session: int, train_data, classes, token_overrides=None
) -> SessionState:
    if session < 2:
        raise SetupError("incremental sessions start at 2")
    return train_session(engine, session, train_data, classes, token_overrides)


def evaluate_session(
    engine: Engine, session: int, test_data: list[Sample], split: FscilSplit
) -> SessionAccuracy:
    """Gradient-free evaluation over all classes seen through ``session``."""
    cfg = engine.config
    preds: list[int] = []
    truths: list[int] = []
    with no_grad():
        for _, feature, label in test_data:
            pv = image_probabilities(
                feature,
                engine.bank,
                engine.memory,
                engine.keymap,
                engine.encoder,
                cfg.tau,
                cfg.top_k,
                session,
            )
            preds.append(pv.class_ids[int(np.argmax(pv.values()))])
            truths.append(label)
    seen = split.classes_through(session)
    base_classes = split.sessions[0].classes
    overall = accuracy_subset(preds, truths, seen)
    base = accuracy_subset(preds, truths, base_classes)
    inc = None
    if session >= 2:
        inc_classes = [c for c in seen if c not in set(base_classes)]
        inc = accuracy_subset(preds, truths, inc_classes)
    per_class = {}
    for cid in seen:
        if any(t == cid for t in truths):
            per_class[cid] = accuracy_subset(preds, truths, [cid])
    return SessionAccuracy(session, overall, base, inc, per_class)


# -- checkpoints --------------------------------------------------------------

def save_engine(engine: Engine, path: str | Path) -> Path:
    tensors = {name: t.data for name, t in engine.named_params().items()}
    for name, vel in engine.opt.velocity.items():
        tensors[f"velocity/{name}"] = vel
    structure = {
        "sessions": [
            {
                "session": t,
                "classes": [
                    {
                        "id": e.class_id,
                        "name": e.name,
                        "valid_len": e.embedding.valid_len,
                    }
                    for e in engine.bank.sessions[t]
                ],
                "pairs": [
                    {
                        "index": p.index_in_session,
                        "prompt_valid_len": p.prompt.valid_len,
                    }
                    for p in engine.memory.sessions[t]
                ],
            }
            for t in sorted(engine.bank.sessions)
        ]
    }
    meta = {
        "kind": "iosf-checkpoint",
        "session": engine.trained_session,
        "config": engine.config.to_dict(),
        "prng": ckpt.prng_state_to_meta(engine.rng),
        "structure": structure,
    }
    return ckpt.write_container(path, meta, tensors)


def load_engine(path: str | Path) -> Engine:
    meta, tensors = ckpt.read_container(path)
    if meta.get("kind") != "iosf-checkpoint":
        raise FormatError(f"{path}: not an engine checkpoint")
    try:
        config = config_from_dict(meta["config"])
    except (KeyError, ConfigError) as exc:
        raise FormatError(f"{path}: bad config echo: {exc}") from exc
    engine = Engine(config)
    engine.rng = ckpt.prng_state_from_meta(meta["prng"])

    def take(name: str, shape: tuple[int, ...]) -> np.ndarray:
        if name not in tensors:
            raise FormatError(f"{path}: missing tensor {name!r}")
        arr = tensors[name]
        if arr.shape != shape:
            raise FormatError(
                f"{path}: tensor {name!r} has shape {arr.shape}, config implies {shape}"
            )
        return arr

    for sess in meta.get("structure", {}).get("sessions", []):
        t = sess["session"]
        entries = []
        for cls in sess["classes"]:
            mat = take(f"emb/s{t}/c{cls['id']}", (config.ctx_len, config.dim))
            entries.append(
                ClassEntry(
                    cls["id"], cls["name"], TokenEmbedding(Tensor(mat), cls["valid_len"])
                )
            )
        engine.bank.restore_session(t, entries)
        pairs = []
        for rec in sess["pairs"]:
            key = take(f"key/s{t}/p{rec['index']}", (config.dim,))
            prompt = take(f"prompt/s{t}/p{rec['index']}", (config.ctx_len, config.dim))
            pairs.append(
                KeyPromptPair(
                    Tensor(key),
                    TokenEmbedding(Tensor(prompt), rec["prompt_valid_len"]),
                    t,
                    rec["index"],
                )
            )
        engine.memory.add_session(t, pairs)
    for name in engine.keymap.params:
        engine.keymap.params[name].data = take(
            f"keymap/{name}", engine.keymap.params[name].data.shape
        )
    for name, arr in tensors.items():
        if name.startswith("velocity/"):
            engine.opt.velocity[name[len("velocity/") :]] = arr
    engine.trained_session = int(meta["session"])
    return engine


# -- protocol ------------------------------------------------------------------

def _load_sources(config: RunConfig, train_source, test_source):
    if train_source is None:
        if not config.train_features:
            raise ConfigError("config key 'train_features' is required to run")
        train_source = load_image_features(config.train_features)
    if test_source is None:
        if not config.test_features:
            raise ConfigError("config key 'test_features' is required to run")
        test_source = load_image_features(config.test_features)
    for source in (train_source, test_source):
        if source.dim != config.dim:
            raise SetupError(
                f"feature dim {source.dim} does not match config dim {config.dim}"
            )
    return train_source, test_source


def _load_token_overrides(config: RunConfig):
    if not config.token_embeddings:
        return None
    ctx_len, dim, table = read_token_embeddings(config.token_embeddings)
    if ctx_len != config.ctx_len or dim != config.dim:
        raise SetupError(
            f"token embedding file is ({ctx_len}, {dim}), config wants "
            f"({config.ctx_len}, {config.dim})"
        )
    return table


def _build_split(config: RunConfig, train_source, test_source) -> FscilSplit:
    return make_fscil_splits(
        train_source.labels_by_sample(),
        test_source.labels_by_sample(),
        config.base_classes,
        config.ways,
        config.shots,
        config.sessions,
        config.seed,
    )


def _run_sessions(
    engine: Engine,
    split: FscilSplit,
    train_source: ImageFeatureSource,
    test_source: ImageFeatureSource,
    first_session: int,
    out_dir: Path | None,
    token_overrides,
) -> tuple[list[SessionReport], list[dict]]:
    config = engine.config
    names = dict(train_source.class_names)
    reports: list[SessionReport] = []
    timings: list[dict] = []
    for t in range(first_session, config.sessions + 1):
        started = time.perf_counter()
        part = split.sessions[t - 1]
        classes = [(cid, names.get(cid, f"class_{cid}")) for cid in part.classes]
        # only the current session's training rows are ever fetched
        train_data = [
            (sid, train_source.feature(sid), train_source.label(sid))
            for sid in part.train_ids
        ]
        state = train_session(engine, t, train_data, classes, token_overrides)
        del train_data
        if out_dir is not None:
            save_engine(engine, out_dir / "checkpoints" / f"session_{t}.iosc")
        engine.round_to_f32()
        test_data = [
            (sid, test_source.feature(sid), test_source.label(sid))
            for sid in part.test_ids
        ]
        accuracy = evaluate_session(engine, t, test_data, split)
        reports.append(
            SessionReport(t, len(split.classes_through(t)), accuracy, state.loss_trace)
        )
        timings.append({"session": t, "seconds": time.perf_counter() - started})
    return reports, timings


def _write_run_outputs(
    config: RunConfig, reports: list[SessionReport], timings: list[dict], out_dir: Path
) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.json").write_text(
        json.dumps(config.to_dict(), sort_keys=True, indent=1) + "\n", encoding="utf-8"
    )
    for fmt in ("json", "csv", "plotdata"):
        emit_report(reports, out_dir / "reports" / f"report.{fmt}", fmt, config.digest())
    # wall-clock is intentionally outside the deterministic report files
    (out_dir / "timings.json").write_text(
        json.dumps({"sessions": timings}, indent=1) + "\n", encoding="utf-8"
    )


def run_protocol(
    config: RunConfig,
    out_dir: str | Path | None = None,
    train_source: ImageFeatureSource | None = None,
    test_source: ImageFeatureSource | None = None,
) -> list[SessionReport]:
    """Train and evaluate all sessions in order; emits run artifacts if asked."""
    train_source, test_source = _load_sources(config, train_source, test_source)
    split = _build_split(config, train_source, test_source)
    token_overrides = _load_token_overrides(config)
    engine = Engine(config)
    out = Path(out_dir) if out_dir is not None else None
    reports, timings = _run_sessions(
        engine, split, train_source, test_source, 1, out, token_overrides
    )
    if out is not None:
        _write_run_outputs(config, reports, timings, out)
    return reports


def resume_protocol(checkpoint_path: str | Path, out_dir: str | Path | None = None) -> list[SessionReport]:
    """Continue a checkpointed run through its final session.

    Earlier sessions' report rows are lifted from the original run directory
    (the checkpoint's ``../..``), so the merged report matches an
    uninterrupted run byte for byte.
    """
    ckpt_path = Path(checkpoint_path)
    engine = load_engine(ckpt_path)
    config = engine.config
    done = engine.trained_session
    run_dir = ckpt_path.parent.parent
    prior_path = run_dir / "reports" / "report.json"
    if not prior_path.is_file():
        raise SetupError(f"cannot resume: no prior report at {prior_path}")
    prior_doc = json.loads(prior_path.read_text(encoding="utf-8"))
    prior = [report_from_row(row) for row in prior_doc["sessions"] if row["session"] <= done]
    if len(prior) != done:
        raise SetupError(
            f"prior report covers {len(prior)} sessions, checkpoint is at {done}"
        )

    train_source, test_source = _load_sources(config, None, None)
    split = _build_split(config, train_source, test_source)
    token_overrides = _load_token_overrides(config)
    out = Path(out_dir) if out_dir is not None else None
    reports, timings = _run_sessions(
        engine, split, train_source, test_source, done + 1, out, token_overrides
    )
    merged = prior + reports
    if out is not None:
        _write_run_outputs(config, merged, timings, out)
    return merged


def eval_checkpoint(checkpoint_path: str | Path) -> SessionReport:
    """Re-evaluate a checkpoint on its session's test split (gradients off).

    Loading already restores the 32-bit-rounded state that training-time
    evaluation saw, so the accuracies match the stored report exactly.
    """
    engine = load_engine(checkpoint_path)
    config = engine.config
    t = engine.trained_session
    if t < 1:
        raise SetupError("checkpoint has no trained session to evaluate")
    train_source, test_source = _load_sources(config, None, None)
    split = _build_split(config, train_source, test_source)
    part = split.sessions[t - 1]
    test_data = [
        (sid, test_source.feature(sid), test_source.label(sid)) for sid in part.test_ids
    ]
    accuracy = evaluate_session(engine, t, test_data, split)
    return SessionReport(t, len(split.classes_through(t)), accuracy, [])
