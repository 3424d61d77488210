"""Class token bank, key-prompt memory, retrieval, and bias synthesis.

Retrieval walks every stored key with plain cosine similarities, picks the
top K over the session-major flattened pool, then rebuilds graph nodes for
the selected similarities only: the selection itself is a constant with
respect to differentiation, so non-selected pairs receive exactly zero
gradient.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .autograd import Tensor, add, cosine_sim, matvec, mul, pick, relu, softmax, stack
from .encoders import KEYMAP_TAG, TextEncoder, TokenEmbedding, tokenize_embed
from .errors import ContractError, SetupError

PROMPT_TEMPLATE = "a photo of a {}"

KEYMAP_VARIANTS = ("FC1", "FC2", "RES2")


@dataclass
class ClassEntry:
    class_id: int
    name: str
    embedding: TokenEmbedding


class ClassTokenBank:
    """Per-session learnable class token embeddings, disjoint across sessions."""

    def __init__(self, ctx_len: int, dim: int, seed: int):
        self.ctx_len = ctx_len
        self.dim = dim
        self.seed = seed
        self.sessions: dict[int, list[ClassEntry]] = {}
        self._names_seen: set[str] = set()
        self._ids_seen: set[int] = set()

    def add_session(
        self,
        session: int,
        classes: Sequence[tuple[int, str]],
        token_overrides: dict[int, tuple[int, np.ndarray]] | None = None,
    ) -> list[ClassEntry]:
        """Initialize one embedding per class from the prompt template.

        ``token_overrides`` maps class_id -> (valid_len, matrix) rows taken
        verbatim from an exporter token file instead of the hash tokenizer.
        """
        if not classes:
            raise SetupError(f"session {session}: empty class list")
        if session in self.sessions:
            raise SetupError(f"session {session} already initialized")
        entries = []
        for class_id, name in classes:
            key = name.strip().lower()
            if key in self._names_seen or class_id in self._ids_seen:
                raise SetupError(
                    f"class {name!r} (id {class_id}) overlaps an earlier session"
                )
            self._names_seen.add(key)
            self._ids_seen.add(class_id)
            if token_overrides is not None and class_id in token_overrides:
                valid_len, matrix = token_overrides[class_id]
                emb = TokenEmbedding(Tensor(matrix), valid_len)
                if emb.ctx_len != self.ctx_len or emb.dim != self.dim:
                    raise SetupError(
                        f"class {name!r}: override shape {matrix.shape} does not "
                        f"match ({self.ctx_len}, {self.dim})"
                    )
            else:
                emb = tokenize_embed(
                    PROMPT_TEMPLATE.format(name), self.seed, self.ctx_len, self.dim
                )
            entries.append(ClassEntry(class_id=class_id, name=name, embedding=emb))
        self.sessions[session] = entries
        return entries

    def restore_session(self, session: int, entries: list[ClassEntry]) -> None:
        """Re-register a session loaded from a checkpoint."""
        if session in self.sessions:
            raise SetupError(f"session {session} already initialized")
        for entry in entries:
            key = entry.name.strip().lower()
            if key in self._names_seen or entry.class_id in self._ids_seen:
                raise SetupError(f"class {entry.name!r} overlaps an earlier session")
            self._names_seen.add(key)
            self._ids_seen.add(entry.class_id)
        self.sessions[session] = list(entries)

    def entries_through(self, session: int) -> list[tuple[int, ClassEntry]]:
        """(session, entry) pairs, session-ascending then class-position order."""
        out = []
        for t in sorted(self.sessions):
            if t > session:
                continue
            out.extend((t, e) for e in self.sessions[t])
        return out

    def session_sizes(self) -> list[int]:
        return [len(self.sessions[t]) for t in sorted(self.sessions)]


@dataclass
class KeyPromptPair:
    key: Tensor                 # (dim,) learnable retrieval key
    prompt: TokenEmbedding      # learnable prompt matrix
    owner_session: int
    index_in_session: int       # 1-based

    def __post_init__(self):
        if float(np.linalg.norm(self.key.data)) == 0.0:
            raise SetupError("pair key must be nonzero")


class PromptMemory:
    """Key-prompt pool grown one session at a time."""

    def __init__(self):
        self.sessions: dict[int, list[KeyPromptPair]] = {}

    def add_session(self, session: int, pairs: list[KeyPromptPair]) -> None:
        if session in self.sessions:
            raise SetupError(f"session {session} pairs already initialized")
        self.sessions[session] = pairs

    def pairs_through(self, session: int) -> list[list[KeyPromptPair]]:
        return [self.sessions[t] for t in sorted(self.sessions) if t <= session]

    def get(self, session: int, index: int) -> KeyPromptPair:
        return self.sessions[session][index - 1]

    def pool_size(self, session: int) -> int:
        return sum(len(p) for p in self.pairs_through(session))


def init_key_prompt_pairs(
    session: int,
    n_pairs: int,
    bank: ClassTokenBank,
    encoder: TextEncoder,
    rng: np.random.Generator,
) -> list[KeyPromptPair]:
    """Seed pairs from the session's class embeddings.

    Class indices are drawn without replacement until the classes are
    exhausted, then with replacement; the key starts as the encoded class
    embedding and both key and prompt are free parameters afterwards.
    """
    entries = bank.sessions.get(session)
    if not entries:
        raise SetupError(f"session {session}: class bank is empty")
    if n_pairs < 1:
        raise SetupError("need at least one key-prompt pair")
    m = len(entries)
    choices = list(rng.permutation(m)[: min(n_pairs, m)])
    if n_pairs > m:
        choices.extend(int(j) for j in rng.integers(0, m, size=n_pairs - m))
    pairs = []
    for i, j in enumerate(choices, start=1):
        entry = entries[int(j)]
        key = Tensor(encoder.encode_value(entry.embedding.matrix.data))
        prompt = TokenEmbedding(
            Tensor(entry.embedding.matrix.data.copy()), entry.embedding.valid_len
        )
        pairs.append(KeyPromptPair(key, prompt, session, i))
    return pairs


def init_random_pairs(
    session: int,
    n_pairs: int,
    ctx_len: int,
    dim: int,
    rng: np.random.Generator,
) -> list[KeyPromptPair]:
    """Ablation baseline: keys and prompts drawn fresh from the token scale."""
    if n_pairs < 1:
        raise SetupError("need at least one key-prompt pair")
    scale = 1.0 / np.sqrt(dim)
    pairs = []
    for i in range(1, n_pairs + 1):
        key = Tensor(rng.uniform(-1.0, 1.0, dim) * scale)
        prompt = TokenEmbedding(Tensor(rng.uniform(-1.0, 1.0, (ctx_len, dim)) * scale), ctx_len)
        pairs.append(KeyPromptPair(key, prompt, session, i))
    return pairs


class KeyMap:
    """Image-feature to retrieval-key network (FC1, FC2, or RES2).

    FC1 is one affine map; FC2 stacks two with a ReLU between; RES2 adds an
    identity skip from the input to the second affine's output.
    """

    def __init__(self, variant: str, dim: int, seed: int):
        if variant not in KEYMAP_VARIANTS:
            raise SetupError(f"unknown key-map variant {variant!r}")
        self.variant = variant
        self.dim = dim
        rng = np.random.default_rng(np.random.SeedSequence([seed, KEYMAP_TAG]))
        bound = 1.0 / np.sqrt(dim)
        if variant == "FC1":
            names = ("w", "b")
        else:
            names = ("w1", "b1", "w2", "b2")
        self.params: dict[str, Tensor] = {}
        for name in names:
            shape = (dim, dim) if name.startswith("w") else (dim,)
            self.params[name] = Tensor(rng.uniform(-bound, bound, shape))

    def apply(self, feature: Tensor) -> Tensor:
        if feature.data.shape != (self.dim,):
            raise ContractError(
                f"key-map expects a ({self.dim},) feature, got {feature.data.shape}"
            )
        p = self.params
        if self.variant == "FC1":
            return add(matvec(p["w"], feature), p["b"])
        hidden = relu(add(matvec(p["w1"], feature), p["b1"]))
        out = add(matvec(p["w2"], hidden), p["b2"])
        if self.variant == "RES2":
            out = add(out, feature)
        return out

    def apply_value(self, feature: np.ndarray) -> np.ndarray:
        p = {k: v.data for k, v in self.params.items()}
        if self.variant == "FC1":
            return p["w"] @ feature + p["b"]
        hidden = np.maximum(p["w1"] @ feature + p["b1"], 0.0)
        out = p["w2"] @ hidden + p["b2"]
        if self.variant == "RES2":
            out = out + feature
        return out


@dataclass(frozen=True)
class SelectedPair:
    session: int      # 1-based owning session
    index: int        # 1-based index within the session
    similarity: float


@dataclass
class TopKSelection:
    entries: list[SelectedPair] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.entries)


def quotient_remainder(z: int, row_len: int) -> tuple[int, int]:
    """1-based (row, column) of flat index ``z`` over rows of ``row_len``."""
    q = (z - 1) // row_len + 1
    return q, z - (q - 1) * row_len


def pair_similarities(
    key_value: np.ndarray, memory: PromptMemory, through_session: int
) -> list[list[float]]:
    """Plain cosine similarity of the query key against every stored key."""
    return [
        [cosine_sim(key_value, pair.key.data) for pair in session_pairs]
        for session_pairs in memory.pairs_through(through_session)
    ]


def topk_2d(sims: Sequence[Sequence[float]], k: int) -> TopKSelection:
    """Select the K largest similarities over the session-major pool.

    Ties break toward the smaller flattened index; output is ordered by
    descending similarity, then ascending flattened index.
    """
    rows = [list(row) for row in sims]
    pool = sum(len(row) for row in rows)
    if pool < k:
        raise SetupError(f"pool of {pool} pairs smaller than top-K {k}")
    values = []
    flat_z = []
    coords = []
    z = 0
    for t, row in enumerate(rows, start=1):
        for i, value in enumerate(row, start=1):
            values.append(float(value))
            flat_z.append(z)
            coords.append((t, i))
            z += 1
    arr = np.asarray(values)
    if not np.all(np.isfinite(arr)):
        raise ValueError("similarities must be finite")
    order = np.lexsort((np.asarray(flat_z), -arr))
    entries = [
        SelectedPair(coords[j][0], coords[j][1], values[j]) for j in order[:k]
    ]
    return TopKSelection(entries)


def prompt_weights(selection: TopKSelection, key_node: Tensor, memory: PromptMemory) -> Tensor:
    """Softmax weights over the selected pairs' similarities (graph-tracked)."""
    if not selection.entries:
        raise ValueError("empty selection")
    sims = [
        cosine_sim(key_node, memory.get(e.session, e.index).key)
        for e in selection.entries
    ]
    return softmax(stack(sims))


def make_bias(selection: TopKSelection, weights: Tensor, memory: PromptMemory) -> TokenEmbedding:
    """Weighted sum of the selected prompt matrices (the per-image bias)."""
    if weights.data.shape != (len(selection.entries),):
        raise ContractError(
            f"{len(selection.entries)} selected pairs but {weights.data.shape} weights"
        )
    total: Tensor | None = None
    for j, entry in enumerate(selection.entries):
        prompt = memory.get(entry.session, entry.index).prompt
        term = mul(pick(weights, j), prompt.matrix)
        total = term if total is None else add(total, term)
    assert total is not None
    return TokenEmbedding(matrix=total, valid_len=total.data.shape[0])
