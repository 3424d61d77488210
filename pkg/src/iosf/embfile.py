"""Readers and writers for the on-disk embedding containers.

IOSF-EMB is a directory holding two files:

* ``manifest.json`` -- UTF-8 JSON: ``{"version": 1, "dim", "count",
  "classes": [{"id", "name"}, ...], "notes"}``
* ``features.bin`` -- magic ``IOSF``, u32 version=1, u32 dim, u64 count,
  then ``count`` records of (u32 class_id, dim x f32).  Little-endian.

IOSF-TOK is a single file of padded token-embedding matrices: magic
``IOST``, u32 version, u32 ctx_len, u32 dim, u64 class_count, then per class
(u32 class_id, u32 valid_len, ctx_len x dim f32).

Payloads are 32-bit floats on disk and widened to float64 on load; writing
back a loaded file is bit-exact.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import FormatError

EMB_MAGIC = b"IOSF"
TOK_MAGIC = b"IOST"
EMB_VERSION = 1
TOK_VERSION = 1

MANIFEST_NAME = "manifest.json"
FEATURES_NAME = "features.bin"


@dataclass
class EmbeddingData:
    dim: int
    labels: np.ndarray        # (n,) int64 class ids
    features: np.ndarray      # (n, dim) float64, widened from f32
    class_names: dict[int, str]
    notes: str = ""

    @property
    def count(self) -> int:
        return len(self.labels)


def write_embeddings(
    out_dir: str | Path,
    labels: Sequence[int],
    features: np.ndarray,
    class_names: dict[int, str],
    notes: str = "",
) -> Path:
    """Write an IOSF-EMB directory; returns its path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    feats = np.asarray(features, dtype=np.float32)
    if feats.ndim != 2 or feats.shape[0] != len(labels):
        raise ValueError(f"features shape {feats.shape} does not match {len(labels)} labels")
    dim = feats.shape[1]
    manifest = {
        "version": EMB_VERSION,
        "dim": dim,
        "count": len(labels),
        "classes": [{"id": int(cid), "name": class_names[cid]} for cid in sorted(class_names)],
        "notes": notes,
    }
    (out / MANIFEST_NAME).write_text(
        json.dumps(manifest, sort_keys=True, separators=(",", ":")) + "\n", encoding="utf-8"
    )
    with open(out / FEATURES_NAME, "wb") as fh:
        fh.write(EMB_MAGIC)
        fh.write(struct.pack("<IIQ", EMB_VERSION, dim, len(labels)))
        for label, row in zip(labels, feats):
            fh.write(struct.pack("<I", int(label)))
            fh.write(row.astype("<f4").tobytes())
    return out


def read_embeddings(path: str | Path) -> EmbeddingData:
    """Read an IOSF-EMB directory, validating manifest against the blob."""
    root = Path(path)
    manifest_path = root / MANIFEST_NAME
    blob_path = root / FEATURES_NAME
    if not manifest_path.is_file() or not blob_path.is_file():
        raise FormatError(f"{root}: not an IOSF-EMB directory (missing manifest or blob)")
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{manifest_path}: invalid JSON manifest: {exc}") from exc
    for key in ("version", "dim", "count", "classes"):
        if key not in manifest:
            raise FormatError(f"{manifest_path}: manifest missing key {key!r}")
    if manifest["version"] != EMB_VERSION:
        raise FormatError(f"{manifest_path}: unsupported manifest version {manifest['version']}")

    raw = blob_path.read_bytes()
    if len(raw) < 20:
        raise FormatError(f"{blob_path}: truncated header at byte offset {len(raw)}")
    if raw[:4] != EMB_MAGIC:
        raise FormatError(f"{blob_path}: bad magic {raw[:4]!r}")
    version, dim, count = struct.unpack_from("<IIQ", raw, 4)
    if version != EMB_VERSION:
        raise FormatError(f"{blob_path}: unsupported blob version {version}")
    if dim != manifest["dim"]:
        raise FormatError(f"{blob_path}: blob dim {dim} != manifest dim {manifest['dim']}")
    if count != manifest["count"]:
        raise FormatError(f"{blob_path}: blob count {count} != manifest count {manifest['count']}")

    record_size = 4 + 4 * dim
    offset = 20
    labels = np.empty(count, dtype=np.int64)
    features = np.empty((count, dim), dtype=np.float64)
    for i in range(count):
        if offset + record_size > len(raw):
            raise FormatError(f"{blob_path}: truncated at record {i}, byte offset {offset}")
        (labels[i],) = struct.unpack_from("<I", raw, offset)
        features[i] = np.frombuffer(raw, dtype="<f4", count=dim, offset=offset + 4)
        offset += record_size
    if offset != len(raw):
        raise FormatError(f"{blob_path}: {len(raw) - offset} trailing bytes at offset {offset}")
    if not np.all(np.isfinite(features)):
        raise FormatError(f"{blob_path}: non-finite feature values")

    class_names = {int(c["id"]): str(c["name"]) for c in manifest["classes"]}
    return EmbeddingData(
        dim=int(dim),
        labels=labels,
        features=features,
        class_names=class_names,
        notes=str(manifest.get("notes", "")),
    )


def write_token_embeddings(
    out_path: str | Path,
    ctx_len: int,
    dim: int,
    entries: Sequence[tuple[int, int, np.ndarray]],
) -> Path:
    """Write an IOSF-TOK file from (class_id, valid_len, ctx_len x dim matrix) entries."""
    out = Path(out_path)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "wb") as fh:
        fh.write(TOK_MAGIC)
        fh.write(struct.pack("<IIIQ", TOK_VERSION, ctx_len, dim, len(entries)))
        for class_id, valid_len, matrix in entries:
            mat = np.asarray(matrix, dtype=np.float32)
            if mat.shape != (ctx_len, dim):
                raise ValueError(f"class {class_id}: matrix shape {mat.shape} != ({ctx_len}, {dim})")
            if not 1 <= valid_len <= ctx_len:
                raise ValueError(f"class {class_id}: valid_len {valid_len} outside [1, {ctx_len}]")
            fh.write(struct.pack("<II", int(class_id), int(valid_len)))
            fh.write(mat.astype("<f4").tobytes())
    return out


def read_token_embeddings(path: str | Path) -> tuple[int, int, dict[int, tuple[int, np.ndarray]]]:
    """Read an IOSF-TOK file: returns (ctx_len, dim, {class_id: (valid_len, matrix)})."""
    raw = Path(path).read_bytes()
    if len(raw) < 24:
        raise FormatError(f"{path}: truncated header at byte offset {len(raw)}")
    if raw[:4] != TOK_MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:4]!r}")
    version, ctx_len, dim, count = struct.unpack_from("<IIIQ", raw, 4)
    if version != TOK_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    record_size = 8 + 4 * ctx_len * dim
    offset = 24
    table: dict[int, tuple[int, np.ndarray]] = {}
    for i in range(count):
        if offset + record_size > len(raw):
            raise FormatError(f"{path}: truncated at record {i}, byte offset {offset}")
        class_id, valid_len = struct.unpack_from("<II", raw, offset)
        mat = np.frombuffer(raw, dtype="<f4", count=ctx_len * dim, offset=offset + 8)
        if not 1 <= valid_len <= ctx_len:
            raise FormatError(f"{path}: record {i} valid_len {valid_len} outside [1, {ctx_len}]")
        if class_id in table:
            raise FormatError(f"{path}: duplicate class id {class_id} at record {i}")
        table[class_id] = (int(valid_len), mat.reshape(ctx_len, dim).astype(np.float64))
        offset += record_size
    if offset != len(raw):
        raise FormatError(f"{path}: {len(raw) - offset} trailing bytes at offset {offset}")
    return int(ctx_len), int(dim), table
