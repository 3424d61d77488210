"""Writers for the IOSF-EMB and IOSF-TOK byte layouts.

Deliberately self-contained: the consuming engine has its own reader, and
the two sides meeting on raw bytes is the interface contract.

IOSF-EMB is a directory of ``manifest.json`` plus ``features.bin`` (magic
``IOSF``, u32 version=1, u32 dim, u64 count, then per record a u32 class id
followed by dim little-endian f32 values).  IOSF-TOK is a single file
(magic ``IOST``, u32 version=1, u32 ctx_len, u32 dim, u64 class_count, then
per class a u32 class id, u32 valid_len, and ctx_len x dim f32 values).
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Sequence

import numpy as np

EMB_MAGIC = b"IOSF"
TOK_MAGIC = b"IOST"
VERSION = 1


def write_embeddings_dir(
    out_dir: Path,
    labels: Sequence[int],
    features: np.ndarray,
    class_names: dict[int, str],
    notes: str = "",
) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    feats = np.asarray(features, dtype=np.float32)
    if feats.ndim != 2 or feats.shape[0] != len(labels):
        raise ValueError(f"features shape {feats.shape} does not match {len(labels)} labels")
    manifest = {
        "version": VERSION,
        "dim": int(feats.shape[1]),
        "count": len(labels),
        "classes": [{"id": int(cid), "name": class_names[cid]} for cid in sorted(class_names)],
        "notes": notes,
    }
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, sort_keys=True, separators=(",", ":")) + "\n", encoding="utf-8"
    )
    with open(out_dir / "features.bin", "wb") as fh:
        fh.write(EMB_MAGIC)
        fh.write(struct.pack("<IIQ", VERSION, feats.shape[1], len(labels)))
        for label, row in zip(labels, feats):
            fh.write(struct.pack("<I", int(label)))
            fh.write(row.astype("<f4").tobytes())
    return out_dir


def write_token_file(
    out_path: Path,
    ctx_len: int,
    dim: int,
    entries: Sequence[tuple[int, int, np.ndarray]],
) -> Path:
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "wb") as fh:
        fh.write(TOK_MAGIC)
        fh.write(struct.pack("<IIIQ", VERSION, ctx_len, dim, len(entries)))
        for class_id, valid_len, matrix in entries:
            mat = np.asarray(matrix, dtype="<f4")
            if mat.shape != (ctx_len, dim):
                raise ValueError(
                    f"class {class_id}: matrix shape {mat.shape} != ({ctx_len}, {dim})"
                )
            fh.write(struct.pack("<II", int(class_id), int(valid_len)))
            fh.write(mat.tobytes())
    return out_path
