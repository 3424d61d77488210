"""IOSC checkpoint container.

Layout: magic ``IOSC``, u32 version=1, u64 manifest length, UTF-8 JSON
manifest, then concatenated little-endian 32-bit-float tensor blobs.  The
manifest records tensor names, shapes and byte offsets (relative to the blob
section) plus arbitrary metadata such as the config echo and PRNG state.
All integers little-endian.  Saving the result of a load is byte-identical.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError

MAGIC = b"IOSC"
VERSION = 1


def write_container(path: str | Path, meta: dict, tensors: dict[str, np.ndarray]) -> Path:
    """Write named float tensors plus JSON metadata; tensors stored as f32."""
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    blobs = []
    entries = []
    offset = 0
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f4")
        blobs.append(arr.tobytes())
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.nbytes
    manifest = dict(meta)
    manifest["container_version"] = VERSION
    manifest["tensors"] = entries
    payload = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(out, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", VERSION, len(payload)))
        fh.write(payload)
        for blob in blobs:
            fh.write(blob)
    return out


def read_container(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    """Read a container back; tensors widened to float64."""
    raw = Path(path).read_bytes()
    if len(raw) < 16:
        raise FormatError(f"{path}: truncated header ({len(raw)} bytes)")
    if raw[:4] != MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:4]!r}")
    version, manifest_len = struct.unpack_from("<IQ", raw, 4)
    if version != VERSION:
        raise FormatError(f"{path}: unsupported container version {version}")
    if 16 + manifest_len > len(raw):
        raise FormatError(f"{path}: manifest truncated at byte offset {len(raw)}")
    try:
        manifest = json.loads(raw[16 : 16 + manifest_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: corrupt manifest: {exc}") from exc
    if "tensors" not in manifest:
        raise FormatError(f"{path}: manifest missing tensor table")
    blob_start = 16 + manifest_len
    tensors: dict[str, np.ndarray] = {}
    expected_end = blob_start
    for entry in manifest["tensors"]:
        name, shape, offset = entry["name"], tuple(entry["shape"]), entry["offset"]
        count = int(np.prod(shape)) if shape else 1
        start = blob_start + offset
        end = start + 4 * count
        if end > len(raw):
            raise FormatError(f"{path}: tensor {name!r} truncated at byte offset {start}")
        data = np.frombuffer(raw, dtype="<f4", count=count, offset=start)
        tensors[name] = data.reshape(shape).astype(np.float64)
        expected_end = max(expected_end, end)
    if expected_end != len(raw):
        raise FormatError(f"{path}: {len(raw) - expected_end} trailing bytes")
    meta = {k: v for k, v in manifest.items() if k not in ("tensors", "container_version")}
    return meta, tensors


def prng_state_to_meta(rng: np.random.Generator) -> dict:
    state = rng.bit_generator.state
    if state["bit_generator"] != "PCG64":
        raise FormatError(f"unsupported bit generator {state['bit_generator']}")
    return {
        "bit_generator": "PCG64",
        "state": str(state["state"]["state"]),
        "inc": str(state["state"]["inc"]),
        "has_uint32": int(state["has_uint32"]),
        "uinteger": int(state["uinteger"]),
    }


def prng_state_from_meta(meta: dict) -> np.random.Generator:
    if meta.get("bit_generator") != "PCG64":
        raise FormatError(f"unsupported bit generator in checkpoint: {meta!r}")
    rng = np.random.Generator(np.random.PCG64())
    rng.bit_generator.state = {
        "bit_generator": "PCG64",
        "state": {"state": int(meta["state"]), "inc": int(meta["inc"])},
        "has_uint32": int(meta["has_uint32"]),
        "uinteger": int(meta["uinteger"]),
    }
    return rng
