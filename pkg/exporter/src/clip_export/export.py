"""Run a CLIP-style checkpoint over labeled images and class prompts.

Emits IOSF-EMB image features and IOSF-TOK token-embedding matrices for a
downstream engine.  The checkpoint must follow the standard Hugging Face
layout (model weights, tokenizer, image processor).  Inference runs in eval
mode without gradients, so re-exporting identical inputs produces identical
bytes.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from PIL import Image, UnidentifiedImageError
from transformers import CLIPImageProcessor, CLIPModel, CLIPTokenizer

from .formats import write_embeddings_dir, write_token_file

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp", ".webp")
PROMPT_TEMPLATE = "a photo of a {}"
BATCH_SIZE = 16


class ExportError(RuntimeError):
    pass


@dataclass
class ExportJob:
    checkpoint: str
    images_dir: Path
    classes_file: Path
    out_dir: Path
    ctx_len: int = 77
    dim: int = 512
    prompt_template: str = PROMPT_TEMPLATE


@dataclass
class Backend:
    model: CLIPModel
    tokenizer: CLIPTokenizer
    processor: CLIPImageProcessor
    skipped: list[str] = field(default_factory=list)


def load_backend(job: ExportJob) -> Backend:
    model = CLIPModel.from_pretrained(job.checkpoint)
    model.eval()
    proj_dim = int(model.config.projection_dim)
    if proj_dim != job.dim:
        raise ExportError(
            f"checkpoint projects to {proj_dim} dimensions, job expects {job.dim}"
        )
    text_width = int(model.text_model.embeddings.token_embedding.weight.shape[1])
    if text_width != job.dim:
        raise ExportError(
            f"token embedding width {text_width} differs from feature dim {job.dim}; "
            "the downstream engine needs one shared dimension"
        )
    tokenizer = CLIPTokenizer.from_pretrained(job.checkpoint)
    processor = CLIPImageProcessor.from_pretrained(job.checkpoint)
    return Backend(model=model, tokenizer=tokenizer, processor=processor)


def read_class_names(path: Path) -> list[str]:
    """One class name per line; order defines the class ids."""
    names = [line.strip() for line in Path(path).read_text(encoding="utf-8").splitlines()]
    names = [n for n in names if n]
    if not names:
        raise ExportError(f"{path}: no class names")
    lowered = [n.lower() for n in names]
    if len(set(lowered)) != len(lowered):
        dupe = next(n for n in lowered if lowered.count(n) > 1)
        raise ExportError(f"{path}: duplicate class name {dupe!r}")
    return names


def list_images(images_dir: Path, class_names: list[str]) -> list[tuple[int, Path]]:
    """(class_id, path) pairs from per-class subdirectories, sorted."""
    images_dir = Path(images_dir)
    listing: list[tuple[int, Path]] = []
    for class_id, name in enumerate(class_names):
        class_dir = images_dir / name
        if not class_dir.is_dir():
            continue
        for file in sorted(class_dir.iterdir()):
            if file.suffix.lower() in IMAGE_SUFFIXES:
                listing.append((class_id, file))
    return listing


def _decode(path: Path) -> Image.Image | None:
    try:
        with Image.open(path) as img:
            return img.convert("RGB")
    except (UnidentifiedImageError, OSError) as exc:
        log.warning("skipping undecodable image %s: %s", path, exc)
        return None


def _image_features(backend: Backend, images: list[Image.Image]) -> np.ndarray:
    pixels = backend.processor(images=images, return_tensors="pt")["pixel_values"]
    with torch.no_grad():
        out = backend.model.get_image_features(pixel_values=pixels)
    feats = out if isinstance(out, torch.Tensor) else out.pooler_output
    return feats.to(torch.float32).cpu().numpy()


def export_features(job: ExportJob, backend: Backend | None = None) -> Path:
    """Write one IOSF-EMB record per decodable image; returns the directory."""
    backend = backend or load_backend(job)
    class_names = read_class_names(job.classes_file)
    listing = list_images(job.images_dir, class_names)

    labels: list[int] = []
    rows: list[np.ndarray] = []
    pending_imgs: list[Image.Image] = []
    pending_ids: list[int] = []

    def flush():
        if pending_imgs:
            rows.append(_image_features(backend, pending_imgs))
            labels.extend(pending_ids)
            pending_imgs.clear()
            pending_ids.clear()

    for class_id, path in listing:
        image = _decode(path)
        if image is None:
            backend.skipped.append(path.name)
            continue
        pending_imgs.append(image)
        pending_ids.append(class_id)
        if len(pending_imgs) >= BATCH_SIZE:
            flush()
    flush()

    features = np.concatenate(rows, axis=0) if rows else np.zeros((0, job.dim), np.float32)
    notes = f"exported from {job.checkpoint}"
    if backend.skipped:
        notes += "; skipped undecodable: " + ", ".join(sorted(backend.skipped))
    return write_embeddings_dir(
        Path(job.out_dir) / "features",
        labels,
        features,
        {i: n for i, n in enumerate(class_names)},
        notes=notes,
    )


def export_token_embeddings(job: ExportJob, backend: Backend | None = None) -> Path:
    """Write the prompt token-embedding rows per class; returns the file path."""
    backend = backend or load_backend(job)
    class_names = read_class_names(job.classes_file)
    table = backend.model.text_model.embeddings.token_embedding
    entries = []
    for class_id, name in enumerate(class_names):
        prompt = job.prompt_template.format(name)
        ids = backend.tokenizer(prompt, add_special_tokens=True)["input_ids"]
        if len(ids) > job.ctx_len:
            raise ExportError(
                f"class {name!r}: prompt tokenizes to {len(ids)} tokens, "
                f"context length is {job.ctx_len}"
            )
        with torch.no_grad():
            rows = table(torch.tensor(ids, dtype=torch.long))
        matrix = np.zeros((job.ctx_len, job.dim), dtype=np.float32)
        matrix[: len(ids)] = rows.to(torch.float32).cpu().numpy()
        entries.append((class_id, len(ids), matrix))
    return write_token_file(Path(job.out_dir) / "tokens.iost", job.ctx_len, job.dim, entries)


def run_export(job: ExportJob) -> tuple[Path, Path]:
    """Full job: one backend, both artifact families."""
    backend = load_backend(job)
    emb_dir = export_features(job, backend)
    tok_path = export_token_embeddings(job, backend)
    return emb_dir, tok_path
