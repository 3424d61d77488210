"""Fixture: a tiny randomly initialized CLIP checkpoint saved locally.

Small enough to build in seconds, structured exactly like a published
checkpoint (weights + tokenizer + image processor), so the exporter code
path is identical to a real run.
"""

import json

import numpy as np
import pytest
import torch
from PIL import Image
from transformers import (
    CLIPConfig,
    CLIPImageProcessor,
    CLIPModel,
    CLIPTextConfig,
    CLIPTokenizer,
    CLIPVisionConfig,
)

FIXTURE_DIM = 16
FIXTURE_CTX = 77


def _tiny_vocab(path):
    tokens = ["<|startoftext|>", "<|endoftext|>"]
    chars = list("abcdefghijklmnopqrstuvwxyz0123456789_")
    tokens += chars + [c + "</w>" for c in chars]
    vocab = {t: i for i, t in enumerate(tokens)}
    (path / "vocab.json").write_text(json.dumps(vocab), encoding="utf-8")
    (path / "merges.txt").write_text("#version: 0.2\n", encoding="utf-8")
    return vocab


@pytest.fixture(scope="session")
def tiny_checkpoint(tmp_path_factory):
    root = tmp_path_factory.mktemp("tiny_clip")
    vocab = _tiny_vocab(root)
    tokenizer = CLIPTokenizer(str(root / "vocab.json"), str(root / "merges.txt"))

    torch.manual_seed(1234)
    config = CLIPConfig(
        text_config=CLIPTextConfig(
            hidden_size=FIXTURE_DIM,
            intermediate_size=2 * FIXTURE_DIM,
            num_attention_heads=2,
            num_hidden_layers=2,
            vocab_size=len(vocab),
            max_position_embeddings=FIXTURE_CTX,
            bos_token_id=0,
            eos_token_id=1,
        ),
        vision_config=CLIPVisionConfig(
            hidden_size=24,
            intermediate_size=48,
            num_attention_heads=2,
            num_hidden_layers=2,
            image_size=32,
            patch_size=16,
        ),
        projection_dim=FIXTURE_DIM,
    )
    model = CLIPModel(config)
    model.eval()
    processor = CLIPImageProcessor(
        size={"shortest_edge": 32}, crop_size={"height": 32, "width": 32}
    )
    model.save_pretrained(root)
    tokenizer.save_pretrained(root)
    processor.save_pretrained(root)
    return root


@pytest.fixture(scope="session")
def image_tree(tmp_path_factory):
    """Three tiny images over two classes, plus the classes file."""
    root = tmp_path_factory.mktemp("images")
    rng = np.random.default_rng(0)
    layout = {"cat": 2, "dog": 1}
    for name, count in layout.items():
        class_dir = root / name
        class_dir.mkdir()
        for i in range(count):
            pixels = rng.integers(0, 256, size=(40, 40, 3), dtype=np.uint8)
            Image.fromarray(pixels).save(class_dir / f"img_{i}.png")
    classes = root / "classes.txt"
    classes.write_text("cat\ndog\n", encoding="utf-8")
    return root, classes
