"""Shared fixtures: synthetic glyph corpora that a small CNN can learn fast.

Each class gets a distinct coarse-grid glyph prototype (dark ink on white
paper); samples are jittered copies (shift + pixel noise). The factory can
flip a fraction of labels and records the ground truth, which the simulated
supervisor and the end-to-end tests rely on.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pytest

from dataworkbench import images as imageio
from dataworkbench.manifest import DatasetManifest, SampleRecord

INK = 0.08
PAPER = 0.95
CLASS_NAMES = ["i", "ii", "iii", "iv", "v", "vi", "vii", "viii", "ix", "x"]


def glyph_prototype(class_index: int, size: int = 32) -> np.ndarray:
    """Deterministic 32x32 glyph for one class: a coarse 5x5 ink mask upsampled."""
    attempt = 0
    while True:
        rng = np.random.default_rng(10_000 + 37 * class_index + attempt)
        coarse = rng.random((5, 5)) < 0.4
        if 4 <= coarse.sum() <= 18:
            break
        attempt += 1
    cell = size // 5 + 1
    mask = np.kron(coarse, np.ones((cell, cell), dtype=bool))[:size, :size]
    img = np.full((size, size), PAPER, dtype=np.float32)
    img[mask] = INK
    return img


_PROTOTYPES = {c: glyph_prototype(c) for c in range(10)}
# Prototypes must be pairwise distinct for the corpus to be learnable.
for _a in range(10):
    for _b in range(_a + 1, 10):
        assert np.abs(_PROTOTYPES[_a] - _PROTOTYPES[_b]).sum() > 20


def glyph_sample(class_index: int, rng: np.random.Generator, size: int = 32) -> np.ndarray:
    """One jittered sample of a class: small shift plus pixel noise."""
    img = _PROTOTYPES[class_index] if size == 32 else glyph_prototype(class_index, size)
    dx, dy = rng.integers(-2, 3, size=2)
    out = np.full_like(img, PAPER)
    h, w = img.shape
    src_y = slice(max(0, -dy), min(h, h - dy))
    src_x = slice(max(0, -dx), min(w, w - dx))
    out[max(0, dy):min(h, h + dy), max(0, dx):min(w, w + dx)] = img[src_y, src_x]
    out = out + rng.normal(0.0, 0.04, size=out.shape).astype(np.float32)
    return np.clip(out, 0.0, 1.0).astype(np.float32)


@dataclass
class Corpus:
    manifest: DatasetManifest
    root: Path
    truth: dict[str, str]  # id -> true class name
    flipped_ids: list[str]


def fake_hash(sid: str) -> str:
    return hashlib.sha256(sid.encode()).hexdigest()


def make_corpus(root: Path, n: int, classes: list[str] | None = None, seed: int = 0,
                flip_fraction: float = 0.0, n_max: int = 10_000,
                write_images: bool = True) -> Corpus:
    """Write a labeled glyph corpus under `root` and return its manifest.

    flip_fraction of the samples get a wrong label recorded in the manifest
    (the truth map keeps the real one), modeling label noise.
    """
    classes = classes or CLASS_NAMES
    rng = np.random.default_rng(seed)
    manifest = DatasetManifest(classes=list(classes), n_max=n_max)
    truth: dict[str, str] = {}
    ids = []
    for i in range(n):
        true_class = i % len(classes)
        sid = f"s{i:05d}"
        rel = f"{classes[true_class]}/{sid}.png"
        if write_images:
            imageio.save_png(glyph_sample(true_class, rng), root / rel)
            byte_hash = hashlib.sha256((root / rel).read_bytes()).hexdigest()
        else:
            byte_hash = fake_hash(sid)
        manifest.add_record(SampleRecord(id=sid, image_path=rel, byte_hash=byte_hash,
                                         label=classes[true_class]))
        truth[sid] = classes[true_class]
        ids.append(sid)
    flipped: list[str] = []
    if flip_fraction > 0:
        n_flip = int(round(flip_fraction * n))
        for sid in rng.choice(ids, size=n_flip, replace=False):
            record = manifest.records[str(sid)]
            wrong = [c for c in classes if c != truth[str(sid)]]
            record.label = str(rng.choice(wrong))
            flipped.append(str(sid))
    return Corpus(manifest=manifest, root=root, truth=truth, flipped_ids=sorted(flipped))


@pytest.fixture
def tiny_corpus(tmp_path) -> Corpus:
    return make_corpus(tmp_path, n=60, seed=3)


@pytest.fixture
def no_image_manifest() -> DatasetManifest:
    """A manifest with fabricated hashes and no files behind it."""
    manifest = DatasetManifest(classes=list(CLASS_NAMES), n_max=10_000)
    for i in range(40):
        sid = f"r{i:04d}"
        manifest.add_record(SampleRecord(
            id=sid, image_path=f"x/{sid}.png", byte_hash=fake_hash(sid),
            label=CLASS_NAMES[i % 10]))
    return manifest
