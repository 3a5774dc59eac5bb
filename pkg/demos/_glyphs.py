"""Synthetic glyph corpus shared by the demo scripts: distinct per-class
patterns (dark ink on paper) that a small CNN learns in a few epochs."""

from __future__ import annotations

import hashlib
from pathlib import Path

import numpy as np

from dataworkbench import images as imageio
from dataworkbench.manifest import DatasetManifest, SampleRecord

INK = 0.08
PAPER = 0.95
CLASS_NAMES = ["i", "ii", "iii", "iv", "v", "vi", "vii", "viii", "ix", "x"]


def glyph_prototype(class_index: int, size: int = 32) -> np.ndarray:
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


def glyph_sample(class_index: int, rng: np.random.Generator) -> np.ndarray:
    img = _PROTOTYPES[class_index]
    dx, dy = rng.integers(-2, 3, size=2)
    out = np.full_like(img, PAPER)
    h, w = img.shape
    src_y = slice(max(0, -dy), min(h, h - dy))
    src_x = slice(max(0, -dx), min(w, w - dx))
    out[max(0, dy):min(h, h + dy), max(0, dx):min(w, w + dx)] = img[src_y, src_x]
    out = out + rng.normal(0.0, 0.04, size=out.shape).astype(np.float32)
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def write_corpus(root: Path, n: int, seed: int = 0, flip_fraction: float = 0.0,
                 n_max: int = 10_000):
    """Write PNGs + manifest; returns (manifest, truth map, flipped ids)."""
    rng = np.random.default_rng(seed)
    manifest = DatasetManifest(classes=list(CLASS_NAMES), n_max=n_max)
    truth: dict[str, str] = {}
    for i in range(n):
        cls = i % len(CLASS_NAMES)
        sid = f"s{i:05d}"
        rel = f"{CLASS_NAMES[cls]}/{sid}.png"
        imageio.save_png(glyph_sample(cls, rng), root / rel)
        manifest.add_record(SampleRecord(
            id=sid, image_path=rel,
            byte_hash=hashlib.sha256((root / rel).read_bytes()).hexdigest(),
            label=CLASS_NAMES[cls]))
        truth[sid] = CLASS_NAMES[cls]
    flipped: list[str] = []
    if flip_fraction > 0:
        for sid in rng.choice(sorted(truth), size=int(round(flip_fraction * n)),
                              replace=False):
            record = manifest.records[str(sid)]
            record.label = str(rng.choice([c for c in CLASS_NAMES if c != truth[str(sid)]]))
            flipped.append(str(sid))
    return manifest, truth, sorted(flipped)
