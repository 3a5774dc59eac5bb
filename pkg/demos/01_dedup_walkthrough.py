"""Walk through the staged deduplication cascade on a corpus with planted twins.

Builds a small glyph corpus, plants one renamed copy, one metadata variant
(same pixels, different bytes), and one lightly perturbed near-duplicate, then
shows what each hashing stage catches and how resolution rejects the extras.

Run:  python3 demos/01_dedup_walkthrough.py
"""

import tempfile
from pathlib import Path

import numpy as np
from PIL import Image
from PIL.PngImagePlugin import PngInfo

from dataworkbench import images as imageio
from dataworkbench.dedup import (DedupConfig, compute_missing_hashes, find_duplicates,
                                 find_split_leakage, resolve_duplicates)
from dataworkbench.manifest import DatasetManifest, SampleRecord

work = Path(tempfile.mkdtemp(prefix="dedup-demo-"))
rng = np.random.default_rng(0)

print(f"workspace: {work}\n")
manifest = DatasetManifest(classes=["i", "ii"], n_max=1000)


def add(name, split="train"):
    manifest.records[name] = SampleRecord(id=name, image_path=f"{name}.png",
                                          byte_hash="", label="i", split=split)


# Twenty honest samples...
for k in range(20):
    imageio.save_png(rng.random((32, 32)).astype(np.float32), work / f"s{k:02d}.png")
    add(f"s{k:02d}", split="train" if k < 14 else "validation")

# ...plus three planted duplicates of s00 / s01 / s02.
(work / "renamed_copy.png").write_bytes((work / "s00.png").read_bytes())
add("renamed_copy")

pixels = imageio.quantize(imageio.load_image(work / "s01.png"))
meta = PngInfo()
meta.add_text("comment", "same pixels, different file bytes")
Image.fromarray(pixels, mode="L").save(work / "metadata_variant.png", pnginfo=meta,
                                       compress_level=1)
add("metadata_variant")

near = imageio.load_image(work / "s02.png")
near[8:12, 8:12] = np.clip(near[8:12, 8:12] + 0.4, 0, 1)  # small local edit
imageio.save_png(near, work / "near_twin.png")
add("near_twin", split="validation")

config = DedupConfig(hamming_threshold=6)
failures = compute_missing_hashes(manifest, config, work)
assert not failures

print("stage hashes for the planted pair (s00 vs renamed_copy):")
a, b = manifest.records["s00"], manifest.records["renamed_copy"]
print(f"  byte_hash equal:  {a.byte_hash == b.byte_hash}")
print(f"  pixel_hash equal: {a.pixel_hash == b.pixel_hash}\n")

groups = find_duplicates(manifest, config)
print(f"find_duplicates -> {len(groups)} groups:")
for g in groups:
    print(f"  {g.kind:12s} {g.member_ids} (Hamming {g.distance})")

leaks = find_split_leakage(manifest, config)
print(f"\nfind_split_leakage -> {len(leaks)} cross-split pairs:")
for p in leaks:
    print(f"  train {p.train_id} ~ validation {p.validation_id} ({p.kind})")

resolved = resolve_duplicates(manifest, groups, policy="keep_first")
rejected = [r for r in resolved.records.values() if r.status == "rejected"]
print(f"\nresolve_duplicates(keep_first) rejected {len(rejected)} records:")
for r in rejected:
    print(f"  {r.id}: {r.note}")
