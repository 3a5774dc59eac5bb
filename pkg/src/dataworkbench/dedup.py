"""Duplicate detection via a staged hashing cascade, plus split-leakage checks.

Three stages, cheap to expensive, each a strict refinement of the last:

1. byte_hash   — SHA-256 of the raw file bytes (catches renamed copies).
2. pixel_hash  — SHA-256 of the decoded image after grayscale conversion,
                 bilinear resize to the canonical size, and uint8 quantization
                 (catches re-encodes and metadata variants).
3. phash       — 64-bit difference hash of the canonical image; pairs within
                 a Hamming threshold are near-duplicates.

Byte-equal implies pixel-equal implies Hamming distance 0, because each later
hash is derived from the same canonical uint8 image. Near-duplicate search
runs over one representative per distinct pixel content (min id) and emits
pairs, so every reported group satisfies its criterion pairwise. Candidate
generation for large corpora buckets the 64-bit hash into bands of
`prefix_bits` bits (any pair within Hamming distance d shares a band when
there are more than d bands); at or below `exhaustive_limit` records an
exhaustive chunked all-pairs scan guarantees exactness regardless.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import images
from .errors import ImageDecodeError, ManifestError
from .manifest import DatasetManifest, SampleRecord

DHASH_GRID = (9, 8)  # (width, height): 8 comparisons per row x 8 rows = 64 bits

# Survivor preference for resolve_duplicates(policy="keep_best_status").
_STATUS_RANK = {
    "certified": 0,
    "relabeled": 1,
    "certified_synthetic": 2,
    "unverified": 3,
    "ambiguous": 4,
    "rejected": 5,
}


@dataclass(frozen=True)
class DedupConfig:
    canonical_size: tuple[int, int] = (32, 32)
    hamming_threshold: int = 6
    prefix_bits: int = 8
    exhaustive_limit: int = 10_000

    def __post_init__(self):
        if not 0 <= self.hamming_threshold <= 64:
            raise ValueError("hamming_threshold must be in [0, 64]")
        if not 1 <= self.prefix_bits <= 64:
            raise ValueError("prefix_bits must be in [1, 64]")
        w, h = self.canonical_size
        if w <= 0 or h <= 0:
            raise ValueError("canonical_size must be positive")


@dataclass
class DuplicateGroup:
    kind: str  # exact_bytes | exact_pixels | near
    member_ids: list[str]  # sorted by id
    distance: int  # Hamming distance (0 for exact kinds)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "member_ids": self.member_ids, "distance": self.distance}


@dataclass
class LeakagePair:
    train_id: str
    validation_id: str
    kind: str  # strongest matching criterion
    distance: int

    def to_dict(self) -> dict:
        return {"train_id": self.train_id, "validation_id": self.validation_id,
                "kind": self.kind, "distance": self.distance}


def dhash(canonical_u8: np.ndarray) -> int:
    """64-bit difference hash of a canonical uint8 grayscale image.

    The image is resized to a 9x8 grid; bit (r, c) is set when cell (r, c)
    is brighter than its right neighbour. Bits are packed row-major, MSB first.
    """
    grid = images.resize(canonical_u8.astype(np.float32) / 255.0, DHASH_GRID)
    diff = grid[:, :-1] > grid[:, 1:]
    value = 0
    for bit in diff.flatten():
        value = (value << 1) | int(bit)
    return value


def phash_hex(value: int) -> str:
    return f"{value:016x}"


def phash_int(hex_value: str) -> int:
    return int(hex_value, 16)


def hamming(a: int, b: int) -> int:
    return (a ^ b).bit_count()


def compute_hashes(record: SampleRecord, config: DedupConfig,
                   images_root: str | Path) -> tuple[str, str, str]:
    """Return (byte_hash, pixel_hash, phash) hex digests for one record.

    Raises ImageDecodeError for unreadable files; callers treat that as a
    per-sample failure and keep going.
    """
    path = Path(images_root) / record.image_path
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise ImageDecodeError(f"cannot read {path}: {exc}") from exc
    byte_hash = hashlib.sha256(raw).hexdigest()
    img = images.load_image(path)
    canonical = images.quantize(images.resize(images.to_grayscale(img), config.canonical_size))
    w, h = config.canonical_size
    pixel_hash = hashlib.sha256(f"{w}x{h}:".encode() + canonical.tobytes()).hexdigest()
    return byte_hash, pixel_hash, phash_hex(dhash(canonical))


def compute_missing_hashes(manifest: DatasetManifest, config: DedupConfig,
                           images_root: str | Path) -> dict[str, str]:
    """Fill in pixel/perceptual hashes for records that lack them, in place.

    Returns {sample_id: error message} for records whose image could not be
    processed; the rest of the corpus is still hashed.
    """
    failures: dict[str, str] = {}
    for record in manifest.records.values():
        if record.pixel_hash is not None and record.phash is not None:
            continue
        try:
            byte_hash, pixel_hash, ph = compute_hashes(record, config, images_root)
        except ImageDecodeError as exc:
            failures[record.id] = str(exc)
            continue
        record.byte_hash = byte_hash
        record.pixel_hash = pixel_hash
        record.phash = ph
        record.version += 1
    return failures


def _in_scope(manifest: DatasetManifest) -> list[SampleRecord]:
    records = [r for r in manifest.records.values() if r.status != "rejected"]
    missing = sorted(r.id for r in records if r.pixel_hash is None or r.phash is None)
    if missing:
        raise ManifestError(
            f"records missing hashes (run compute_missing_hashes first): {missing[:5]}"
            + ("..." if len(missing) > 5 else "")
        )
    return sorted(records, key=lambda r: r.id)


def _group_by(records: list[SampleRecord], key) -> dict[str, list[SampleRecord]]:
    table: dict[str, list[SampleRecord]] = {}
    for record in records:
        table.setdefault(key(record), []).append(record)
    return table


def _near_candidate_pairs(hashes: np.ndarray, config: DedupConfig) -> set[tuple[int, int]]:
    """Candidate index pairs for the near stage (band buckets, plus an
    exhaustive chunked scan at small scale)."""
    n = len(hashes)
    candidates: set[tuple[int, int]] = set()
    width = config.prefix_bits
    for start in range(0, 64, width):
        shift = np.uint64(start)
        mask = np.uint64((1 << min(width, 64 - start)) - 1)
        buckets: dict[int, list[int]] = {}
        keys = (hashes >> shift) & mask
        for i, key in enumerate(keys.tolist()):
            buckets.setdefault(key, []).append(i)
        for members in buckets.values():
            for a in range(len(members)):
                for b in range(a + 1, len(members)):
                    candidates.add((members[a], members[b]))
    if n <= config.exhaustive_limit:
        chunk = 512
        for lo in range(0, n, chunk):
            hi = min(lo + chunk, n)
            dists = np.bitwise_count(hashes[lo:hi, None] ^ hashes[None, :])
            rows, cols = np.nonzero(dists <= config.hamming_threshold)
            for r, c in zip(rows.tolist(), cols.tolist()):
                i, j = lo + r, c
                if i < j:
                    candidates.add((i, j))
    return candidates


def find_duplicates(manifest: DatasetManifest, config: DedupConfig) -> list[DuplicateGroup]:
    """Run the full cascade over all non-rejected records.

    Output is deterministic: groups sorted by kind then members, members
    sorted by id.
    """
    records = _in_scope(manifest)
    groups: list[DuplicateGroup] = []

    byte_classes = _group_by(records, lambda r: r.byte_hash)
    for members in byte_classes.values():
        if len(members) > 1:
            groups.append(DuplicateGroup("exact_bytes", sorted(m.id for m in members), 0))

    byte_reps = [members[0] for members in byte_classes.values()]  # min id per class
    pixel_classes = _group_by(sorted(byte_reps, key=lambda r: r.id), lambda r: r.pixel_hash)
    for members in pixel_classes.values():
        if len(members) > 1:
            groups.append(DuplicateGroup("exact_pixels", sorted(m.id for m in members), 0))

    pixel_reps = [members[0] for members in pixel_classes.values()]
    pixel_reps.sort(key=lambda r: r.id)
    hashes = np.array([phash_int(r.phash) for r in pixel_reps], dtype=np.uint64)
    for i, j in sorted(_near_candidate_pairs(hashes, config)):
        dist = hamming(int(hashes[i]), int(hashes[j]))
        if dist <= config.hamming_threshold:
            pair = sorted((pixel_reps[i].id, pixel_reps[j].id))
            groups.append(DuplicateGroup("near", pair, dist))

    kind_order = {"exact_bytes": 0, "exact_pixels": 1, "near": 2}
    groups.sort(key=lambda g: (kind_order[g.kind], g.member_ids))
    return groups


def find_split_leakage(manifest: DatasetManifest, config: DedupConfig) -> list[LeakagePair]:
    """Report every (train, validation) pair meeting any duplicate criterion.

    The reported kind is the strongest criterion the pair meets. An empty
    result certifies the two splits share no content up to the threshold.
    """
    records = _in_scope(manifest)
    train = [r for r in records if r.split == "train"]
    val = [r for r in records if r.split == "validation"]
    if not train or not val:
        return []
    train_hashes = np.array([phash_int(r.phash) for r in train], dtype=np.uint64)
    val_hashes = np.array([phash_int(r.phash) for r in val], dtype=np.uint64)
    pairs: list[LeakagePair] = []
    chunk = 512
    for lo in range(0, len(train), chunk):
        hi = min(lo + chunk, len(train))
        dists = np.bitwise_count(train_hashes[lo:hi, None] ^ val_hashes[None, :])
        rows, cols = np.nonzero(dists <= config.hamming_threshold)
        for r, c in zip(rows.tolist(), cols.tolist()):
            t, v = train[lo + r], val[c]
            if t.byte_hash == v.byte_hash:
                kind = "exact_bytes"
            elif t.pixel_hash == v.pixel_hash:
                kind = "exact_pixels"
            else:
                kind = "near"
            pairs.append(LeakagePair(t.id, v.id, kind, int(dists[r, c])))
    pairs.sort(key=lambda p: (p.train_id, p.validation_id))
    return pairs


def resolve_duplicates(manifest: DatasetManifest, groups: list[DuplicateGroup],
                       policy: str = "keep_first") -> DatasetManifest:
    """Keep one survivor per group and reject the rest, recording the reason.

    keep_first keeps the lowest id; keep_best_status prefers human-validated
    records (certified > relabeled > synthetic > unverified > ambiguous).
    Idempotent: re-applying the same groups changes nothing.
    """
    if policy not in ("keep_first", "keep_best_status"):
        raise ValueError(f"unknown policy {policy!r}")
    out = manifest.copy()
    for group in groups:
        members = [out.get(mid) for mid in group.member_ids]
        if policy == "keep_first":
            survivor = min(members, key=lambda r: r.id)
        else:
            survivor = min(members, key=lambda r: (_STATUS_RANK[r.status], r.id))
        for record in members:
            if record.id == survivor.id:
                continue
            note = f"duplicate of {survivor.id} ({group.kind})"
            if record.status == "rejected" and record.note == note:
                continue
            record.status = "rejected"
            record.split = "unassigned"
            record.note = note
            record.version += 1
    return out
