"""Dataset manifest: the record model, persistence, and the global size budget.

The manifest is the single source of truth for the curation pipeline. On disk
it is UTF-8 JSON Lines: one header object carrying schema_version, n_max and
the ordered class list, then one flat record object per line (hashes
hex-encoded, optional fields omitted). Records are never deleted; rejected
samples stay in the file with status="rejected" so every human decision
remains auditable across rounds.
"""

from __future__ import annotations

import copy
import json
import os
import tempfile
from dataclasses import dataclass, field, fields
from pathlib import Path

from .errors import ManifestError

SCHEMA_VERSION = 1

SPLITS = ("train", "validation", "test", "surplus", "unassigned")
STATUSES = (
    "unverified",
    "certified",
    "relabeled",
    "rejected",
    "ambiguous",
    "certified_synthetic",
)

# Statuses that carry a human (or human-equivalent) validation decision.
VALIDATED_STATUSES = ("certified", "relabeled", "certified_synthetic")
# Splits that count against the |train| + |validation| < n_max budget.
BUDGET_SPLITS = ("train", "validation")


@dataclass(frozen=True)
class ClassLabel:
    """A class in the flat label ontology: position in the manifest class list."""

    index: int
    name: str


@dataclass
class SampleRecord:
    """One image sample with hashes, label, split, review state and provenance.

    `version` is the optimistic-concurrency counter: it increments on every
    mutation so the review service can detect concurrent edits.
    """

    id: str
    image_path: str
    byte_hash: str
    label: str
    pixel_hash: str | None = None
    phash: str | None = None
    suggested_label: str | None = None
    split: str = "unassigned"
    status: str = "unverified"
    loss: float | None = None
    round: int | None = None
    version: int = 0
    note: str | None = None
    surplus_rank: int | None = None

    def to_line(self) -> str:
        payload = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if value is not None:
                payload[f.name] = value
        return json.dumps(payload, ensure_ascii=False)

    @classmethod
    def from_payload(cls, payload: dict) -> "SampleRecord":
        known = {f.name for f in fields(cls)}
        unknown = set(payload) - known
        if unknown:
            raise ManifestError(f"unknown record fields {sorted(unknown)}")
        missing = {"id", "image_path", "byte_hash", "label"} - set(payload)
        if missing:
            raise ManifestError(f"record missing required fields {sorted(missing)}")
        return cls(**payload)


@dataclass
class DatasetManifest:
    """All SampleRecords keyed by id, plus the class list and the size budget."""

    classes: list[str]
    n_max: int
    records: dict[str, SampleRecord] = field(default_factory=dict)
    schema_version: int = SCHEMA_VERSION

    def copy(self) -> "DatasetManifest":
        return copy.deepcopy(self)

    def get(self, sample_id: str) -> SampleRecord:
        try:
            return self.records[sample_id]
        except KeyError:
            raise ManifestError(f"unknown sample id {sample_id!r}") from None

    def add_record(self, record: SampleRecord) -> None:
        if record.id in self.records:
            raise ManifestError(f"duplicate sample id {record.id!r}")
        validate_record(record, self.classes)
        self.records[record.id] = record

    def class_index(self, name: str) -> int:
        try:
            return self.classes.index(name)
        except ValueError:
            raise ManifestError(f"unknown class {name!r}") from None

    def class_labels(self) -> list[ClassLabel]:
        return [ClassLabel(i, name) for i, name in enumerate(self.classes)]

    def split_ids(self, split: str) -> list[str]:
        return sorted(r.id for r in self.records.values() if r.split == split)

    def split_count(self, split: str) -> int:
        return sum(1 for r in self.records.values() if r.split == split)

    def budget_count(self) -> int:
        return sum(1 for r in self.records.values() if r.split in BUDGET_SPLITS)


@dataclass(frozen=True)
class SizeCheck:
    """Result of the |train| + |validation| < n_max check, with the numbers."""

    ok: bool
    train_count: int
    validation_count: int
    n_max: int


def validate_record(record: SampleRecord, classes: list[str]) -> None:
    rid = record.id
    if not rid:
        raise ManifestError("record with empty id")
    if record.split not in SPLITS:
        raise ManifestError(f"record {rid!r}: invalid split {record.split!r}")
    if record.status not in STATUSES:
        raise ManifestError(f"record {rid!r}: invalid status {record.status!r}")
    if record.label not in classes:
        raise ManifestError(f"record {rid!r}: label {record.label!r} not in class list")
    if record.suggested_label is not None and record.suggested_label not in classes:
        raise ManifestError(
            f"record {rid!r}: suggested label {record.suggested_label!r} not in class list"
        )
    if record.loss is not None and not record.loss >= 0:
        raise ManifestError(f"record {rid!r}: negative loss {record.loss}")
    if record.round is not None and record.round < 0:
        raise ManifestError(f"record {rid!r}: negative round {record.round}")
    if record.version < 0:
        raise ManifestError(f"record {rid!r}: negative version {record.version}")
    if record.status == "rejected" and record.split in ("train", "validation", "test"):
        raise ManifestError(f"record {rid!r}: rejected but assigned to split {record.split!r}")
    if record.status == "ambiguous" and record.split in ("train", "validation", "test"):
        raise ManifestError(f"record {rid!r}: ambiguous but assigned to split {record.split!r}")
    if record.status == "relabeled":
        if record.suggested_label is None:
            raise ManifestError(f"record {rid!r}: relabeled without an applied suggestion")
        if record.suggested_label != record.label:
            raise ManifestError(
                f"record {rid!r}: relabeled but label {record.label!r} does not match "
                f"applied suggestion {record.suggested_label!r}"
            )


def validate_manifest(manifest: DatasetManifest) -> None:
    """Check every manifest invariant; raise ManifestError naming the offender."""
    if manifest.n_max <= 0:
        raise ManifestError(f"n_max must be positive, got {manifest.n_max}")
    if len(set(manifest.classes)) != len(manifest.classes):
        raise ManifestError("class names must be unique")
    if not manifest.classes:
        raise ManifestError("class list is empty")
    for rid, record in manifest.records.items():
        if rid != record.id:
            raise ManifestError(f"record keyed as {rid!r} carries id {record.id!r}")
        validate_record(record, manifest.classes)


def validate_size_constraint(manifest: DatasetManifest) -> SizeCheck:
    """True iff |train| + |validation| is strictly below the n_max budget."""
    train = manifest.split_count("train")
    val = manifest.split_count("validation")
    return SizeCheck(ok=train + val < manifest.n_max, train_count=train,
                     validation_count=val, n_max=manifest.n_max)


def class_histogram(manifest: DatasetManifest, split: str) -> dict[str, int]:
    """Per-class counts of non-rejected records in `split`, zero-filled."""
    if split not in SPLITS:
        raise ManifestError(f"invalid split {split!r}")
    counts = {name: 0 for name in manifest.classes}
    for record in manifest.records.values():
        if record.split == split and record.status != "rejected":
            counts[record.label] += 1
    return counts


def load_manifest(path: str | Path) -> DatasetManifest:
    """Parse and fully validate a manifest file.

    Parse errors carry the line number; invariant violations name the record.
    """
    path = Path(path)
    try:
        with path.open("r", encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise ManifestError(f"cannot read manifest {path}: {exc}") from exc
    if not lines or not lines[0].strip():
        raise ManifestError(f"{path}: missing header line")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}:1: bad header: {exc}") from exc
    for key in ("schema_version", "n_max", "classes"):
        if key not in header:
            raise ManifestError(f"{path}:1: header missing {key!r}")
    if header["schema_version"] != SCHEMA_VERSION:
        raise ManifestError(
            f"{path}:1: unsupported schema_version {header['schema_version']} "
            f"(expected {SCHEMA_VERSION})"
        )
    manifest = DatasetManifest(classes=list(header["classes"]), n_max=int(header["n_max"]))
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            payload = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ManifestError(f"{path}:{lineno}: bad record: {exc}") from exc
        try:
            record = SampleRecord.from_payload(payload)
        except ManifestError as exc:
            raise ManifestError(f"{path}:{lineno}: {exc}") from exc
        if record.id in manifest.records:
            raise ManifestError(f"{path}:{lineno}: duplicate sample id {record.id!r}")
        manifest.records[record.id] = record
    validate_manifest(manifest)
    return manifest


def save_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    """Atomically write the manifest: temp file in the target directory + rename.

    A failed write never leaves a partial file at the target path.
    """
    validate_manifest(manifest)
    path = Path(path)
    header = json.dumps(
        {"schema_version": manifest.schema_version, "n_max": manifest.n_max,
         "classes": manifest.classes},
        ensure_ascii=False,
    )
    fd, tmp_name = tempfile.mkstemp(dir=str(path.parent), prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(header + "\n")
            for rid in sorted(manifest.records):
                fh.write(manifest.records[rid].to_line() + "\n")
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp_name, path)
    except BaseException:
        try:
            os.unlink(tmp_name)
        except OSError:
            pass
        raise
