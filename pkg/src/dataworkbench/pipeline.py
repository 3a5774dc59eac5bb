"""Round orchestration: wire dedup, training, triage, review, balancing and
synthesis into resumable rounds driven by one TOML config.

All orchestrator state lives in files (the manifest, the triage sidecar, and
per-round artifacts under out_dir), so a killed run resumes from where it
stopped and re-running a completed round is a no-op. Round 0 is the seed
round: a random sample of the corpus is flagged for plain human certification
before any model exists; training rounds start at 1.

Verdicts come from one of two supervisors: "file" mode waits for a
round_R/verdicts.json written by a human (via the review service or by
hand), pausing the pipeline; "simulated" mode answers from a ground-truth
file, optionally with noise, so end-to-end runs need no human.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .augment import AugmentConfig, DashedLineParams, SpotParams
from .dedup import DedupConfig
from .errors import ManifestError, TriageError
from .gan import GanTrainConfig
from .manifest import (DatasetManifest, SampleRecord, VALIDATED_STATUSES,
                       load_manifest, save_manifest, validate_size_constraint)
from .models import ModelConfig, build_model, load_model, save_model
from .training import (ArrayDataset, LossReport, TrainConfig, TrainHistory,
                       infer_losses_from_manifest, train)
from .triage import (ReviewVerdict, TriageConfig, TriageSelection, apply_verdicts,
                     flag_for_review, ratio_validated, record_selection,
                     round_report, triage_ledger_path)

log = logging.getLogger(__name__)

SEED_ROUND = 0


@dataclass(frozen=True)
class SupervisorConfig:
    mode: str = "file"  # "file" | "simulated"
    truth_path: str | None = None
    noise: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("file", "simulated"):
            raise ValueError(f"unknown supervisor mode {self.mode!r}")
        if not 0 <= self.noise < 1:
            raise ValueError("noise must be in [0, 1)")


@dataclass
class PipelineConfig:
    manifest_path: Path
    images_root: Path
    out_dir: Path
    model: ModelConfig = ModelConfig(architecture="small_cnn")
    train: TrainConfig = TrainConfig()
    triage: TriageConfig = TriageConfig()
    dedup: DedupConfig = DedupConfig()
    gan: GanTrainConfig = GanTrainConfig()
    supervisor: SupervisorConfig = SupervisorConfig()
    seed_set_size: int = 200
    validation_fraction: float = 0.1
    n_folds: int = 8
    test_size: int = 0
    seed: int = 13

    def round_dir(self, round_index: int) -> Path:
        return self.out_dir / f"round_{round_index}"

    def ledger_path(self) -> Path:
        return self.out_dir / "rounds.jsonl"

    def meta_path(self) -> Path:
        return self.out_dir / "meta.json"


def _build(cls, payload: dict, **tuple_fields):
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(payload) - known
    if unknown:
        raise ValueError(f"unknown {cls.__name__} keys {sorted(unknown)}")
    coerced = dict(payload)
    for name, value in coerced.items():
        if name in tuple_fields and isinstance(value, list):
            coerced[name] = tuple(value)
    return cls(**coerced)


def _augment_from_dict(aug_doc: dict) -> AugmentConfig:
    aug_doc = dict(aug_doc)
    for key in ("black_spots", "white_spots"):
        if key in aug_doc:
            aug_doc[key] = _build(SpotParams, aug_doc[key], count=(), radius=())
    if "dashed_lines" in aug_doc:
        aug_doc["dashed_lines"] = _build(DashedLineParams, aug_doc["dashed_lines"],
                                         count=(), length=())
    return _build(AugmentConfig, aug_doc)


def _train_from_doc(doc: dict) -> TrainConfig:
    train_doc = dict(doc.get("train", {}))
    aug_doc = train_doc.pop("augment", None)
    train_config = _build(TrainConfig, train_doc)
    if aug_doc is not None:
        train_config = dataclasses.replace(train_config, augment=_augment_from_dict(aug_doc))
    return train_config


def _read_toml(path: str | Path) -> dict:
    with Path(path).open("rb") as fh:
        return tomllib.load(fh)


def load_train_toml(path: str | Path) -> tuple[ModelConfig, TrainConfig]:
    """[model] and [train]/[train.augment] tables for the train-aux CLI."""
    doc = _read_toml(path)
    return (_build(ModelConfig, doc.get("model", {}), input_size=()),
            _train_from_doc(doc))


def load_augment_toml(path: str | Path) -> AugmentConfig:
    doc = _read_toml(path)
    return _augment_from_dict(doc.get("augment", doc))


def load_gan_toml(path: str | Path):
    from .gan import DiscriminatorSpec, GeneratorSpec

    doc = _read_toml(path)
    return (_build(GeneratorSpec, doc.get("generator", {})),
            _build(DiscriminatorSpec, doc.get("discriminator", {})),
            _build(GanTrainConfig, doc.get("gan", {})))


def load_config(path: str | Path) -> PipelineConfig:
    """Parse the single-document TOML pipeline config."""
    path = Path(path)
    doc = _read_toml(path)
    paths = doc.get("paths", {})
    for key in ("manifest", "images_root", "out_dir"):
        if key not in paths:
            raise ValueError(f"[paths] must set {key}")
    base = path.parent

    def respath(p):
        p = Path(p)
        return p if p.is_absolute() else base / p

    train_config = _train_from_doc(doc)
    pipe = doc.get("pipeline", {})
    supervisor = _build(SupervisorConfig, doc.get("supervisor", {}))
    if supervisor.truth_path:
        supervisor = dataclasses.replace(supervisor,
                                         truth_path=str(respath(supervisor.truth_path)))
    return PipelineConfig(
        manifest_path=respath(paths["manifest"]),
        images_root=respath(paths["images_root"]),
        out_dir=respath(paths["out_dir"]),
        model=_build(ModelConfig, doc.get("model", {}), input_size=()),
        train=train_config,
        triage=_build(TriageConfig, doc.get("triage", {})),
        dedup=_build(DedupConfig, doc.get("dedup", {}), canonical_size=()),
        gan=_build(GanTrainConfig, doc.get("gan", {})),
        supervisor=supervisor,
        seed_set_size=pipe.get("seed_set_size", 200),
        validation_fraction=pipe.get("validation_fraction", 0.1),
        n_folds=pipe.get("n_folds", 8),
        test_size=pipe.get("test_size", 0),
        seed=pipe.get("seed", 13),
    )


@dataclass
class GroundTruth:
    """What the simulated supervisor knows about every sample."""

    labels: dict[str, str]
    invalid: set[str] = field(default_factory=set)
    ambiguous: set[str] = field(default_factory=set)

    @classmethod
    def load(cls, path: str | Path) -> "GroundTruth":
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(labels=dict(payload["labels"]),
                   invalid=set(payload.get("invalid", [])),
                   ambiguous=set(payload.get("ambiguous", [])))

    def save(self, path: str | Path) -> None:
        payload = {"labels": self.labels, "invalid": sorted(self.invalid),
                   "ambiguous": sorted(self.ambiguous)}
        Path(path).write_text(json.dumps(payload, indent=2), encoding="utf-8")


class SimulatedSupervisor:
    """Ground-truth-backed auto-verdicts with configurable noise.

    Noise models a careless reviewer: with probability `noise` a flagged
    sample is certified as-is instead of getting the correct decision.
    """

    def __init__(self, truth: GroundTruth, noise: float = 0.0, seed: int = 0):
        self.truth = truth
        self.noise = noise
        self.rng = np.random.default_rng(seed)

    def verdicts_for(self, manifest: DatasetManifest,
                     selection: TriageSelection) -> list[ReviewVerdict]:
        verdicts = []
        for sid in selection.flagged_ids():
            record = manifest.get(sid)
            if self.noise and self.rng.random() < self.noise:
                verdicts.append(ReviewVerdict(sample_id=sid, action="certify",
                                              round=selection.round, reviewer="sim-noisy"))
                continue
            if sid in self.truth.invalid:
                action, new_label = "reject", None
            elif sid in self.truth.ambiguous:
                action, new_label = "ambiguous", None
            elif record.label == self.truth.labels.get(sid, record.label):
                action, new_label = "certify", None
            else:
                action, new_label = "relabel", self.truth.labels[sid]
            verdicts.append(ReviewVerdict(sample_id=sid, action=action,
                                          new_label=new_label, round=selection.round,
                                          reviewer="sim"))
        return verdicts


def load_rounds_ledger(path: str | Path) -> dict[int, dict]:
    path = Path(path)
    if not path.exists():
        return {}
    out = {}
    for line in path.read_text(encoding="utf-8").splitlines():
        if line.strip():
            entry = json.loads(line)
            out[entry["round"]] = entry
    return out


def append_round(path: str | Path, entry: dict) -> None:
    with Path(path).open("a", encoding="utf-8") as fh:
        fh.write(json.dumps(entry) + "\n")


def _ensure_meta(config: PipelineConfig, manifest: DatasetManifest) -> dict:
    meta_path = config.meta_path()
    if meta_path.exists():
        return json.loads(meta_path.read_text(encoding="utf-8"))
    meta = {
        "baseline_records": sum(1 for r in manifest.records.values()
                                if r.status != "rejected"),
        "baseline_budget": manifest.budget_count(),
        "n_max": manifest.n_max,
    }
    meta_path.parent.mkdir(parents=True, exist_ok=True)
    meta_path.write_text(json.dumps(meta, indent=2), encoding="utf-8")
    return meta


def _certified_pool(manifest: DatasetManifest) -> list[str]:
    return sorted(r.id for r in manifest.records.values()
                  if r.status in VALIDATED_STATUSES and r.split in ("train", "validation"))


def _unverified_ids(manifest: DatasetManifest) -> list[str]:
    return sorted(r.id for r in manifest.records.values() if r.status == "unverified")


def resplit_certified(manifest: DatasetManifest, fraction: float,
                       rng: np.random.Generator) -> tuple[list[str], list[str]]:
    """Stratified train/validation re-split of the certified pool, in place."""
    pool = _certified_pool(manifest)
    by_class: dict[str, list[str]] = {}
    for sid in pool:
        by_class.setdefault(manifest.get(sid).label, []).append(sid)
    val_ids: set[str] = set()
    for name in sorted(by_class):
        members = by_class[name]
        n_val = int(round(fraction * len(members)))
        if len(members) > 1:
            n_val = min(max(n_val, 1), len(members) - 1)
        else:
            n_val = 0
        picks = rng.choice(len(members), size=n_val, replace=False)
        val_ids.update(members[int(i)] for i in picks)
    train_ids = []
    for sid in pool:
        record = manifest.get(sid)
        new_split = "validation" if sid in val_ids else "train"
        if record.split != new_split:
            record.split = new_split
            record.version += 1
        if new_split == "train":
            train_ids.append(sid)
    return train_ids, sorted(val_ids)


def _seed_round_selection(manifest: DatasetManifest, size: int,
                          rng: np.random.Generator) -> tuple[DatasetManifest, TriageSelection]:
    """Flag a uniform random sample of unverified records as round 0."""
    out = manifest.copy()
    candidates = _unverified_ids(out)
    if not candidates:
        raise ManifestError("no unverified samples to seed from")
    size = min(size, len(candidates))
    picks = rng.choice(len(candidates), size=size, replace=False)
    chosen = sorted(candidates[int(i)] for i in picks)
    for sid in chosen:
        record = out.get(sid)
        record.round = SEED_ROUND
        record.version += 1
    selection = TriageSelection(round=SEED_ROUND, head_ids=chosen, tail_ids=[])
    return out, selection


def _load_supervisor(config: PipelineConfig) -> SimulatedSupervisor | None:
    if config.supervisor.mode != "simulated":
        return None
    if not config.supervisor.truth_path:
        raise ValueError("simulated supervisor needs supervisor.truth_path")
    truth = GroundTruth.load(config.supervisor.truth_path)
    return SimulatedSupervisor(truth, noise=config.supervisor.noise,
                               seed=config.supervisor.seed)


def _obtain_verdicts(config: PipelineConfig, manifest: DatasetManifest,
                     selection: TriageSelection) -> list[ReviewVerdict]:
    """Verdicts available right now: a verdicts file (possibly partial),
    the simulated supervisor, or nothing (review happens via the service)."""
    verdicts_path = config.round_dir(selection.round) / "verdicts.json"
    if verdicts_path.exists():
        payload = json.loads(verdicts_path.read_text(encoding="utf-8"))
        return [ReviewVerdict(**v) for v in payload]
    supervisor = _load_supervisor(config)
    if supervisor is None:
        return []
    verdicts = supervisor.verdicts_for(manifest, selection)
    verdicts_path.parent.mkdir(parents=True, exist_ok=True)
    verdicts_path.write_text(
        json.dumps([dataclasses.asdict(v) for v in verdicts], indent=2), encoding="utf-8")
    return verdicts


def _verdicts_from_statuses(manifest: DatasetManifest,
                            selection: TriageSelection) -> list[ReviewVerdict]:
    status_to_action = {"certified": "certify", "relabeled": "relabel",
                        "rejected": "reject", "ambiguous": "ambiguous"}
    verdicts = []
    for sid in selection.flagged_ids():
        record = manifest.get(sid)
        action = status_to_action[record.status]
        verdicts.append(ReviewVerdict(
            sample_id=sid, action=action, round=selection.round,
            new_label=record.label if action == "relabel" else None,
            reviewer="service"))
    return verdicts


def run_round(config: PipelineConfig, round_index: int) -> dict:
    """Execute one pipeline round; resumable and idempotent.

    Returns {"round", "status", ...} where status is one of
    "already_completed", "awaiting_verdicts", or "completed".
    """
    ledger = load_rounds_ledger(config.ledger_path())
    if round_index in ledger:
        return {"round": round_index, "status": "already_completed",
                "report": ledger[round_index]}
    manifest = load_manifest(config.manifest_path)
    _ensure_meta(config, manifest)
    round_dir = config.round_dir(round_index)
    round_dir.mkdir(parents=True, exist_ok=True)
    queue_path = round_dir / "queue.json"
    history = TrainHistory(train_size=0, val_size=0)

    if queue_path.exists():
        selection = TriageSelection.load(queue_path)
        history_path = round_dir / "history.json"
        if history_path.exists():
            history = _history_from_json(history_path)
    elif round_index == SEED_ROUND:
        rng = np.random.default_rng([config.seed, round_index])
        manifest, selection = _seed_round_selection(manifest, config.seed_set_size, rng)
        save_manifest(manifest, config.manifest_path)
        selection.save(queue_path)
        record_selection(triage_ledger_path(config.manifest_path), selection)
    else:
        if not _certified_pool(manifest):
            raise ManifestError(
                f"round {round_index} needs a certified seed set; run round 0 first")
        rng = np.random.default_rng([config.seed, round_index])
        train_ids, val_ids = resplit_certified(manifest, config.validation_fraction, rng)
        save_manifest(manifest, config.manifest_path)
        check = validate_size_constraint(manifest)
        if not check.ok:
            raise ManifestError(f"size budget violated before training: {check}")

        model_path = round_dir / "model.bin"
        history_path = round_dir / "history.json"
        if model_path.exists() and history_path.exists():
            model = load_model(model_path)
            history = _history_from_json(history_path)
        else:
            torch.manual_seed(config.seed + round_index)
            model = build_model(config.model)
            train_set = ArrayDataset.from_manifest(manifest, train_ids, config.images_root)
            val_set = ArrayDataset.from_manifest(manifest, val_ids, config.images_root)
            model, history = train(model, train_set, val_set, config.train,
                                   n_max=manifest.n_max)
            save_model(model, model_path)
            history.save(history_path)

        losses_path = round_dir / "losses.json"
        if losses_path.exists():
            report = LossReport.load(losses_path)
        else:
            pending = _unverified_ids(manifest)
            if not pending:
                raise TriageError("no unverified samples left to triage")
            report = infer_losses_from_manifest(model, manifest, pending, config.images_root)
            report.save(losses_path)

        n_ranked = len(report.entries)
        l_eff = min(config.triage.l, n_ranked)
        k_eff = min(config.triage.k, n_ranked - l_eff)
        if (k_eff, l_eff) != (config.triage.k, config.triage.l):
            log.info("round %d: clamping K/L from (%d, %d) to (%d, %d) for %d samples",
                     round_index, config.triage.k, config.triage.l, k_eff, l_eff, n_ranked)
        manifest, selection = flag_for_review(
            manifest, report, TriageConfig(k=k_eff, l=l_eff), round_index)
        save_manifest(manifest, config.manifest_path)
        selection.save(queue_path)
        record_selection(triage_ledger_path(config.manifest_path), selection)

    verdicts = _obtain_verdicts(config, manifest, selection)
    if verdicts:
        manifest = apply_verdicts(manifest, verdicts)
        save_manifest(manifest, config.manifest_path)
    still_pending = [sid for sid in selection.flagged_ids()
                     if manifest.get(sid).status == "unverified"]
    if still_pending:
        pause = {"round": round_index, "awaiting": "verdicts",
                 "pending": len(still_pending), "queue": str(queue_path),
                 "verdicts": str(config.round_dir(round_index) / "verdicts.json")}
        (round_dir / "pause.json").write_text(json.dumps(pause, indent=2), encoding="utf-8")
        log.info("round %d paused: %d verdicts outstanding (write %s or use the "
                 "review service)", round_index, len(still_pending), pause["verdicts"])
        return {"round": round_index, "status": "awaiting_verdicts", **pause}

    # Reconstruct the full verdict list from record statuses so the report
    # covers every flagged sample however its verdict arrived (file, service,
    # simulated, or across several resumes).
    final_verdicts = _verdicts_from_statuses(manifest, selection)
    report = round_report(manifest, history, selection, final_verdicts, round_index)
    entry = report.to_dict()
    append_round(config.ledger_path(), entry)
    (round_dir / "pause.json").unlink(missing_ok=True)
    return {"round": round_index, "status": "completed", "report": entry}


def _history_from_json(path: Path) -> TrainHistory:
    from .training import EpochStats

    payload = json.loads(path.read_text(encoding="utf-8"))
    return TrainHistory(train_size=payload["train_size"], val_size=payload["val_size"],
                        best_epoch=payload["best_epoch"],
                        epochs=[EpochStats(**e) for e in payload["epochs"]])


def run_until_validated(config: PipelineConfig, target_ratio: float) -> list[dict]:
    """Loop rounds until ratio_validated reaches the target.

    Raises if a round completes without any progress (a diagnostic for
    supervisor misconfiguration or an exhausted corpus).
    """
    if not 0 < target_ratio <= 1:
        raise ValueError("target_ratio must be in (0, 1]")
    results = []
    manifest = load_manifest(config.manifest_path)
    ratio = ratio_validated(manifest)
    ledger = load_rounds_ledger(config.ledger_path())
    next_round = max(ledger) + 1 if ledger else SEED_ROUND
    while ratio < target_ratio:
        result = run_round(config, next_round)
        results.append(result)
        if result["status"] == "awaiting_verdicts":
            break
        new_ratio = ratio_validated(load_manifest(config.manifest_path))
        if result["status"] == "completed" and new_ratio <= ratio and next_round > SEED_ROUND:
            raise RuntimeError(
                f"round {next_round} made no progress (ratio stuck at {ratio:.3f}); "
                "check the supervisor configuration or lower the target")
        ratio = new_ratio
        next_round += 1
    return results


def build_report(config: PipelineConfig) -> str:
    """Markdown summary: per-round table plus the current dataset state."""
    manifest = load_manifest(config.manifest_path)
    ledger = load_rounds_ledger(config.ledger_path())
    meta = _ensure_meta(config, manifest)
    lines = ["# Dataset curation report", ""]
    lines += ["## Auxiliary-model rounds", ""]
    lines += ["| Round | Train | Validation | Train acc | Val acc | Pipeline acc "
              "| Ratio validated |",
              "|---|---|---|---|---|---|---|"]
    for round_index in sorted(k for k in ledger if k != SEED_ROUND):
        e = ledger[round_index]
        lines.append(
            f"| {e['round']} | {e['train_size']} | {e['validation_size']} "
            f"| {e['train_accuracy']:.0%} | {e['validation_accuracy']:.0%} "
            f"| {e['pipeline_accuracy']:.0%} | {e['ratio_validated']:.0%} |")
    lines += ["", "## Dataset state", ""]
    by_split = {s: manifest.split_count(s)
                for s in ("train", "validation", "test", "surplus", "unassigned")}
    by_status = {}
    for record in manifest.records.values():
        by_status[record.status] = by_status.get(record.status, 0) + 1
    lines += ["| Split | Count |", "|---|---|"]
    lines += [f"| {name} | {count} |" for name, count in by_split.items()]
    lines += ["", "| Status | Count |", "|---|---|"]
    lines += [f"| {name} | {count} |" for name, count in sorted(by_status.items())]
    current_budget = manifest.budget_count()
    baseline = meta["baseline_records"]
    lines += ["", f"Baseline corpus: {baseline} records; "
                  f"current train+validation: {current_budget}; "
                  f"budget n_max: {manifest.n_max}."]
    if current_budget:
        lines += [f"Size ratio vs baseline: {baseline / current_budget:.2f}x smaller."]
    lines += ["", f"Ratio validated: {ratio_validated(manifest):.1%}.", ""]
    return "\n".join(lines)


def ingest_directory(images_dir: str | Path, n_max: int,
                     classes: list[str] | None = None) -> DatasetManifest:
    """Build a manifest from a directory laid out as images_dir/<class>/<file>.png."""
    import hashlib

    images_dir = Path(images_dir)
    subdirs = sorted(p.name for p in images_dir.iterdir() if p.is_dir())
    class_list = classes if classes is not None else subdirs
    if not class_list:
        raise ManifestError(f"no class subdirectories under {images_dir}")
    manifest = DatasetManifest(classes=list(class_list), n_max=n_max)
    for name in class_list:
        class_dir = images_dir / name
        if not class_dir.is_dir():
            continue
        for file in sorted(class_dir.glob("*.png")):
            sid = f"{name}_{file.stem}"
            manifest.add_record(SampleRecord(
                id=sid, image_path=f"{name}/{file.name}",
                byte_hash=hashlib.sha256(file.read_bytes()).hexdigest(), label=name))
    if not manifest.records:
        raise ManifestError(f"no PNG files found under {images_dir}")
    return manifest
