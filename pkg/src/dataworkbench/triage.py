"""Loss-ranked triage: flag the confident head and suspect tail for human
review, apply verdicts, and compute round metrics.

Each round: rank inferred samples by ascending loss, take the first K (the
model trusts these; a human confirms) and the last L (probable label errors;
a human corrects), persist the selection, then fold the verdicts back into
the manifest. Ties in loss break by sample id so selections are reproducible.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from datetime import datetime, timezone
from pathlib import Path

from .errors import BudgetError, TriageError, VersionConflict
from .manifest import (DatasetManifest, VALIDATED_STATUSES, validate_manifest,
                       validate_size_constraint)
from .training import LossReport

ACTIONS = ("certify", "relabel", "reject", "ambiguous")

# A tail sample counts as confirmed when the human took any corrective action;
# a head sample only when the human certified it as-is.
TAIL_CONFIRMING_ACTIONS = ("reject", "ambiguous", "relabel")


@dataclass(frozen=True)
class TriageConfig:
    k: int = 500
    l: int = 100
    require_confirmation_of_head: bool = True

    def __post_init__(self):
        if self.k < 0 or self.l < 0:
            raise ValueError("k and l must be >= 0")


@dataclass
class TriageSelection:
    """The flagged sets of one round, with the evidence that flagged them."""

    round: int
    head_ids: list[str] = field(default_factory=list)
    tail_ids: list[str] = field(default_factory=list)
    losses: dict[str, float] = field(default_factory=dict)
    suggested: dict[str, str] = field(default_factory=dict)  # id -> model's label

    def flagged_ids(self) -> list[str]:
        return self.head_ids + self.tail_ids

    def kind_of(self, sample_id: str) -> str:
        if sample_id in self.head_ids:
            return "confident_head"
        if sample_id in self.tail_ids:
            return "suspect_tail"
        raise TriageError(f"sample {sample_id!r} not flagged in round {self.round}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, payload: dict) -> "TriageSelection":
        return cls(round=payload["round"], head_ids=list(payload["head_ids"]),
                   tail_ids=list(payload["tail_ids"]),
                   losses=dict(payload["losses"]), suggested=dict(payload["suggested"]))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "TriageSelection":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass
class ReviewVerdict:
    """One human decision on one flagged sample."""

    sample_id: str
    action: str
    round: int
    new_label: str | None = None
    reviewer: str = "reviewer"
    timestamp: str = ""
    expected_version: int | None = None

    def __post_init__(self):
        if self.action not in ACTIONS:
            raise TriageError(f"unknown action {self.action!r}")
        if self.action == "relabel" and not self.new_label:
            raise TriageError(f"relabel verdict for {self.sample_id!r} needs new_label")
        if not self.timestamp:
            self.timestamp = datetime.now(timezone.utc).isoformat()


@dataclass
class RoundReport:
    round: int
    train_size: int
    validation_size: int
    train_accuracy: float
    validation_accuracy: float
    pipeline_accuracy: float
    ratio_validated: float

    def to_dict(self) -> dict:
        return asdict(self)


def rank_by_loss(report: LossReport) -> list[str]:
    """Sample ids in ascending loss order; ties break lexicographically by id."""
    if not report.entries:
        raise TriageError("empty loss report")
    return [e.id for e in sorted(report.entries, key=lambda e: (e.loss, e.id))]


def select_head_tail(ordered: list[str], config: TriageConfig) -> tuple[list[str], list[str]]:
    """First k (confident head) and last l (suspect tail) of the ranking."""
    if config.k + config.l > len(ordered):
        raise TriageError(
            f"k + l = {config.k + config.l} exceeds the {len(ordered)} ranked samples; "
            "choose a smaller K or L")
    head = list(ordered[:config.k])
    tail = list(ordered[len(ordered) - config.l:]) if config.l else []
    return head, tail


def flag_for_review(manifest: DatasetManifest, report: LossReport, config: TriageConfig,
                    round_index: int) -> tuple[DatasetManifest, TriageSelection]:
    """Select head/tail from the report and mark those records as flagged.

    Flagged records get the round stamp, their inferred loss, and (when the
    model disagrees with the stored label) the model's suggested label.
    """
    ordered = rank_by_loss(report)
    head, tail = select_head_tail(ordered, config)
    out = manifest.copy()
    selection = TriageSelection(round=round_index, head_ids=head, tail_ids=tail)
    by_id = {e.id: e for e in report.entries}
    for sid in selection.flagged_ids():
        entry = by_id[sid]
        record = out.get(sid)
        if record.status != "unverified":
            raise TriageError(f"sample {sid!r} is not unverified (status={record.status!r})")
        record.round = round_index
        record.loss = entry.loss
        if entry.predicted != record.label:
            record.suggested_label = entry.predicted
            selection.suggested[sid] = entry.predicted
        record.version += 1
        selection.losses[sid] = entry.loss
    return out, selection


def _already_applied(record, verdict: ReviewVerdict) -> bool:
    if verdict.action == "certify":
        return record.status == "certified"
    if verdict.action == "relabel":
        return record.status == "relabeled" and record.label == verdict.new_label
    if verdict.action == "reject":
        return record.status == "rejected"
    return record.status == "ambiguous"


def apply_verdicts(manifest: DatasetManifest, verdicts: list[ReviewVerdict]) -> DatasetManifest:
    """Fold verdicts into a copy of the manifest; the original is untouched.

    certify -> certified/train; relabel -> label replaced, relabeled/train;
    reject and ambiguous -> excluded from all model-facing splits. Re-applying
    an already-applied verdict is a no-op. Any failure (unknown or unflagged
    sample, stale version, broken size budget) raises before anything is
    committed.
    """
    out = manifest.copy()
    for verdict in verdicts:
        record = out.get(verdict.sample_id)
        if record.round != verdict.round:
            raise TriageError(
                f"sample {verdict.sample_id!r} is not flagged in round {verdict.round} "
                f"(record round: {record.round})")
        if _already_applied(record, verdict):
            continue
        if verdict.expected_version is not None and verdict.expected_version != record.version:
            raise VersionConflict(
                f"sample {verdict.sample_id!r}: expected version {verdict.expected_version}, "
                f"found {record.version}")
        if record.status != "unverified":
            raise TriageError(
                f"sample {verdict.sample_id!r} already has a conflicting verdict "
                f"(status={record.status!r})")
        if verdict.action == "certify":
            record.status = "certified"
            record.split = "train"
        elif verdict.action == "relabel":
            if verdict.new_label not in out.classes:
                raise TriageError(f"unknown class {verdict.new_label!r}")
            if verdict.new_label == record.label:
                raise TriageError(
                    f"relabel verdict for {verdict.sample_id!r} repeats the current label")
            record.note = f"relabeled from {record.label} in round {verdict.round}"
            record.label = verdict.new_label
            record.suggested_label = verdict.new_label
            record.status = "relabeled"
            record.split = "train"
        elif verdict.action == "reject":
            record.status = "rejected"
            record.split = "unassigned"
        else:  # ambiguous
            record.status = "ambiguous"
            record.split = "unassigned"
        record.version += 1
    check = validate_size_constraint(out)
    if not check.ok:
        raise BudgetError(
            f"applying verdicts would break the size budget: "
            f"{check.train_count} + {check.validation_count} >= {check.n_max}")
    validate_manifest(out)
    return out


def pipeline_accuracy(selection: TriageSelection, verdicts: list[ReviewVerdict],
                      mode: str = "corrective") -> float:
    """Fraction of flagged samples whose model assessment the human confirmed.

    Head samples were flagged valid: confirmed by certify. Tail samples were
    flagged invalid: under the default "corrective" mode any corrective action
    (reject, ambiguous, relabel) confirms the flag; under "suggestion_match" a
    relabel only confirms when it matches the model's suggested label.
    """
    if mode not in ("corrective", "suggestion_match"):
        raise ValueError(f"unknown mode {mode!r}")
    by_id = {v.sample_id: v for v in verdicts}
    missing = [sid for sid in selection.flagged_ids() if sid not in by_id]
    if missing:
        raise TriageError(f"missing verdicts for flagged samples: {missing[:5]}")
    total = len(selection.flagged_ids())
    if total == 0:
        return 1.0
    confirmed = 0
    for sid in selection.head_ids:
        if by_id[sid].action == "certify":
            confirmed += 1
    for sid in selection.tail_ids:
        action = by_id[sid].action
        if action not in TAIL_CONFIRMING_ACTIONS:
            continue
        if mode == "suggestion_match" and action == "relabel":
            if by_id[sid].new_label != selection.suggested.get(sid):
                continue
        confirmed += 1
    return confirmed / total


def ratio_validated(manifest: DatasetManifest) -> float:
    """Validated (certified/relabeled/synthetic) fraction of the non-rejected corpus."""
    alive = [r for r in manifest.records.values() if r.status != "rejected"]
    if not alive:
        return 0.0
    validated = sum(1 for r in alive if r.status in VALIDATED_STATUSES)
    return validated / len(alive)


def round_report(manifest: DatasetManifest, history, selection: TriageSelection,
                 verdicts: list[ReviewVerdict], round_index: int) -> RoundReport:
    """Table-style metrics for one completed round."""
    best = history.best() or history.final()
    return RoundReport(
        round=round_index,
        train_size=history.train_size,
        validation_size=history.val_size,
        train_accuracy=best.train_accuracy if best else 0.0,
        validation_accuracy=best.val_accuracy if best else 0.0,
        pipeline_accuracy=pipeline_accuracy(selection, verdicts),
        ratio_validated=ratio_validated(manifest),
    )


def compute_round_stats(manifest: DatasetManifest, selection: TriageSelection) -> dict:
    """Live stats for a round in progress, recomputed from manifest state.

    A flagged sample's verdict outcome is its manifest status, so the running
    pipeline accuracy needs no separate verdict log. pipeline_accuracy is None
    until at least one flagged sample is reviewed.
    """
    reviewed, confirmed = 0, 0
    for sid in selection.head_ids:
        status = manifest.get(sid).status
        if status != "unverified":
            reviewed += 1
            confirmed += status == "certified"
    for sid in selection.tail_ids:
        status = manifest.get(sid).status
        if status != "unverified":
            reviewed += 1
            confirmed += status in ("rejected", "ambiguous", "relabeled")
    total = len(selection.flagged_ids())
    return {
        "round": selection.round,
        "reviewed": reviewed,
        "total": total,
        "pipeline_accuracy": (confirmed / reviewed) if reviewed else None,
        "ratio_validated": ratio_validated(manifest),
        "train_size": manifest.split_count("train"),
        "validation_size": manifest.split_count("validation"),
    }


def triage_ledger_path(manifest_path: str | Path) -> Path:
    """Sidecar file holding every round's selection, next to the manifest."""
    manifest_path = Path(manifest_path)
    return manifest_path.with_name(manifest_path.name + ".triage.json")


def load_triage_ledger(path: str | Path) -> dict[int, TriageSelection]:
    path = Path(path)
    if not path.exists():
        return {}
    payload = json.loads(path.read_text(encoding="utf-8"))
    return {int(k): TriageSelection.from_dict(v) for k, v in payload["rounds"].items()}


def record_selection(path: str | Path, selection: TriageSelection) -> None:
    ledger = load_triage_ledger(path)
    ledger[selection.round] = selection
    payload = {"rounds": {str(k): v.to_dict() for k, v in sorted(ledger.items())}}
    Path(path).write_text(json.dumps(payload, indent=2), encoding="utf-8")
