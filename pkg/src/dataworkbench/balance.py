"""Class balancing via a surplus pool, test-set selection, and N-fold splits.

Balancing trims every class down to the minimum class count, parking the
randomly chosen excess in split="surplus" with a sequence number so restores
are FIFO by original move order (round-robin across classes, most-starved
class first). Folding is stratified: per class, samples are dealt into folds
so per-class fold sizes differ by at most one, and every (train, validation)
pair drawn from the plan respects the size budget strictly.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import BudgetError, ManifestError
from .manifest import DatasetManifest, SampleRecord, VALIDATED_STATUSES

log = logging.getLogger(__name__)

# Splits that take part in balancing/folding. Post-triage, validated samples
# live in train (and transiently validation during aux rounds).
ACTIVE_SPLITS = ("train", "validation")


@dataclass
class FoldPlan:
    """A stratified N-fold partition of the active pool, plus the test set.

    Fold i's validation set is fold i; its train set is every other fold.
    """

    n_folds: int
    assignments: dict[str, int]
    test_ids: list[str]
    seed: int

    def fold_ids(self, fold: int) -> list[str]:
        return sorted(sid for sid, f in self.assignments.items() if f == fold)

    def validation_ids(self, fold: int) -> list[str]:
        return self.fold_ids(fold)

    def train_ids(self, fold: int) -> list[str]:
        return sorted(sid for sid, f in self.assignments.items() if f != fold)

    def to_dict(self) -> dict:
        return {"n_folds": self.n_folds, "assignments": self.assignments,
                "test_ids": self.test_ids, "seed": self.seed}

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "FoldPlan":
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(n_folds=payload["n_folds"], assignments=dict(payload["assignments"]),
                   test_ids=list(payload["test_ids"]), seed=payload["seed"])


def active_pool(manifest: DatasetManifest) -> list[SampleRecord]:
    """Validated records currently assigned to a model-facing split."""
    return sorted(
        (r for r in manifest.records.values()
         if r.split in ACTIVE_SPLITS and r.status in VALIDATED_STATUSES),
        key=lambda r: r.id)


def _require_all_validated(manifest: DatasetManifest) -> None:
    bad = sorted(r.id for r in manifest.records.values()
                 if r.split in ACTIVE_SPLITS and r.status not in VALIDATED_STATUSES)
    if bad:
        raise ManifestError(
            f"balancing requires every in-scope sample to be certified or relabeled; "
            f"unvalidated: {bad[:5]}" + ("..." if len(bad) > 5 else ""))


def balance_classes(manifest: DatasetManifest, rng: np.random.Generator) -> DatasetManifest:
    """Equalize class counts by moving random excess samples to the surplus pool."""
    _require_all_validated(manifest)
    out = manifest.copy()
    pool = active_pool(out)
    counts = {name: 0 for name in out.classes}
    by_class: dict[str, list[SampleRecord]] = {name: [] for name in out.classes}
    for record in pool:
        counts[record.label] += 1
        by_class[record.label].append(record)
    empty = [name for name, c in counts.items() if c == 0]
    if empty:
        raise ManifestError(f"cannot balance: class(es) with zero samples: {empty}")
    target = min(counts.values())
    next_rank = 1 + max((r.surplus_rank or 0 for r in out.records.values()), default=0)
    for name in out.classes:
        members = by_class[name]
        excess = len(members) - target
        if excess <= 0:
            continue
        chosen = rng.choice(len(members), size=excess, replace=False)
        for i in sorted(int(c) for c in chosen):
            record = members[i]
            record.split = "surplus"
            record.surplus_rank = next_rank
            next_rank += 1
            record.version += 1
    return out


def restore_from_surplus(manifest: DatasetManifest, budget: int,
                         rng: np.random.Generator) -> DatasetManifest:
    """Move up to `budget` surplus samples back to train.

    Round-robin across classes (the class with the fewest active samples is
    served first; rng breaks ties), FIFO within a class by original move
    order. Never violates the size budget.
    """
    if budget < 0:
        raise ValueError("budget must be >= 0")
    out = manifest.copy()
    queues: dict[str, list[SampleRecord]] = {name: [] for name in out.classes}
    for record in sorted(out.records.values(), key=lambda r: (r.surplus_rank or 0, r.id)):
        if record.split == "surplus":
            queues[record.label].append(record)
    counts = {name: 0 for name in out.classes}
    for record in active_pool(out):
        counts[record.label] += 1
    moved = 0
    while moved < budget:
        candidates = [name for name in out.classes if queues[name]]
        if not candidates:
            break
        if out.budget_count() + 1 >= out.n_max:
            log.warning("surplus restore stopped by the size budget (n_max=%d)", out.n_max)
            break
        low = min(counts[name] for name in candidates)
        tied = [name for name in candidates if counts[name] == low]
        name = tied[int(rng.integers(len(tied)))] if len(tied) > 1 else tied[0]
        record = queues[name].pop(0)
        record.split = "train"
        record.surplus_rank = None
        record.version += 1
        counts[name] += 1
        moved += 1
    return out


def select_test_set(manifest: DatasetManifest, size: int,
                    rng: np.random.Generator) -> DatasetManifest:
    """Randomly mark `size` active samples as the held-out test split.

    Selection is class-stratified; when the per-class quota is infeasible it
    falls back to an unstratified uniform draw with a warning.
    """
    if size < 0:
        raise ValueError("size must be >= 0")
    out = manifest.copy()
    if size == 0:
        return out
    pool = active_pool(out)
    if size > len(pool):
        raise ManifestError(f"test size {size} exceeds the active pool ({len(pool)})")
    by_class: dict[str, list[SampleRecord]] = {name: [] for name in out.classes}
    for record in pool:
        by_class[record.label].append(record)
    quotas = {name: size // len(out.classes) for name in out.classes}
    remainder = size - sum(quotas.values())
    if remainder:
        extra = rng.choice(len(out.classes), size=remainder, replace=False)
        for i in extra:
            quotas[out.classes[int(i)]] += 1
    chosen: list[SampleRecord] = []
    if all(len(by_class[name]) >= quotas[name] for name in out.classes):
        for name in out.classes:
            if quotas[name] == 0:
                continue
            members = by_class[name]
            picks = rng.choice(len(members), size=quotas[name], replace=False)
            chosen.extend(members[int(i)] for i in picks)
    else:
        log.warning("stratified test selection infeasible for size %d; "
                    "falling back to an unstratified draw", size)
        picks = rng.choice(len(pool), size=size, replace=False)
        chosen = [pool[int(i)] for i in picks]
    for record in chosen:
        record.split = "test"
        record.version += 1
    return out


def make_folds(manifest: DatasetManifest, n_folds: int,
               rng: np.random.Generator, seed: int = 0) -> FoldPlan:
    """Stratified random partition of the active pool into n_folds folds.

    `seed` is recorded in the plan for provenance; pass the seed that built
    `rng`.
    """
    if n_folds < 2:
        raise ValueError("n_folds must be >= 2")
    pool = active_pool(manifest)
    if len(pool) < n_folds:
        raise ManifestError(f"active pool ({len(pool)}) smaller than n_folds ({n_folds})")
    if len(pool) >= manifest.n_max:
        raise BudgetError(
            f"fold plans from a pool of {len(pool)} cannot satisfy "
            f"|train| + |validation| < n_max = {manifest.n_max}")
    assignments: dict[str, int] = {}
    offset = 0
    for name in manifest.classes:
        members = [r.id for r in pool if r.label == name]
        order = rng.permutation(len(members))
        for j, i in enumerate(order):
            assignments[members[int(i)]] = (offset + j) % n_folds
        offset += len(members)  # rotate the dealing start so fold totals even out
    test_ids = manifest.split_ids("test")
    return FoldPlan(n_folds=n_folds, assignments=assignments, test_ids=test_ids, seed=seed)
