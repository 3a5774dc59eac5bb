"""Class balancing into the surplus pool, restore priority, and 8-fold plans.

Run:  python3 demos/04_balance_and_folds.py
"""

import numpy as np

from dataworkbench.balance import (balance_classes, make_folds, restore_from_surplus,
                                   select_test_set)
from dataworkbench.manifest import (DatasetManifest, SampleRecord, class_histogram,
                                    validate_size_constraint)

rng = np.random.default_rng(3)
classes = ["i", "ii", "iii", "iv", "v", "vi", "vii", "viii", "ix", "x"]
counts = {name: int(rng.integers(60, 140)) for name in classes}

manifest = DatasetManifest(classes=classes, n_max=2000)
serial = 0
for name, count in counts.items():
    for _ in range(count):
        manifest.records[f"r{serial:05d}"] = SampleRecord(
            id=f"r{serial:05d}", image_path="x.png", byte_hash="0" * 64, label=name,
            split="train", status="certified")
        serial += 1

print("class counts before balancing:")
print("  ", dict(class_histogram(manifest, "train")))

balanced = balance_classes(manifest, rng)
print("\nafter balance_classes (everything equals the min class count):")
print("  ", dict(class_histogram(balanced, "train")))
print(f"  surplus pool: {balanced.split_count('surplus')} samples "
      f"(tagged with FIFO restore ranks)")

# Restore a few: round-robin across classes, FIFO within each class.
restored = restore_from_surplus(balanced, budget=25, rng=rng)
print("\nafter restoring 25 from surplus:")
print("  ", dict(class_histogram(restored, "train")))

with_test = select_test_set(restored, 100, rng)
print(f"\nstratified test set: {dict(class_histogram(with_test, 'test'))}")

plan = make_folds(with_test, 8, rng, seed=3)
sizes = [len(plan.fold_ids(f)) for f in range(8)]
print(f"\n8-fold plan over the remaining pool: fold sizes {sizes}")
for fold in (0, 7):
    v, t = plan.validation_ids(fold), plan.train_ids(fold)
    print(f"  fold {fold}: train {len(t)}, validation {len(v)}, "
          f"budget ok: {len(t) + len(v) < with_test.n_max}")
print(f"\nbudget check on the manifest itself: {validate_size_constraint(with_test)}")
