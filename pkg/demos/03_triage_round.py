"""One full triage round on a noisy corpus, with a simulated supervisor.

Builds 300 glyph samples with 12% flipped labels, certifies an 80-sample seed
set, trains the small CNN on it, ranks the rest by loss, flags K=40 head and
L=15 tail samples, applies simulated verdicts, and prints the round metrics.
Watch the tail: it should be dominated by the flipped-label samples.

Run:  python3 demos/03_triage_round.py   (about a minute on CPU)
"""

import tempfile
from pathlib import Path

import numpy as np
import torch

from dataworkbench.manifest import save_manifest, validate_size_constraint
from dataworkbench.models import ModelConfig, build_model
from dataworkbench.pipeline import (GroundTruth, SimulatedSupervisor,
                                    resplit_certified)
from dataworkbench.training import (ArrayDataset, TrainConfig,
                                    infer_losses_from_manifest, train)
from dataworkbench.triage import (TriageConfig, apply_verdicts, compute_round_stats,
                                  flag_for_review, pipeline_accuracy, ratio_validated)

from _glyphs import write_corpus  # noqa: E402  (shared demo corpus helper)

work = Path(tempfile.mkdtemp(prefix="triage-demo-"))
manifest, truth_labels, flipped = write_corpus(work, n=300, seed=1, flip_fraction=0.12)
truth = GroundTruth(labels=truth_labels)
supervisor = SimulatedSupervisor(truth, seed=1)
print(f"corpus: {len(manifest.records)} samples, "
      f"{len(flipped)} flipped labels, workspace {work}")

# Seed certification: 80 random samples reviewed before any model exists.
rng = np.random.default_rng(1)
seed_ids = sorted(rng.choice(sorted(manifest.records), size=80, replace=False))
for sid in seed_ids:
    record = manifest.records[sid]
    record.label = truth_labels[sid]
    record.status = "certified"
    record.split = "train"
    record.version += 1
print(f"seed set certified: {len(seed_ids)} samples "
      f"(ratio validated {ratio_validated(manifest):.1%})")

train_ids, val_ids = resplit_certified(manifest, 0.1, rng)
torch.manual_seed(1)
model = build_model(ModelConfig(architecture="small_cnn", num_classes=10))
model, history = train(
    model,
    ArrayDataset.from_manifest(manifest, train_ids, work),
    ArrayDataset.from_manifest(manifest, val_ids, work),
    TrainConfig(epochs=40, batch_size=8, early_stopping=False, seed=1),
    n_max=manifest.n_max)
best = history.best() or history.final()
print(f"aux model: {len(train_ids)}/{len(val_ids)} split, "
      f"val accuracy {best.val_accuracy:.1%}")

pending = sorted(r.id for r in manifest.records.values() if r.status == "unverified")
report = infer_losses_from_manifest(model, manifest, pending, work)
manifest, selection = flag_for_review(manifest, report, TriageConfig(k=40, l=15), 1)

flipped_set = set(flipped)
tail_hits = sum(1 for sid in selection.tail_ids if sid in flipped_set)
print(f"\nflagged {len(selection.head_ids)} head + {len(selection.tail_ids)} tail")
print(f"tail samples that really are mislabeled: {tail_hits}/{len(selection.tail_ids)}")

verdicts = supervisor.verdicts_for(manifest, selection)
manifest = apply_verdicts(manifest, verdicts)
print(f"\npipeline accuracy: {pipeline_accuracy(selection, verdicts):.1%}")
stats = compute_round_stats(manifest, selection)
print(f"round stats: {stats}")
print(f"budget check: {validate_size_constraint(manifest)}")
save_manifest(manifest, work / "manifest.jsonl")
print(f"manifest saved to {work / 'manifest.jsonl'}")
