"""Dataset curation workbench for small image-classification corpora.

The pipeline: deduplicate (staged hashing), train an auxiliary classifier on
a certified seed set, rank the rest by loss, route the confident head and
suspect tail through human review, iterate until the corpus is validated,
then balance classes, emit N-fold splits, and optionally synthesize hard
examples with a classifier-guided conditional GAN.
"""

from .augment import AugmentConfig, DashedLineParams, SpotParams, augment
from .balance import (FoldPlan, balance_classes, make_folds, restore_from_surplus,
                      select_test_set)
from .dedup import (DedupConfig, DuplicateGroup, LeakagePair, compute_hashes,
                    compute_missing_hashes, find_duplicates, find_split_leakage,
                    resolve_duplicates)
from .errors import (BudgetError, GanTrainingError, ImageDecodeError, ManifestError,
                     TriageError, VersionConflict, WorkbenchError)
from .gan import (DiscriminatorSpec, GanBundle, GanTrainConfig, GeneratorSpec,
                  SamplerConfig, discriminator_loss, gamma_schedule, generator_loss,
                  sample_noise, synthesize, train_gan)
from .manifest import (ClassLabel, DatasetManifest, SampleRecord, class_histogram,
                       load_manifest, save_manifest, validate_size_constraint)
from .models import ModelConfig, build_model, load_model, save_model
from .training import (ArrayDataset, LossEntry, LossReport, TrainConfig, TrainHistory,
                       infer_losses, infer_losses_from_manifest, train)
from .triage import (ReviewVerdict, RoundReport, TriageConfig, TriageSelection,
                     apply_verdicts, flag_for_review, pipeline_accuracy, rank_by_loss,
                     ratio_validated, round_report, select_head_tail)

__version__ = "0.1.0"
