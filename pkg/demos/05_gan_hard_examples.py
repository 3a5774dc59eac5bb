"""Train the classifier-guided conditional GAN briefly and export samples.

The generator learns to look real to the discriminator while raising the
frozen classifier's cross-entropy (the gamma-weighted feedback term), so the
exported images gravitate toward the classifier's confusion regions. This
desk-scale run (600 iterations, 3 classes) is only meant to show the moving
parts and the loss traces, not to produce pretty samples.

Run:  python3 demos/05_gan_hard_examples.py   (a few minutes on CPU)
"""

import tempfile
from pathlib import Path

import numpy as np
import torch

from dataworkbench import images as imageio
from dataworkbench.gan import (DiscriminatorSpec, GanTrainConfig, GeneratorSpec,
                               SamplerConfig, classifier_checksum, gamma_schedule,
                               generate_images, sample_noise, synthesize, train_gan)
from dataworkbench.manifest import DatasetManifest, SampleRecord
from dataworkbench.models import ModelConfig, build_model, predict_proba
from dataworkbench.training import ArrayDataset, TrainConfig, train

from _glyphs import glyph_sample  # noqa: E402  (shared demo corpus helper)

work = Path(tempfile.mkdtemp(prefix="gan-demo-"))
rng = np.random.default_rng(4)
classes = ["a", "b", "c"]
images = np.stack([glyph_sample(i % 3, rng) for i in range(240)])
labels = np.array([i % 3 for i in range(240)], dtype=np.int64)
data = ArrayDataset(ids=[f"g{i}" for i in range(240)], images=images, labels=labels)

torch.manual_seed(4)
classifier = build_model(ModelConfig(architecture="small_cnn", num_classes=3))
classifier, _ = train(classifier, data, data,
                      TrainConfig(epochs=6, batch_size=32, early_stopping=False, seed=4))
digest = classifier_checksum(classifier)
print(f"frozen classifier checksum: {digest[:16]}...")

config = GanTrainConfig(batch_size=32, learning_rate=1e-4, delta=1.0, gamma_max=0.5,
                        gamma_ramp_iterations=600, max_iterations=600,
                        log_interval=100, seed=4)
print(f"gamma ramp: {[round(gamma_schedule(i, config), 3) for i in range(0, 601, 100)]}")

bundle, history = train_gan(data, classifier,
                            GeneratorSpec(base_channels=16, num_classes=3),
                            DiscriminatorSpec(base_channels=16, num_classes=3),
                            config)
print("\niteration |  d_loss |  g_loss | gamma")
for entry in history.entries:
    print(f"{entry['iteration']:9d} | {entry['d_loss']:7.3f} | {entry['g_loss']:7.3f} "
          f"| {entry['gamma']:.3f}")
print(f"classifier unchanged: {classifier_checksum(classifier) == digest}")

# Truncated latents trade diversity for fidelity at export time.
z = sample_noise(SamplerConfig(truncation=0.7, count=1000), 64, rng)
print(f"\ntruncated latents: max |z| = {np.abs(z).max():.3f} (threshold 0.7)")

grid = []
for class_index in range(3):
    out = generate_images(bundle, class_index, 6, SamplerConfig(truncation=0.7),
                          np.random.default_rng(5 + class_index))
    grid.append(np.concatenate(list(out), axis=1))
    probs = predict_proba(classifier, out)
    print(f"class {classes[class_index]}: classifier confidence on its own class "
          f"{probs[:, class_index].mean():.2f} (lower = harder examples)")
imageio.save_png(np.concatenate(grid, axis=0), Path(__file__).with_name("gan_samples.png"))
print(f"sample grid -> {Path(__file__).with_name('gan_samples.png')}")

manifest = DatasetManifest(classes=classes, n_max=10_000)
manifest.add_record(SampleRecord(id="seed", image_path="x.png", byte_hash="0" * 64,
                                 label="a", split="train", status="certified"))
for name in classes:
    manifest, new_ids = synthesize(bundle, name, 4, SamplerConfig(truncation=0.7),
                                   rng, manifest, work)
    print(f"exported {len(new_ids)} synthetic records for class {name}")
print(f"manifest now holds {len(manifest.records)} records under {work}")
