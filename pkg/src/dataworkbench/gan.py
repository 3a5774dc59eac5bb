"""Conditional GAN that synthesizes hard examples for a frozen classifier.

The generator (8 conv layers, batch norm + ReLU everywhere except the output)
maps a 64-long normal noise vector concatenated with a class embedding to a
32x32 grayscale image. The discriminator (5 conv layers, leaky ReLU 0.2) sees
the image plus a learned per-class plane. The generator is trained to be
called real by the discriminator while raising the frozen classifier's
cross-entropy:

    gen_loss = delta * BCE(real, d(fake)) - gamma * CCE(labels, c(fake))

gamma ramps linearly from 0 to gamma_max over the configured number of
iterations; early training is plain conditional-GAN training, and the
classifier-feedback pressure grows as samples become realistic. The
classifier parameters are checksummed during training: any drift is a hard
error.
"""

from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import BudgetError, GanTrainingError
from .manifest import DatasetManifest, SampleRecord, validate_size_constraint
from .training import ArrayDataset

log = logging.getLogger(__name__)

BUNDLE_FORMAT_VERSION = 1
PROB_EPS = 1e-7  # probabilities are clamped to [eps, 1 - eps] before any log


@dataclass(frozen=True)
class GeneratorSpec:
    noise_length: int = 64
    embed_length: int = 16
    base_channels: int = 32
    num_classes: int = 10
    image_size: int = 32

    def __post_init__(self):
        if self.noise_length < 1 or self.embed_length < 1 or self.base_channels < 1:
            raise ValueError("generator dimensions must be positive")
        if self.image_size != 32:
            raise ValueError("generator emits 32x32 images")


@dataclass(frozen=True)
class DiscriminatorSpec:
    leaky_alpha: float = 0.2
    base_channels: int = 32
    num_classes: int = 10
    image_size: int = 32

    def __post_init__(self):
        if not 0 < self.leaky_alpha < 1:
            raise ValueError("leaky_alpha must be in (0, 1)")


@dataclass(frozen=True)
class GanTrainConfig:
    batch_size: int = 32
    learning_rate: float = 1e-4
    delta: float = 1.0
    gamma_max: float = 0.5
    gamma_ramp_iterations: int = 200_000
    max_iterations: int = 200_000
    seed: int = 0
    log_interval: int = 100

    def __post_init__(self):
        if self.gamma_max < 0 or self.delta < 0:
            raise ValueError("gamma_max and delta must be >= 0")
        if self.gamma_ramp_iterations < 1:
            raise ValueError("gamma_ramp_iterations must be >= 1")
        if self.gamma_ramp_iterations > self.max_iterations:
            raise ValueError("gamma_ramp_iterations cannot exceed max_iterations")
        if self.batch_size < 1 or self.max_iterations < 1:
            raise ValueError("batch_size and max_iterations must be >= 1")


@dataclass(frozen=True)
class SamplerConfig:
    mean: float = 0.0
    std: float = 1.0
    truncation: float = 0.7
    count: int = 1

    def __post_init__(self):
        if not self.truncation > 0:
            raise ValueError("truncation must be > 0")
        if self.std <= 0:
            raise ValueError("std must be > 0")
        if self.count < 0:
            raise ValueError("count must be >= 0")


class Generator(nn.Module):
    """Noise + class embedding -> 32x32 grayscale image in [0, 1]."""

    def __init__(self, spec: GeneratorSpec):
        super().__init__()
        self.spec = spec
        self.embed = nn.Embedding(spec.num_classes, spec.embed_length)
        c = spec.base_channels
        inputs = spec.noise_length + spec.embed_length

        def up(cin, cout):  # 2x upsample conv
            return nn.ConvTranspose2d(cin, cout, 4, stride=2, padding=1, bias=False)

        self.net = nn.Sequential(
            nn.ConvTranspose2d(inputs, c * 8, 4, stride=1, padding=0, bias=False),  # 4x4
            nn.BatchNorm2d(c * 8), nn.ReLU(inplace=True),
            up(c * 8, c * 4),                                                       # 8x8
            nn.BatchNorm2d(c * 4), nn.ReLU(inplace=True),
            nn.Conv2d(c * 4, c * 4, 3, padding=1, bias=False),
            nn.BatchNorm2d(c * 4), nn.ReLU(inplace=True),
            up(c * 4, c * 2),                                                       # 16x16
            nn.BatchNorm2d(c * 2), nn.ReLU(inplace=True),
            nn.Conv2d(c * 2, c * 2, 3, padding=1, bias=False),
            nn.BatchNorm2d(c * 2), nn.ReLU(inplace=True),
            up(c * 2, c),                                                           # 32x32
            nn.BatchNorm2d(c), nn.ReLU(inplace=True),
            nn.Conv2d(c, c, 3, padding=1, bias=False),
            nn.BatchNorm2d(c), nn.ReLU(inplace=True),
            nn.Conv2d(c, 1, 3, padding=1),  # output layer: no norm
            nn.Tanh(),
        )

    def forward(self, noise: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
        e = self.embed(labels)
        x = torch.cat([noise, e], dim=1)[:, :, None, None]
        return (self.net(x) + 1.0) / 2.0  # tanh range mapped to [0, 1]


class Discriminator(nn.Module):
    """Image + class plane -> probability the sample is real."""

    def __init__(self, spec: DiscriminatorSpec):
        super().__init__()
        self.spec = spec
        size = spec.image_size
        self.plane = nn.Embedding(spec.num_classes, size * size)
        c = spec.base_channels
        a = spec.leaky_alpha
        self.net = nn.Sequential(
            nn.Conv2d(2, c, 4, stride=2, padding=1), nn.LeakyReLU(a, inplace=True),       # 16
            nn.Conv2d(c, c * 2, 4, stride=2, padding=1), nn.LeakyReLU(a, inplace=True),   # 8
            nn.Conv2d(c * 2, c * 4, 4, stride=2, padding=1), nn.LeakyReLU(a, inplace=True),  # 4
            nn.Conv2d(c * 4, c * 8, 4, stride=2, padding=1), nn.LeakyReLU(a, inplace=True),  # 2
            nn.Conv2d(c * 8, 1, 2, stride=1, padding=0),
            nn.Sigmoid(),
        )

    def forward(self, image: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
        size = self.spec.image_size
        plane = self.plane(labels).view(-1, 1, size, size)
        return self.net(torch.cat([image, plane], dim=1)).flatten()


def conv_layer_count(module: nn.Module) -> int:
    return sum(1 for m in module.modules()
               if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d)))


def generator_loss(disc_probs: torch.Tensor, class_probs: torch.Tensor | None,
                   labels: torch.Tensor, gamma: float, delta: float) -> torch.Tensor:
    """delta * BCE(real, disc_probs) - gamma * CCE(labels, class_probs), batch-averaged.

    Natural log throughout; probabilities clamped to [1e-7, 1 - 1e-7].
    class_probs may be None only when gamma == 0 (plain adversarial loss).
    """
    p = torch.clamp(disc_probs, PROB_EPS, 1.0 - PROB_EPS)
    bce = -torch.log(p).mean()
    if class_probs is None:
        if gamma != 0.0:
            raise ValueError("class_probs required when gamma != 0")
        return delta * bce
    q = torch.clamp(class_probs.gather(1, labels[:, None]).squeeze(1),
                    PROB_EPS, 1.0 - PROB_EPS)
    cce = -torch.log(q).mean()
    return delta * bce - gamma * cce


def discriminator_loss(real_probs: torch.Tensor, fake_probs: torch.Tensor) -> torch.Tensor:
    """BCE(real -> 1) + BCE(fake -> 0), batch-averaged, natural log."""
    p_real = torch.clamp(real_probs, PROB_EPS, 1.0 - PROB_EPS)
    p_fake = torch.clamp(fake_probs, PROB_EPS, 1.0 - PROB_EPS)
    return -torch.log(p_real).mean() - torch.log(1.0 - p_fake).mean()


def gamma_schedule(iteration: int, config: GanTrainConfig) -> float:
    """Linear ramp from 0 at iteration 0 to gamma_max at the ramp end, then flat."""
    if iteration < 0:
        raise ValueError("iteration must be >= 0")
    return config.gamma_max * min(1.0, iteration / config.gamma_ramp_iterations)


def sample_noise(config: SamplerConfig, noise_length: int,
                 rng: np.random.Generator) -> np.ndarray:
    """(count, noise_length) draws from mean + std * N(0,1) conditioned on
    |z| <= truncation in standard units, by rejection sampling.

    truncation = inf gives the plain normal used during training.
    """
    shape = (config.count, noise_length)
    z = rng.standard_normal(shape)
    if math.isfinite(config.truncation):
        bad = np.abs(z) > config.truncation
        while bad.any():
            z[bad] = rng.standard_normal(int(bad.sum()))
            bad = np.abs(z) > config.truncation
    return (config.mean + config.std * z).astype(np.float32)


def classifier_checksum(classifier: nn.Module) -> str:
    """SHA-256 over all parameters and buffers in state-dict order."""
    digest = hashlib.sha256()
    for name, tensor in sorted(classifier.state_dict().items()):
        digest.update(name.encode())
        digest.update(tensor.detach().cpu().numpy().tobytes())
    return digest.hexdigest()


@dataclass
class GanBundle:
    """Everything needed to reproduce and run a trained synthesizer."""

    generator: Generator
    discriminator: Discriminator
    classifier: nn.Module | None
    gen_spec: GeneratorSpec
    disc_spec: DiscriminatorSpec
    config: GanTrainConfig
    classifier_digest: str | None
    iterations: int

    @property
    def bundle_id(self) -> str:
        return f"gan-s{self.config.seed}-i{self.iterations}"


@dataclass
class GanHistory:
    entries: list[dict] = field(default_factory=list)
    aborted_at: int | None = None

    def log(self, iteration: int, d_loss: float, g_loss: float, gamma: float) -> None:
        self.entries.append({"iteration": iteration, "d_loss": d_loss,
                             "g_loss": g_loss, "gamma": gamma})


def _infinite_batches(dataset: ArrayDataset, batch_size: int, rng: np.random.Generator):
    n = len(dataset)
    while True:
        order = rng.permutation(n)
        for lo in range(0, n - batch_size + 1, batch_size):
            idx = order[lo:lo + batch_size]
            yield dataset.images[idx], dataset.labels[idx]


def train_gan(dataset: ArrayDataset, classifier: nn.Module | None,
              gen_spec: GeneratorSpec, disc_spec: DiscriminatorSpec,
              config: GanTrainConfig,
              checksum_interval: int = 1000) -> tuple[GanBundle, GanHistory]:
    """Alternating discriminator/generator training with classifier feedback.

    The classifier is frozen: eval mode, no gradients, and its parameter
    checksum is re-verified every `checksum_interval` iterations (drift is a
    GanTrainingError). classifier=None is allowed only when gamma_max == 0,
    in which case training is a plain conditional GAN. A non-finite loss
    aborts training and returns the nets from the last finite-loss snapshot.
    """
    if classifier is None and config.gamma_max != 0.0:
        raise ValueError("a frozen classifier is required when gamma_max > 0")
    if len(dataset) < config.batch_size:
        raise ValueError("dataset smaller than one batch")
    present = set(np.unique(dataset.labels).tolist())
    missing = set(range(gen_spec.num_classes)) - present
    if missing:
        raise ValueError(f"dataset lacks classes {sorted(missing)}")

    torch.manual_seed(config.seed)
    gen = Generator(gen_spec)
    disc = Discriminator(disc_spec)
    digest = None
    if classifier is not None:
        classifier.eval()
        for p in classifier.parameters():
            p.requires_grad_(False)
        digest = classifier_checksum(classifier)

    opt_g = torch.optim.Adam(gen.parameters(), lr=config.learning_rate, betas=(0.5, 0.999))
    opt_d = torch.optim.Adam(disc.parameters(), lr=config.learning_rate, betas=(0.5, 0.999))
    batches = _infinite_batches(dataset, config.batch_size, np.random.default_rng(config.seed))
    history = GanHistory()

    def _snapshot(iteration):
        return {"gen": {k: v.clone() for k, v in gen.state_dict().items()},
                "disc": {k: v.clone() for k, v in disc.state_dict().items()},
                "iteration": iteration}

    snapshot = _snapshot(0)

    done = 0
    for iteration in range(config.max_iterations):
        real_np, labels_np = next(batches)
        real = torch.from_numpy(np.ascontiguousarray(real_np[:, None, :, :], dtype=np.float32))
        labels = torch.from_numpy(labels_np)
        noise = torch.randn(config.batch_size, gen_spec.noise_length)

        # Discriminator step on real + detached fake.
        fake = gen(noise, labels)
        d_loss = discriminator_loss(disc(real, labels), disc(fake.detach(), labels))
        opt_d.zero_grad()
        d_loss.backward()
        opt_d.step()

        # Generator step against the updated discriminator and the frozen classifier.
        gamma = gamma_schedule(iteration, config)
        noise_g = torch.randn(config.batch_size, gen_spec.noise_length)
        fake_g = gen(noise_g, labels)
        class_probs = None
        if classifier is not None:
            class_probs = torch.softmax(classifier(fake_g), dim=1)
        g_loss = generator_loss(disc(fake_g, labels), class_probs, labels,
                                gamma=gamma, delta=config.delta)
        opt_g.zero_grad()
        g_loss.backward()
        opt_g.step()

        d_val, g_val = float(d_loss.item()), float(g_loss.item())
        if not (math.isfinite(d_val) and math.isfinite(g_val)):
            log.error("non-finite loss at iteration %d; restoring snapshot from %d",
                      iteration, snapshot["iteration"])
            gen.load_state_dict(snapshot["gen"])
            disc.load_state_dict(snapshot["disc"])
            history.aborted_at = iteration
            done = snapshot["iteration"]
            break
        done = iteration + 1
        if iteration % config.log_interval == 0 or iteration == config.max_iterations - 1:
            history.log(iteration, d_val, g_val, gamma)
            snapshot = _snapshot(iteration + 1)
        if classifier is not None and (iteration + 1) % checksum_interval == 0:
            if classifier_checksum(classifier) != digest:
                raise GanTrainingError("frozen classifier parameters drifted during training")

    if classifier is not None and classifier_checksum(classifier) != digest:
        raise GanTrainingError("frozen classifier parameters drifted during training")
    gen.eval()
    disc.eval()
    bundle = GanBundle(generator=gen, discriminator=disc, classifier=classifier,
                       gen_spec=gen_spec, disc_spec=disc_spec, config=config,
                       classifier_digest=digest, iterations=done)
    return bundle, history


@torch.no_grad()
def generate_images(bundle: GanBundle, class_index: int, count: int,
                    sampler: SamplerConfig, rng: np.random.Generator) -> np.ndarray:
    """(count, H, W) float images in [0, 1], conditioned on one class."""
    if count == 0:
        return np.zeros((0, bundle.gen_spec.image_size, bundle.gen_spec.image_size),
                        dtype=np.float32)
    bundle.generator.eval()
    cfg = SamplerConfig(mean=sampler.mean, std=sampler.std,
                        truncation=sampler.truncation, count=count)
    noise = torch.from_numpy(sample_noise(cfg, bundle.gen_spec.noise_length, rng))
    labels = torch.full((count,), class_index, dtype=torch.long)
    out = bundle.generator(noise, labels).clamp(0.0, 1.0)
    return out[:, 0, :, :].numpy()


def synthesize(bundle: GanBundle, class_name: str, count: int, sampler: SamplerConfig,
               rng: np.random.Generator, manifest: DatasetManifest,
               images_root: str | Path,
               out_subdir: str = "synthetic") -> tuple[DatasetManifest, list[str]]:
    """Export `count` synthesized samples of one class into the manifest.

    Images are written as PNGs under images_root/out_subdir and recorded with
    label=class_name, status=certified_synthetic, split=train, and provenance
    in the note. Refuses to start if the export would break the size budget.
    """
    from . import images as imageio
    from .dedup import DedupConfig, compute_hashes

    check = validate_size_constraint(manifest)
    if check.train_count + check.validation_count + count >= manifest.n_max:
        raise BudgetError(
            f"exporting {count} samples would break the size budget "
            f"({check.train_count} + {check.validation_count} + {count} >= {manifest.n_max})")
    out = manifest.copy()
    if count == 0:
        return out, []
    class_index = out.class_index(class_name)
    imgs = generate_images(bundle, class_index, count, sampler, rng)
    root = Path(images_root)
    hash_config = DedupConfig()
    new_ids = []
    serial = 0
    for i in range(count):
        while True:
            sid = f"syn-{class_name}-{serial:06d}"
            serial += 1
            if sid not in out.records:
                break
        rel_path = f"{out_subdir}/{sid}.png"
        imageio.save_png(imgs[i], root / rel_path)
        record = SampleRecord(
            id=sid, image_path=rel_path, byte_hash="", label=class_name,
            split="train", status="certified_synthetic",
            note=f"synthesized by {bundle.bundle_id} truncation={sampler.truncation}")
        record.byte_hash, record.pixel_hash, record.phash = compute_hashes(
            record, hash_config, root)
        out.add_record(record)
        new_ids.append(sid)
    return out, new_ids


def save_bundle(bundle: GanBundle, path: str | Path) -> None:
    payload = {
        "format_version": BUNDLE_FORMAT_VERSION,
        "gen_spec": asdict(bundle.gen_spec),
        "disc_spec": asdict(bundle.disc_spec),
        "config": asdict(bundle.config),
        "generator_state": bundle.generator.state_dict(),
        "discriminator_state": bundle.discriminator.state_dict(),
        "classifier_digest": bundle.classifier_digest,
        "iterations": bundle.iterations,
    }
    if bundle.classifier is not None:
        payload["classifier_config"] = asdict(bundle.classifier.config)
        payload["classifier_state"] = bundle.classifier.state_dict()
    torch.save(payload, Path(path))


def load_bundle(path: str | Path) -> GanBundle:
    from .models import ModelConfig, build_model

    payload = torch.load(Path(path), map_location="cpu", weights_only=False)
    if payload.get("format_version") != BUNDLE_FORMAT_VERSION:
        raise ValueError(f"unsupported bundle version {payload.get('format_version')}")
    gen_spec = GeneratorSpec(**payload["gen_spec"])
    disc_spec = DiscriminatorSpec(**payload["disc_spec"])
    config = GanTrainConfig(**payload["config"])
    gen = Generator(gen_spec)
    gen.load_state_dict(payload["generator_state"])
    gen.eval()
    disc = Discriminator(disc_spec)
    disc.load_state_dict(payload["discriminator_state"])
    disc.eval()
    classifier = None
    if "classifier_state" in payload:
        cfg = payload["classifier_config"]
        cfg["input_size"] = tuple(cfg["input_size"])
        classifier = build_model(ModelConfig(**cfg))
        classifier.load_state_dict(payload["classifier_state"])
        classifier.eval()
    return GanBundle(generator=gen, discriminator=disc, classifier=classifier,
                     gen_spec=gen_spec, disc_spec=disc_spec, config=config,
                     classifier_digest=payload["classifier_digest"],
                     iterations=payload["iterations"])
