"""Acceptance gate: one test per acceptance criterion, tolerances pinned.

Run with `pytest tests/test_acceptance.py -v -s` to see one PASS line per
criterion. The heavy smokes (auxiliary trainer, end-to-end pipeline, GAN)
run at desk scale on CPU and assert their stated wall-clock budgets.
"""

from __future__ import annotations

import json
import math
import time


import numpy as np
import pytest
import torch
import torch.nn.functional as F

from dataworkbench import images as imageio
from dataworkbench.balance import balance_classes, make_folds
from dataworkbench.dedup import DedupConfig, compute_missing_hashes, find_duplicates
from dataworkbench.gan import (DiscriminatorSpec, GanTrainConfig, GeneratorSpec,
                               SamplerConfig, classifier_checksum, discriminator_loss,
                               gamma_schedule, generate_images, generator_loss,
                               sample_noise, synthesize, train_gan)
from dataworkbench.manifest import (DatasetManifest, SampleRecord, class_histogram,
                                    load_manifest, save_manifest,
                                    validate_size_constraint)
from dataworkbench.models import ModelConfig, build_model, predict_proba, to_batch
from dataworkbench.pipeline import (GroundTruth, load_config, load_rounds_ledger,
                                    run_round)
from dataworkbench.training import (ArrayDataset, LossEntry, LossReport, TrainConfig,
                                    train)
from dataworkbench.triage import (ReviewVerdict, TriageConfig, TriageSelection,
                                  pipeline_accuracy, rank_by_loss, select_head_tail)
from conftest import fake_hash, glyph_sample, make_corpus
from test_dedup import as_set, oracle_groups, perturb_for_near_dup


def ok(name: str) -> None:
    print(f"\nACCEPTANCE PASS: {name}")


# ------------------------------------------------------------------ dedup ----

def test_acceptance_dedup_oracle_equivalence(tmp_path):
    rng = np.random.default_rng(424242)
    manifest = DatasetManifest(classes=["i"], n_max=100_000)
    names = []

    def add(name):
        manifest.add_record(SampleRecord(id=name, image_path=f"{name}.png",
                                         byte_hash="", label="i"))
        names.append(name)

    # 420 singletons + 40 pair sources = 460 unique images
    for i in range(460):
        img = rng.random((32, 32)).astype(np.float32)
        imageio.save_png(img, tmp_path / f"u{i:03d}.png")
        add(f"u{i:03d}")
    # 20 exact byte-duplicate partners
    for i in range(20):
        (tmp_path / f"xb{i:02d}.png").write_bytes((tmp_path / f"u{i:03d}.png").read_bytes())
        add(f"xb{i:02d}")
    # 10 metadata-variant partners (same pixels, different bytes)
    from PIL import Image
    from PIL.PngImagePlugin import PngInfo

    for i in range(10):
        src = imageio.load_image(tmp_path / f"u{i + 20:03d}.png")
        meta = PngInfo()
        meta.add_text("comment", f"variant {i}")
        Image.fromarray(imageio.quantize(src), mode="L").save(
            tmp_path / f"xp{i:02d}.png", format="PNG", pnginfo=meta, compress_level=1)
        add(f"xp{i:02d}")
    # 10 near-duplicate partners within Hamming 6
    for i in range(10):
        src = imageio.load_image(tmp_path / f"u{i + 30:03d}.png")
        imageio.save_png(perturb_for_near_dup(src, rng, threshold=6),
                         tmp_path / f"xn{i:02d}.png")
        add(f"xn{i:02d}")
    assert len(names) == 500

    config = DedupConfig(hamming_threshold=6)
    start = time.perf_counter()
    failures = compute_missing_hashes(manifest, config, tmp_path)
    groups = find_duplicates(manifest, config)
    elapsed = time.perf_counter() - start
    assert not failures
    assert elapsed < 10.0, f"dedup took {elapsed:.2f}s"

    got = as_set(groups)
    want = oracle_groups(list(manifest.records.values()), 6)
    assert got == want  # staged cascade set-equals brute force

    by_kind = {"exact_bytes": set(), "exact_pixels": set(), "near": set()}
    for kind, members, _ in got:
        by_kind[kind].add(members)
    assert by_kind["exact_bytes"] == {(f"u{i:03d}", f"xb{i:02d}") for i in range(20)}
    assert by_kind["exact_pixels"] == {(f"u{i + 20:03d}", f"xp{i:02d}") for i in range(10)}
    assert by_kind["near"] == {(f"u{i + 30:03d}", f"xn{i:02d}") for i in range(10)}
    ok(f"dedup oracle equivalence (500 images, 40 planted pairs, {elapsed:.2f}s)")


# ----------------------------------------------------------------- triage ----

def test_acceptance_triage_correctness():
    rng = np.random.default_rng(77)
    for trial in range(1000):
        n = int(rng.integers(2, 40))
        losses = {f"s{i:03d}": float(rng.choice([rng.random(), 0.5]))
                  for i in range(n)}
        report = LossReport(entries=[
            LossEntry(id=sid, loss=loss, predicted="i", confidence=1.0, probabilities=[1.0])
            for sid, loss in losses.items()])
        ordered = rank_by_loss(report)
        oracle = [sid for sid, _ in sorted(losses.items(), key=lambda kv: (kv[1], kv[0]))]
        assert ordered == oracle
        k = int(rng.integers(0, n))
        l = int(rng.integers(0, n - k + 1))
        head, tail = select_head_tail(ordered, TriageConfig(k=k, l=l))
        assert len(head) == k and len(tail) == l and not set(head) & set(tail)
        if head and tail:
            assert max(losses[h] for h in head) <= min(losses[t] for t in tail)

    # Scripted-verdict fixture: 600 flagged, 552 confirmed -> 0.92 exactly.
    selection = TriageSelection(round=1,
                                head_ids=[f"h{i:03d}" for i in range(500)],
                                tail_ids=[f"t{i:03d}" for i in range(100)])
    verdicts = []
    for i, sid in enumerate(selection.head_ids):  # 458 of 500 heads confirmed
        action = "certify" if i < 458 else "reject"
        verdicts.append(ReviewVerdict(sample_id=sid, action=action, round=1))
    for i, sid in enumerate(selection.tail_ids):  # 94 of 100 tails confirmed
        action = "relabel" if i < 94 else "certify"
        verdicts.append(ReviewVerdict(sample_id=sid, action=action, round=1,
                                      new_label="ii" if action == "relabel" else None))
    value = pipeline_accuracy(selection, verdicts)
    assert value == pytest.approx((458 + 94) / 600, abs=0)
    assert value == pytest.approx(0.92, abs=1e-12)

    # Random scripted verdicts match a hand tally exactly.
    for trial in range(50):
        k, l = int(rng.integers(1, 30)), int(rng.integers(1, 30))
        selection = TriageSelection(round=1,
                                    head_ids=[f"h{i}" for i in range(k)],
                                    tail_ids=[f"t{i}" for i in range(l)])
        actions = ["certify", "relabel", "reject", "ambiguous"]
        verdicts = [ReviewVerdict(sample_id=sid,
                                  action=actions[int(rng.integers(4))], round=1,
                                  new_label="x")
                    for sid in selection.flagged_ids()]
        for v in verdicts:
            if v.action != "relabel":
                v.new_label = None
        by_id = {v.sample_id: v.action for v in verdicts}
        tally = (sum(1 for s in selection.head_ids if by_id[s] == "certify")
                 + sum(1 for s in selection.tail_ids
                       if by_id[s] in ("reject", "ambiguous", "relabel")))
        assert pipeline_accuracy(selection, verdicts) == tally / (k + l)
    ok("triage correctness (1000 rank oracles, 0.92 fixture, hand tallies)")


# ---------------------------------------------------------- loss formulas ----

def test_acceptance_loss_formulas():
    rng = np.random.default_rng(99)
    eps = 1e-7
    for _ in range(100):
        n = int(rng.integers(1, 65))
        c = int(rng.integers(2, 12))
        disc = rng.uniform(1e-9, 1 - 1e-9, size=n)
        probs = rng.dirichlet(np.ones(c), size=n)
        labels = rng.integers(0, c, size=n)
        gamma = float(rng.uniform(0, 1))
        delta = float(rng.uniform(0, 2))
        got = generator_loss(torch.from_numpy(disc), torch.from_numpy(probs),
                             torch.from_numpy(labels), gamma=gamma, delta=delta).item()
        bce = -np.mean(np.log(np.clip(disc, eps, 1 - eps)))
        cce = -np.mean(np.log(np.clip(probs[np.arange(n), labels], eps, 1 - eps)))
        assert got == pytest.approx(delta * bce - gamma * cce, abs=1e-6)

        real = rng.uniform(1e-9, 1 - 1e-9, size=n)
        fake = rng.uniform(1e-9, 1 - 1e-9, size=n)
        got_d = discriminator_loss(torch.from_numpy(real), torch.from_numpy(fake)).item()
        want_d = (-np.mean(np.log(np.clip(real, eps, 1 - eps)))
                  - np.mean(np.log(np.clip(1 - fake, eps, 1 - eps))))
        assert got_d == pytest.approx(want_d, abs=1e-6)

    zero = generator_loss(torch.full((8,), 0.5, dtype=torch.float64),
                          torch.full((8, 4), 0.25, dtype=torch.float64),
                          torch.arange(4).repeat(2), gamma=0.5, delta=1.0)
    assert abs(zero.item()) < 1e-9
    ok("generator/discriminator loss formulas (100 random batches to 1e-6, zero case 1e-9)")


# ----------------------------------------------------------- gamma ramp ----

def test_acceptance_gamma_schedule():
    config = GanTrainConfig(gamma_max=0.5, gamma_ramp_iterations=120_000,
                            max_iterations=200_000)
    assert gamma_schedule(0, config) == 0.0
    assert gamma_schedule(120_000, config) == 0.5
    probes = np.linspace(0, 120_000, 100).astype(int)
    for i in probes:
        assert abs(gamma_schedule(int(i), config) - 0.5 * i / 120_000) <= 1e-12
    values = [gamma_schedule(i, config) for i in range(0, 200_001, 1000)]
    assert all(a <= b + 1e-15 for a, b in zip(values, values[1:]))
    assert max(values) == 0.5
    ok("gamma schedule (endpoints exact, linearity 1e-12 at 100 probes, monotone)")


# ------------------------------------------------------- gradient checks ----

def test_acceptance_small_cnn_gradient_check():
    torch.manual_seed(5)
    model = build_model(ModelConfig(architecture="small_cnn", num_classes=5)).double()
    rng = np.random.default_rng(5)
    x = to_batch(np.stack([glyph_sample(i, rng) for i in range(4)])).double()
    y = torch.tensor([0, 1, 2, 3])

    def loss_value():
        return F.cross_entropy(model(x), y)

    model.zero_grad()
    loss_value().backward()
    analytic = model.head.weight.grad.detach().clone()
    fd = torch.zeros_like(analytic)
    eps = 1e-6
    weight = model.head.weight
    with torch.no_grad():
        for i in range(weight.shape[0]):
            for j in range(weight.shape[1]):
                orig = weight[i, j].item()
                weight[i, j] = orig + eps
                up = loss_value().item()
                weight[i, j] = orig - eps
                down = loss_value().item()
                weight[i, j] = orig
                fd[i, j] = (up - down) / (2 * eps)
    rel = ((analytic - fd).norm() / fd.norm()).item()
    assert rel < 1e-3, f"relative gradient error {rel:.2e}"
    ok(f"small_cnn final-layer gradient vs central differences (rel {rel:.2e} < 1e-3)")


def test_acceptance_generator_step_gradient_check():
    from dataworkbench.gan import Discriminator, Generator

    gen_spec = GeneratorSpec(noise_length=8, embed_length=4, base_channels=4, num_classes=3)
    disc_spec = DiscriminatorSpec(base_channels=4, num_classes=3)
    torch.manual_seed(7)
    gen = Generator(gen_spec).double()
    disc = Discriminator(disc_spec).double()
    classifier = build_model(ModelConfig(architecture="small_cnn", num_classes=3)).double()
    classifier.eval()
    gen.eval()  # frozen batch-norm stats: autograd and FD see one function
    disc.eval()
    noise = torch.randn(6, gen_spec.noise_length, dtype=torch.float64)
    labels = torch.tensor([0, 1, 2, 0, 1, 2])

    def loss_of():
        fake = gen(noise, labels)
        class_probs = torch.softmax(classifier(fake), dim=1)
        return generator_loss(disc(fake, labels), class_probs, labels,
                              gamma=0.5, delta=1.0)

    params = [p for p in gen.parameters() if p.requires_grad]
    loss = loss_of()
    gen.zero_grad()
    loss.backward()

    # One plain SGD step moves along -lr * grad; verify grad against central FD
    # on a sample of coordinates spread over all generator parameters.
    rng = np.random.default_rng(8)
    analytic, numeric = [], []
    # eps bounds the chance a probe crosses a ReLU kink, where one-sided FD
    # diverges from the autograd subgradient; 1e-7 keeps crossings negligible
    # while float64 keeps the difference quotient well above noise.
    eps = 1e-7
    for tensor in params:
        flat = tensor.detach().reshape(-1)
        count = min(4, flat.numel())
        for idx in rng.choice(flat.numel(), size=count, replace=False):
            i = np.unravel_index(int(idx), tensor.shape)
            with torch.no_grad():
                orig = tensor[i].item()
                tensor[i] = orig + eps
            up = loss_of().item()
            with torch.no_grad():
                tensor[i] = orig - eps
            down = loss_of().item()
            with torch.no_grad():
                tensor[i] = orig
            analytic.append(tensor.grad[i].item())
            numeric.append((up - down) / (2 * eps))
    analytic = np.array(analytic)
    numeric = np.array(numeric)
    rel = float(np.linalg.norm(analytic - numeric) / np.linalg.norm(numeric))
    assert rel < 1e-2, f"relative update-direction error {rel:.2e}"
    ok(f"generator step direction vs finite differences (rel {rel:.2e} < 1e-2, "
       f"{len(analytic)} coordinates)")


# ------------------------------------------------------ truncated sampler ----

def test_acceptance_truncated_sampler():
    rng = np.random.default_rng(11)
    z = sample_noise(SamplerConfig(truncation=0.7, count=10_000), 64, rng)
    assert z.shape == (10_000, 64)
    assert float(np.abs(z).max()) <= 0.7  # exact hard bound

    z_full = sample_noise(SamplerConfig(truncation=math.inf, count=10_000), 64,
                          np.random.default_rng(12))
    mean = float(z_full.mean())
    var = float(z_full.var())
    assert abs(mean) <= 0.05
    assert abs(var - 1.0) <= 0.1
    ok(f"truncated sampler (max |z| = {float(np.abs(z).max()):.4f} <= 0.7; "
       f"untruncated mean {mean:+.4f}, var {var:.4f})")


# ----------------------------------------------------- balancer/splitter ----

def test_acceptance_balancer_splitter_1000_manifests():
    rng = np.random.default_rng(13)
    classes = [f"c{i}" for i in range(10)]
    for trial in range(1000):
        counts = {name: int(rng.integers(1, 25)) for name in classes}
        n_max = sum(counts.values()) + int(rng.integers(1, 50))
        manifest = DatasetManifest(classes=list(classes), n_max=n_max)
        i = 0
        for name, count in counts.items():
            for _ in range(count):
                manifest.records[f"r{i:05d}"] = SampleRecord(
                    id=f"r{i:05d}", image_path="x.png", byte_hash="00", label=name,
                    split="train", status="certified")
                i += 1
        balanced = balance_classes(manifest, rng)
        hist = class_histogram(balanced, "train")
        assert len(set(hist.values())) == 1  # constant histogram
        assert hist[classes[0]] == min(counts.values())
        assert set(balanced.records) == set(manifest.records)  # conservation
        surplus = sum(1 for r in balanced.records.values() if r.split == "surplus")
        assert surplus == sum(counts.values()) - 10 * min(counts.values())

        pool = [r.id for r in balanced.records.values() if r.split == "train"]
        if len(pool) < 8:
            continue
        plan = make_folds(balanced, 8, rng, seed=trial)
        assigned = set(plan.assignments)
        assert assigned == set(pool)  # exhaustive
        fold_sets = [set(plan.fold_ids(f)) for f in range(8)]
        total = 0
        for a in range(8):
            total += len(fold_sets[a])
            for b in range(a + 1, 8):
                assert not fold_sets[a] & fold_sets[b]  # disjoint
        assert total == len(pool)
        label_of = {r.id: r.label for r in balanced.records.values()}
        for name in classes:
            sizes = [sum(1 for sid in fold_sets[f] if label_of[sid] == name)
                     for f in range(8)]
            assert max(sizes) - min(sizes) <= 1  # per-class deviation
        for f in range(8):
            v = len(plan.validation_ids(f))
            t = len(plan.train_ids(f))
            assert v + t < balanced.n_max  # budget strict for every pair
    ok("balancer/splitter properties over 1000 random manifests")


# -------------------------------------------------------- aux-trainer smoke ----

def test_acceptance_aux_trainer_smoke():
    rng = np.random.default_rng(17)
    images = np.stack([glyph_sample(i % 10, rng) for i in range(200)])
    labels = np.array([i % 10 for i in range(200)], dtype=np.int64)
    data = ArrayDataset(ids=[f"a{i}" for i in range(200)], images=images, labels=labels)
    val_images = np.stack([glyph_sample(i % 10, rng) for i in range(40)])
    val = ArrayDataset(ids=[f"v{i}" for i in range(40)], images=val_images,
                       labels=np.array([i % 10 for i in range(40)], dtype=np.int64))
    torch.manual_seed(17)
    model = build_model(ModelConfig(architecture="small_cnn", num_classes=10))
    from dataworkbench.augment import AugmentConfig, DashedLineParams, SpotParams

    # Moderate augmentation: enough to exercise the augmented path without
    # dominating the 200-sample signal.
    augmentation = AugmentConfig(
        rotation_factor=0.02, contrast_factor=0.25, translation_fraction=0.08,
        black_spots=SpotParams(count=(0, 1)), white_spots=SpotParams(count=(0, 1)),
        dashed_lines=DashedLineParams(count=(0, 1)), seed=17)
    config = TrainConfig(epochs=200, batch_size=8, early_stopping=False,
                         augment=augmentation, seed=17)
    start = time.perf_counter()
    model, history = train(model, data, val, config)
    elapsed = time.perf_counter() - start
    assert elapsed < 600.0, f"training took {elapsed:.0f}s"
    probs = predict_proba(model, data.images)
    train_acc = float((probs.argmax(axis=1) == data.labels).mean())
    assert train_acc >= 0.95, f"train accuracy {train_acc:.3f}"
    assert len(history.epochs) == 200
    ok(f"aux-trainer smoke (200 epochs in {elapsed:.0f}s, train accuracy {train_acc:.1%})")


# ------------------------------------------------- end-to-end simulated ----

E2E_CONFIG = """
[paths]
manifest = "manifest.jsonl"
images_root = "."
out_dir = "runs"

[model]
architecture = "small_cnn"
num_classes = 10

[train]
epochs = 10
batch_size = 8
early_stopping = false
seed = 23

[train.augment]
rotation_factor = 0.02
contrast_factor = 0.2
translation_fraction = 0.06
black_spots = { count = [0, 1], radius = [1.0, 2.0] }
white_spots = { count = [0, 1], radius = [1.0, 2.0] }
dashed_lines = { count = [0, 0], length = [4.0, 8.0], gap = 3.0 }
seed = 23

[triage]
k = 200
l = 50

[supervisor]
mode = "simulated"
truth_path = "truth.json"
noise = 0.0
seed = 23

[pipeline]
seed_set_size = 200
validation_fraction = 0.1
seed = 23
"""


def test_acceptance_end_to_end_simulated_pipeline(tmp_path):
    start = time.perf_counter()
    corpus = make_corpus(tmp_path, n=2000, seed=23, flip_fraction=0.10)
    save_manifest(corpus.manifest, tmp_path / "manifest.jsonl")
    GroundTruth(labels=corpus.truth).save(tmp_path / "truth.json")
    (tmp_path / "pipeline.toml").write_text(E2E_CONFIG)
    config = load_config(tmp_path / "pipeline.toml")

    results = [run_round(config, r) for r in (0, 1, 2, 3)]
    assert all(r["status"] == "completed" for r in results)
    elapsed = time.perf_counter() - start
    assert elapsed < 1800.0, f"pipeline took {elapsed:.0f}s"

    ledger = load_rounds_ledger(config.ledger_path())
    ratios = [ledger[r]["ratio_validated"] for r in sorted(ledger)]
    assert all(a < b for a, b in zip(ratios, ratios[1:]))  # strictly increasing

    manifest = load_manifest(config.manifest_path)
    assert validate_size_constraint(manifest).ok  # never violated at the end
    for r in (0, 1, 2, 3):  # and after every round (splits only shrink budget)
        assert ledger[r]["ratio_validated"] <= 1.0

    # Flipped-label capture: count flips that entered the triage pool (were
    # not already fixed at seed certification) that some round's tail caught.
    seed_selection = TriageSelection.load(config.round_dir(0) / "queue.json")
    seed_ids = set(seed_selection.head_ids)
    eligible = [sid for sid in corpus.flipped_ids if sid not in seed_ids]
    tails = set()
    for r in (1, 2, 3):
        selection = TriageSelection.load(config.round_dir(r) / "queue.json")
        tails.update(selection.tail_ids)
    caught = sum(1 for sid in eligible if sid in tails)
    capture = caught / len(eligible)
    assert capture >= 0.60, f"tail capture {capture:.1%} of {len(eligible)} flipped"
    ok(f"end-to-end simulated pipeline ({elapsed:.0f}s, ratios {ratios}, "
       f"tail capture {capture:.1%})")


# --------------------------------------------------------------- GAN smoke ----

def test_acceptance_gan_smoke(tmp_path):
    rng = np.random.default_rng(29)
    images = np.stack([glyph_sample(i % 3, rng) for i in range(300)])
    labels = np.array([i % 3 for i in range(300)], dtype=np.int64)
    data = ArrayDataset(ids=[f"g{i}" for i in range(300)], images=images, labels=labels)

    torch.manual_seed(29)
    classifier = build_model(ModelConfig(architecture="small_cnn", num_classes=3))
    classifier, _ = train(classifier, data, data,
                          TrainConfig(epochs=5, batch_size=32, early_stopping=False,
                                      augment=None, seed=29))
    digest_before = classifier_checksum(classifier)

    gen_spec = GeneratorSpec(base_channels=16, num_classes=3)
    disc_spec = DiscriminatorSpec(base_channels=16, num_classes=3)
    config = GanTrainConfig(batch_size=32, max_iterations=500, gamma_ramp_iterations=500,
                            gamma_max=0.5, log_interval=25, seed=29)
    bundle, history = train_gan(data, classifier, gen_spec, disc_spec, config,
                                checksum_interval=100)
    assert history.aborted_at is None
    assert bundle.iterations == 500
    assert all(math.isfinite(e["d_loss"]) and math.isfinite(e["g_loss"])
               for e in history.entries)
    assert classifier_checksum(classifier) == digest_before  # frozen

    out = generate_images(bundle, 1, 8, SamplerConfig(truncation=0.7),
                          np.random.default_rng(30))
    assert out.shape == (8, 32, 32)
    assert out.min() >= 0.0 and out.max() <= 1.0

    manifest = DatasetManifest(classes=["a", "b", "c"], n_max=10_000)
    manifest.add_record(SampleRecord(id="seed0", image_path="x.png",
                                     byte_hash=fake_hash("seed0"), label="a",
                                     split="train", status="certified"))
    manifest, new_ids = synthesize(bundle, "b", 6, SamplerConfig(truncation=0.7),
                                   np.random.default_rng(31), manifest, tmp_path)
    assert len(new_ids) == 6
    assert all(manifest.records[sid].label == "b" for sid in new_ids)
    assert all(manifest.records[sid].status == "certified_synthetic" for sid in new_ids)
    assert all((tmp_path / manifest.records[sid].image_path).exists() for sid in new_ids)
    ok("GAN smoke (500 iterations, finite losses, frozen classifier, labeled exports)")
