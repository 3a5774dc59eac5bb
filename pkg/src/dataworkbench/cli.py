"""The `workbench` command line: every pipeline step as a subcommand.

    workbench ingest       build a manifest from a class-per-subdirectory tree
    workbench dedup        staged duplicate detection, leakage check, resolve
    workbench augment      write augmented copies of a directory of PNGs
    workbench train-aux    train an auxiliary classifier on the certified pool
    workbench infer        per-sample losses for the unverified pool
    workbench triage       flag head/tail for review, write the queue
    workbench apply        fold a verdicts file back into the manifest
    workbench balance      equalize class counts via the surplus pool
    workbench split        select a test set and emit an N-fold plan
    workbench gan-train    train the hard-example synthesizer
    workbench gan-sample   export synthesized samples into the manifest
    workbench review-serve run the HTTP review service
    workbench run          orchestrate rounds from a pipeline TOML
    workbench report       markdown summary of rounds and dataset state
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np
import torch

from . import balance as bal
from . import dedup as dd
from . import gan as ganmod
from . import pipeline as pipe
from . import triage as tri
from .augment import AugmentConfig, augment as augment_image, counter_for
from .errors import WorkbenchError
from .manifest import load_manifest, save_manifest, validate_size_constraint
from .models import build_model, load_model, parameter_count, save_model
from .training import ArrayDataset, LossReport, infer_losses_from_manifest, train

log = logging.getLogger(__name__)


def _images_root(args, manifest_path: Path) -> Path:
    return Path(args.images_root) if args.images_root else manifest_path.parent


def cmd_ingest(args) -> int:
    manifest = pipe.ingest_directory(
        args.images, n_max=args.n_max,
        classes=args.classes.split(",") if args.classes else None)
    save_manifest(manifest, args.out)
    print(f"ingested {len(manifest.records)} records, "
          f"{len(manifest.classes)} classes -> {args.out}")
    return 0


def cmd_dedup(args) -> int:
    manifest_path = Path(args.manifest)
    manifest = load_manifest(manifest_path)
    config = dd.DedupConfig(hamming_threshold=args.threshold)
    failures = dd.compute_missing_hashes(manifest, config, _images_root(args, manifest_path))
    for sid, message in failures.items():
        log.warning("hash failure for %s: %s", sid, message)
    groups = dd.find_duplicates(manifest, config)
    leakage = dd.find_split_leakage(manifest, config)
    if args.apply:
        manifest = dd.resolve_duplicates(manifest, groups, args.apply)
    save_manifest(manifest, manifest_path)
    if args.report:
        payload = {"groups": [g.to_dict() for g in groups],
                   "leakage": [p.to_dict() for p in leakage],
                   "hash_failures": failures,
                   "applied_policy": args.apply}
        Path(args.report).write_text(json.dumps(payload, indent=2), encoding="utf-8")
    print(f"{len(groups)} duplicate groups, {len(leakage)} leaking pairs"
          + (f"; resolved with {args.apply}" if args.apply else ""))
    return 0


def cmd_augment(args) -> int:
    from . import images as imageio

    config = pipe.load_augment_toml(args.config) if args.config else AugmentConfig()
    config = dataclasses.replace(config, seed=args.seed)
    in_dir, out_dir = Path(args.in_dir), Path(args.out_dir)
    files = sorted(in_dir.rglob("*.png"))
    if not files:
        print(f"no PNG files under {in_dir}", file=sys.stderr)
        return 1
    written = 0
    for file in files:
        img = imageio.to_grayscale(imageio.load_image(file))
        rel = file.relative_to(in_dir)
        for copy in range(args.multiplier):
            counter = counter_for(str(rel), copy)
            out = augment_image(img, config, counter=counter)
            target = out_dir / rel.parent / f"{file.stem}_aug{copy}{file.suffix}"
            imageio.save_png(out, target)
            written += 1
    print(f"wrote {written} augmented images to {out_dir}")
    return 0


def cmd_train_aux(args) -> int:
    manifest_path = Path(args.manifest)
    manifest = load_manifest(manifest_path)
    model_config, train_config = pipe.load_train_toml(args.config) if args.config else (
        pipe.ModelConfig(architecture="small_cnn", num_classes=len(manifest.classes)),
        pipe.TrainConfig())
    if model_config.num_classes != len(manifest.classes):
        model_config = dataclasses.replace(model_config, num_classes=len(manifest.classes))
    rng = np.random.default_rng([train_config.seed, args.round])
    train_ids, val_ids = pipe.resplit_certified(manifest, args.validation_fraction, rng)
    save_manifest(manifest, manifest_path)
    root = _images_root(args, manifest_path)
    torch.manual_seed(train_config.seed + args.round)
    model = build_model(model_config)
    print(f"training {model_config.architecture} ({parameter_count(model)} parameters) "
          f"on {len(train_ids)}/{len(val_ids)} samples")
    model, history = train(model, ArrayDataset.from_manifest(manifest, train_ids, root),
                           ArrayDataset.from_manifest(manifest, val_ids, root),
                           train_config, n_max=manifest.n_max)
    save_model(model, args.out)
    if args.history:
        history.save(args.history)
    final = history.final()
    if final:
        print(f"best epoch {history.best_epoch}: "
              f"val accuracy {history.best().val_accuracy:.3f}")
    return 0


def cmd_infer(args) -> int:
    manifest_path = Path(args.manifest)
    manifest = load_manifest(manifest_path)
    model = load_model(args.model)
    ids = sorted(r.id for r in manifest.records.values() if r.status == "unverified")
    report = infer_losses_from_manifest(model, manifest, ids,
                                        _images_root(args, manifest_path))
    report.save(args.out)
    print(f"inferred losses for {len(report.entries)} samples "
          f"({len(report.failed_ids)} failed) -> {args.out}")
    return 0


def cmd_triage(args) -> int:
    manifest_path = Path(args.manifest)
    manifest = load_manifest(manifest_path)
    if args.report_round is not None:
        ledger = tri.load_triage_ledger(tri.triage_ledger_path(manifest_path))
        if args.report_round not in ledger:
            print(f"no triage selection for round {args.report_round}", file=sys.stderr)
            return 1
        stats = tri.compute_round_stats(manifest, ledger[args.report_round])
        print(json.dumps(stats, indent=2))
        return 0
    report = LossReport.load(args.losses)
    config = tri.TriageConfig(k=args.k, l=args.l)
    manifest, selection = tri.flag_for_review(manifest, report, config, args.round)
    save_manifest(manifest, manifest_path)
    selection.save(args.out)
    tri.record_selection(tri.triage_ledger_path(manifest_path), selection)
    print(f"flagged {len(selection.head_ids)} head + {len(selection.tail_ids)} tail "
          f"samples for round {args.round} -> {args.out}")
    return 0


def cmd_apply(args) -> int:
    manifest_path = Path(args.manifest)
    manifest = load_manifest(manifest_path)
    payload = json.loads(Path(args.verdicts).read_text(encoding="utf-8"))
    verdicts = [tri.ReviewVerdict(**v) for v in payload]
    manifest = tri.apply_verdicts(manifest, verdicts)
    save_manifest(manifest, manifest_path)
    check = validate_size_constraint(manifest)
    print(f"applied {len(verdicts)} verdicts; train+validation = "
          f"{check.train_count + check.validation_count} < {check.n_max}")
    return 0


def cmd_balance(args) -> int:
    manifest_path = Path(args.manifest)
    manifest = load_manifest(manifest_path)
    manifest = bal.balance_classes(manifest, np.random.default_rng(args.seed))
    save_manifest(manifest, manifest_path)
    print(f"balanced; surplus now holds {manifest.split_count('surplus')} samples")
    return 0


def cmd_split(args) -> int:
    manifest_path = Path(args.manifest)
    manifest = load_manifest(manifest_path)
    rng = np.random.default_rng(args.seed)
    if args.test_size:
        manifest = bal.select_test_set(manifest, args.test_size, rng)
        save_manifest(manifest, manifest_path)
    plan = bal.make_folds(manifest, args.folds, rng, seed=args.seed)
    plan.save(args.out)
    sizes = [len(plan.fold_ids(f)) for f in range(args.folds)]
    print(f"{args.folds} folds of sizes {sizes}, test set {len(plan.test_ids)} -> {args.out}")
    return 0


def cmd_gan_train(args) -> int:
    manifest_path = Path(args.manifest)
    manifest = load_manifest(manifest_path)
    gen_spec, disc_spec, config = pipe.load_gan_toml(args.config) if args.config else (
        ganmod.GeneratorSpec(num_classes=len(manifest.classes)),
        ganmod.DiscriminatorSpec(num_classes=len(manifest.classes)),
        ganmod.GanTrainConfig())
    if gen_spec.num_classes != len(manifest.classes):
        gen_spec = dataclasses.replace(gen_spec, num_classes=len(manifest.classes))
        disc_spec = dataclasses.replace(disc_spec, num_classes=len(manifest.classes))
    classifier = load_model(args.classifier)
    ids = sorted(r.id for r in bal.active_pool(manifest))
    dataset = ArrayDataset.from_manifest(manifest, ids, _images_root(args, manifest_path))
    bundle, history = ganmod.train_gan(dataset, classifier, gen_spec, disc_spec, config)
    ganmod.save_bundle(bundle, args.out)
    status = "aborted" if history.aborted_at is not None else "finished"
    print(f"{status} after {bundle.iterations} iterations -> {args.out}")
    return 0


def cmd_gan_sample(args) -> int:
    manifest_path = Path(args.manifest)
    manifest = load_manifest(manifest_path)
    bundle = ganmod.load_bundle(args.bundle)
    sampler = ganmod.SamplerConfig(truncation=args.truncation)
    rng = np.random.default_rng(args.seed)
    classes = args.classes.split(",") if args.classes else manifest.classes
    root = _images_root(args, manifest_path)
    total = []
    for name in classes:
        manifest, new_ids = ganmod.synthesize(bundle, name, args.per_class, sampler,
                                              rng, manifest, root)
        total.extend(new_ids)
    save_manifest(manifest, manifest_path)
    print(f"exported {len(total)} synthesized samples into {manifest_path}")
    return 0


def cmd_review_serve(args) -> int:
    from .service import serve

    serve(args.manifest, port=args.port, host=args.host,
          images_root=args.images_root, triage_path=args.triage)
    return 0


def cmd_run(args) -> int:
    config = pipe.load_config(args.config)
    if args.round is not None:
        result = pipe.run_round(config, args.round)
        print(json.dumps(result, indent=2))
        return 0
    results = pipe.run_until_validated(config, args.target_ratio)
    for result in results:
        print(json.dumps(result))
    if results and results[-1]["status"] == "awaiting_verdicts":
        print("paused: apply verdicts and re-run", file=sys.stderr)
        return 2
    return 0


def cmd_report(args) -> int:
    config = pipe.load_config(args.config)
    text = pipe.build_report(config)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
        print(f"report -> {args.out}")
    else:
        print(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="workbench",
                                     description="dataset curation workbench")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="build a manifest from an image tree")
    p.add_argument("--images", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--n-max", type=int, default=10_000)
    p.add_argument("--classes", help="comma-separated class order (default: subdir names)")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("dedup", help="find and resolve duplicates")
    p.add_argument("--manifest", required=True)
    p.add_argument("--threshold", type=int, default=6)
    p.add_argument("--apply", choices=["keep_first", "keep_best_status"])
    p.add_argument("--report")
    p.add_argument("--images-root")
    p.set_defaults(func=cmd_dedup)

    p = sub.add_parser("augment", help="write augmented PNG copies")
    p.add_argument("--in", dest="in_dir", required=True)
    p.add_argument("--out", dest="out_dir", required=True)
    p.add_argument("--config")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--multiplier", type=int, default=1)
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("train-aux", help="train the auxiliary classifier")
    p.add_argument("--manifest", required=True)
    p.add_argument("--round", type=int, default=1)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--history")
    p.add_argument("--validation-fraction", type=float, default=0.1)
    p.add_argument("--images-root")
    p.set_defaults(func=cmd_train_aux)

    p = sub.add_parser("infer", help="per-sample losses for unverified records")
    p.add_argument("--model", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--images-root")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("triage", help="flag head/tail samples for review")
    p.add_argument("--manifest", required=True)
    p.add_argument("--losses")
    p.add_argument("--k", type=int, default=500)
    p.add_argument("--l", type=int, default=100)
    p.add_argument("--round", type=int, default=1)
    p.add_argument("--out", default="queue.json")
    p.add_argument("--report", dest="report_round", type=int,
                   help="print live stats for a round instead of flagging")
    p.set_defaults(func=cmd_triage)

    p = sub.add_parser("apply", help="apply a verdicts file")
    p.add_argument("--manifest", required=True)
    p.add_argument("--verdicts", required=True)
    p.set_defaults(func=cmd_apply)

    p = sub.add_parser("balance", help="equalize class counts into surplus")
    p.add_argument("--manifest", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_balance)

    p = sub.add_parser("split", help="test-set selection and N-fold plan")
    p.add_argument("--manifest", required=True)
    p.add_argument("--folds", type=int, default=8)
    p.add_argument("--test-size", type=int, default=0)
    p.add_argument("--seed", type=int, default=13)
    p.add_argument("--out", default="folds.json")
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("gan-train", help="train the hard-example synthesizer")
    p.add_argument("--manifest", required=True)
    p.add_argument("--classifier", required=True)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--images-root")
    p.set_defaults(func=cmd_gan_train)

    p = sub.add_parser("gan-sample", help="export synthesized samples")
    p.add_argument("--bundle", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--per-class", type=int, required=True)
    p.add_argument("--truncation", type=float, default=0.7)
    p.add_argument("--classes", help="comma-separated subset (default: all)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--images-root")
    p.set_defaults(func=cmd_gan_sample)

    p = sub.add_parser("review-serve", help="run the HTTP review service")
    p.add_argument("--manifest", required=True)
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--images-root")
    p.add_argument("--triage")
    p.set_defaults(func=cmd_review_serve)

    p = sub.add_parser("run", help="orchestrate pipeline rounds")
    p.add_argument("--config", required=True)
    p.add_argument("--round", type=int, help="run exactly one round")
    p.add_argument("--target-ratio", type=float, default=1.0)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("report", help="markdown round/dataset report")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except WorkbenchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
