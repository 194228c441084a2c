"""Command-line interface.

Subcommands mirror the pipeline stages: gen-data, train-gan, enqueue,
serve-curation, plan-balance, study. Every stage reads the same flat
`key = value` config file; flags override file values.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

import numpy as np


def _load_config(args) -> "StudyConfig":
    from .experiment import StudyConfig

    if getattr(args, "config", None):
        return StudyConfig.from_file(args.config)
    return StudyConfig()


def cmd_gen_data(args):
    from .data import DESK_COUNTS, ClassLabel, generate_synthetic_desk_dataset

    counts = dict(DESK_COUNTS)
    if args.counts:
        for part in args.counts.split(","):
            name, _, num = part.partition("=")
            counts[ClassLabel[name.strip()]] = int(num)
    n = generate_synthetic_desk_dataset(counts, args.size, args.seed, args.root)
    print(f"wrote {n} images under {args.root}")


def cmd_plan_balance(args):
    from .data import (SplitSpec, make_splits, plan_balance, scan_dataset,
                       write_manifests, write_split_indices)

    cfg = _load_config(args)
    root = args.dataset_root or cfg.dataset_root
    scan = scan_dataset(root)
    splits = make_splits(scan.manifests,
                         SplitSpec(args.val_reserve, args.test_reserve, args.seed))
    plan = plan_balance(splits.train, args.multiplier)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(plan.to_csv(), encoding="utf-8")
    if args.manifests:
        write_manifests(args.manifests, scan.manifests)
    if args.splits:
        write_split_indices(args.splits, scan.manifests, splits)
    print(plan.to_csv(), end="")
    print(f"plan written to {out}")


def cmd_train_gan(args):
    from . import gan
    from .data import ClassLabel, SplitSpec, make_splits, scan_dataset
    from .experiment import PixelStore

    cfg = _load_config(args)
    label = ClassLabel[args.class_name]
    scan = scan_dataset(args.dataset_root or cfg.dataset_root)
    splits = make_splits(scan.manifests,
                         SplitSpec(cfg.val_reserve, cfg.test_reserve, cfg.seed))
    records = list(splits.train[label].records)
    rng = np.random.default_rng([cfg.seed, 100 + label.value])
    if len(records) > cfg.gan_train_per_class:
        idx = rng.permutation(len(records))[:cfg.gan_train_per_class]
        records = [records[i] for i in sorted(idx)]
    images, _ = PixelStore().stack(records)
    gan_cfg = cfg.gan_config()
    print(f"training {label.name} GAN on {len(images)} images, "
          f"{gan_cfg.iterations} iterations")
    t0 = time.time()
    result = gan.train_gan(images, gan_cfg, rng, log_prefix=label.name)
    gan.save_generator(args.out, result.generator)
    loss_d, loss_g = result.history[-1]
    print(f"done in {time.time() - t0:.0f}s; final loss_D {loss_d:.3f} "
          f"loss_G {loss_g:.3f}; checkpoint at {args.out}")


def cmd_enqueue(args):
    from PIL import Image

    from . import gan
    from .curation import CurationStore, GeneratedSample
    from .data import file_checksum

    generator = gan.load_generator(args.generator)
    gen_id = file_checksum(args.generator)[:16]
    rng = np.random.default_rng(args.seed)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    synth = gan.synthesize(generator, args.count, rng)
    store = CurationStore(args.store)
    samples = []
    for i in range(synth.shape[0]):
        path = out_dir / f"{args.class_name.lower()}_synth_{i:05d}.png"
        Image.fromarray(synth[i], mode="L").save(path)
        samples.append(GeneratedSample(
            id=f"{args.class_name}-{gen_id}-{i:05d}",
            label=args.class_name,
            png_path=str(path),
            generator_id=gen_id,
            created_at=time.time(),
            checksum=file_checksum(path),
        ))
    n = store.enqueue(samples)
    print(f"queued {n} samples for review")
    if args.auto_accept:
        accepted = store.auto_accept_all()
        print(f"auto-accepted {accepted} samples")


def cmd_serve_curation(args):
    from .service import serve

    serve(args.store, args.port, plan_csv=args.plan)


def cmd_study(args):
    from .experiment import run_full_study

    cfg = _load_config(args)
    if args.protocols:
        cfg.protocols = args.protocols
    if args.repeats is not None:
        cfg.repeats = args.repeats
    if args.seed is not None:
        cfg.seed = args.seed
    if args.run_dir:
        cfg.run_dir = args.run_dir
        cfg.store_dir = str(Path(args.run_dir) / "curation")
    if args.dataset_root:
        cfg.dataset_root = args.dataset_root
    t0 = time.time()
    report = run_full_study(cfg, auto_accept=not args.human_curation,
                            progress=print)
    from .experiment import render_report_table

    print(render_report_table(report))
    print(f"study finished in {(time.time() - t0) / 60:.1f} min; "
          f"outputs under {cfg.run_dir}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ganbalance",
                                description="GAN-balanced image classification toolkit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate the procedural desk dataset")
    g.add_argument("--root", required=True)
    g.add_argument("--size", type=int, default=64)
    g.add_argument("--seed", type=int, default=7)
    g.add_argument("--counts", help="overrides, e.g. Normal=1578,Cardiomegaly=1710")
    g.set_defaults(func=cmd_gen_data)

    g = sub.add_parser("plan-balance", help="scan, split, and write the balance plan")
    g.add_argument("--dataset-root")
    g.add_argument("--config")
    g.add_argument("--out", default="plan.csv")
    g.add_argument("--manifests", help="also write the manifest TSV here")
    g.add_argument("--splits", help="also write split indices here")
    g.add_argument("--val-reserve", type=int, default=100)
    g.add_argument("--test-reserve", type=int, default=100)
    g.add_argument("--multiplier", type=float, default=2.0)
    g.add_argument("--seed", type=int, default=7)
    g.set_defaults(func=cmd_plan_balance)

    g = sub.add_parser("train-gan", help="train the generator for one class")
    g.add_argument("--class", dest="class_name", required=True)
    g.add_argument("--dataset-root")
    g.add_argument("--config")
    g.add_argument("--out", required=True, help="generator checkpoint path (.gbck)")
    g.set_defaults(func=cmd_train_gan)

    g = sub.add_parser("enqueue", help="synthesize images and queue them for review")
    g.add_argument("--generator", required=True)
    g.add_argument("--class", dest="class_name", required=True)
    g.add_argument("--count", type=int, required=True)
    g.add_argument("--store", required=True)
    g.add_argument("--out", required=True, help="directory for the PNG files")
    g.add_argument("--seed", type=int, default=7)
    g.add_argument("--auto-accept", action="store_true")
    g.set_defaults(func=cmd_enqueue)

    g = sub.add_parser("serve-curation", help="run the HTTP review service")
    g.add_argument("--store", required=True)
    g.add_argument("--port", type=int, default=8321)
    g.add_argument("--plan", help="balance plan CSV served at /api/plan")
    g.set_defaults(func=cmd_serve_curation)

    g = sub.add_parser("study", help="run the full DS1/DS2/DS3 study")
    g.add_argument("--config")
    g.add_argument("--protocols", help="comma list, e.g. ds1,ds2,ds3")
    g.add_argument("--repeats", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--run-dir")
    g.add_argument("--dataset-root")
    g.add_argument("--human-curation", action="store_true",
                   help="stop for human review instead of auto-accepting")
    g.set_defaults(func=cmd_study)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(name)s %(message)s")
    try:
        args.func(args)
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
