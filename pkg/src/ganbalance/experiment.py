"""DS1/DS2/DS3 study orchestration and reporting.

A study compares classifier training protocols over one dataset:

    DS1  all real training images, imbalanced as found
    DS2  real images undersampled to the smallest class
    DS3  real images plus accepted synthetic images, balanced to the
         balance-plan target per class

Repeats are seeded re-splits: the test reserve is drawn once per study and
held fixed, while each repeat re-draws the validation reserve from the
remaining real pool and retrains every protocol. Aggregates are mean +/- std
(population) over repeat totals, reported in the accuracy-table layout, with
per-iteration validation curves for band plots.
"""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Callable, Mapping, Optional, Sequence

import numpy as np
from PIL import Image

from . import gan
from .classifier import (ClassifierConfig, PerClassAccuracy, evaluate_per_class,
                         predict_batched, train_classifier)
from .curation import CurationStore, GeneratedSample
from .data import (DISPLAY_NAMES, REAL, SYNTHETIC_ACCEPTED, TABLE_ORDER,
                   BalancePlan, ClassLabel, ClassManifest, DatasetError,
                   ImageRecord, PixelCache, SplitSpec, Splits, file_checksum,
                   make_splits, normalize_u8, plan_balance, scan_dataset,
                   write_manifests, write_split_indices)
from .optim import EarlyStopConfig

logger = logging.getLogger(__name__)


class Protocol(Enum):
    DS1 = "ds1"   # imbalanced real
    DS2 = "ds2"   # balanced real (undersampled)
    DS3 = "ds3"   # real + accepted synthetic, balanced to target

    @staticmethod
    def parse(text: str) -> list["Protocol"]:
        out = []
        for part in text.split(","):
            part = part.strip().lower()
            if part:
                out.append(Protocol(part))
        if not out:
            raise ValueError("no protocols given")
        return out


class QuotaDeficitError(DatasetError):
    pass


@dataclass
class StudyConfig:
    """Flat study configuration; serialized as `key = value` lines."""

    dataset_root: str = "data/desk"
    run_dir: str = "runs/desk"
    store_dir: str = ""                  # default: <run_dir>/curation
    image_size: int = 64
    val_reserve: int = 100
    test_reserve: int = 100
    multiplier: float = 1.0
    protocols: str = "ds1,ds3"
    repeats: int = 5
    seed: int = 7
    allow_ds3_deficit: bool = False
    # classifier hyperparameters
    iterations: int = 30
    batch_size: int = 256
    lr0: float = 1e-3
    l2: float = 1e-4
    hidden: int = 128
    conv_channels: str = "2,4,8,64"
    init_std: float = 0.0            # 0: fan-in-scaled per layer
    bias_init: float = 0.1
    early_stop_patience: int = 0         # 0: train full length, restore best
    eval_batch: int = 512
    # per-class GAN hyperparameters
    gan_z_dim: int = 32
    gan_base_channels: int = 48
    gan_batch_size: int = 32
    gan_iterations: int = 60
    gan_lr: float = 2e-3
    gan_train_per_class: int = 200
    gan_use_batchnorm: bool = True

    def __post_init__(self):
        if not self.store_dir:
            self.store_dir = str(Path(self.run_dir) / "curation")

    def classifier_config(self) -> ClassifierConfig:
        channels = tuple(int(c) for c in self.conv_channels.split(","))
        stop = EarlyStopConfig(self.early_stop_patience) \
            if self.early_stop_patience > 0 else None
        return ClassifierConfig(
            input_size=self.image_size,
            conv_channels=channels,
            hidden=self.hidden,
            batch_size=self.batch_size,
            iterations=self.iterations,
            lr0=self.lr0,
            l2=self.l2,
            init_std=self.init_std or None,
            bias_init=self.bias_init,
            early_stop=stop,
        )

    def gan_config(self) -> gan.GanConfig:
        stages = int(np.log2(self.image_size // gan.SEED_SIZE))
        return gan.GanConfig(
            z_dim=self.gan_z_dim,
            base_channels=self.gan_base_channels,
            stages=stages,
            output_size=self.image_size,
            batch_size=self.gan_batch_size,
            iterations=self.gan_iterations,
            lr0=self.gan_lr,
            use_batchnorm=self.gan_use_batchnorm,
        )

    def to_lock(self) -> str:
        lines = [f"{k} = {v}" for k, v in sorted(asdict(self).items())]
        return "\n".join(lines) + "\n"

    @staticmethod
    def from_file(path) -> "StudyConfig":
        values: dict[str, str] = {}
        for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected `key = value`")
            k, v = (part.strip() for part in line.split("=", 1))
            values[k] = v
        return StudyConfig.from_mapping(values)

    @staticmethod
    def from_mapping(values: Mapping[str, str]) -> "StudyConfig":
        cfg = StudyConfig()
        kwargs = {}
        for k, v in values.items():
            if not hasattr(cfg, k):
                raise ValueError(f"unknown config key {k!r}")
            current = getattr(cfg, k)
            if isinstance(current, bool):
                kwargs[k] = str(v).strip().lower() in ("1", "true", "yes", "on")
            elif isinstance(current, int):
                kwargs[k] = int(v)
            elif isinstance(current, float):
                kwargs[k] = float(v)
            else:
                kwargs[k] = str(v)
        return StudyConfig(**kwargs)


# ---------------------------------------------------------------------------
# dataset assembly
# ---------------------------------------------------------------------------

def assemble(protocol: Protocol, train_manifests: Sequence[ClassManifest],
             plan: Optional[BalancePlan],
             accepted: Optional[Mapping[ClassLabel, Sequence[ImageRecord]]],
             seed: int, allow_deficit: bool = False) -> list[ImageRecord]:
    """Build one protocol's training list (shuffled, seeded).

    DS3 requires a balance plan and accepted synthetic exports; a quota
    deficit aborts with a per-class table unless explicitly allowed.
    """
    rng = np.random.default_rng([seed, list(Protocol).index(protocol)])
    records: list[ImageRecord] = []
    by_label = {m.label: m for m in train_manifests}
    if protocol is Protocol.DS1:
        for lbl in ClassLabel:
            records.extend(by_label[lbl].records)
    elif protocol is Protocol.DS2:
        floor = min(len(by_label[lbl].records) for lbl in ClassLabel)
        for lbl in ClassLabel:
            recs = by_label[lbl].records
            idx = rng.permutation(len(recs))[:floor]
            records.extend(recs[i] for i in sorted(idx))
    else:
        if plan is None or accepted is None:
            raise ValueError("DS3 needs a balance plan and accepted exports")
        deficits = []
        chosen: list[ImageRecord] = []
        for lbl in ClassLabel:
            real = by_label[lbl].records
            need = plan.target - len(real)
            synth_pool = list(accepted.get(lbl, []))
            if need > len(synth_pool):
                deficits.append(f"{lbl.name}: need {need}, accepted {len(synth_pool)}")
            take = max(0, min(need, len(synth_pool)))
            idx = rng.permutation(len(synth_pool))[:take]
            chosen.extend(real)
            chosen.extend(synth_pool[i] for i in sorted(idx))
        if deficits and not allow_deficit:
            raise QuotaDeficitError(
                "accepted synthetics do not cover DS3 quotas: " + "; ".join(deficits))
        records = chosen
    perm = rng.permutation(len(records))
    return [records[i] for i in perm]


# ---------------------------------------------------------------------------
# pixel store
# ---------------------------------------------------------------------------

class PixelStore:
    """Decode-once uint8 image store shared across repeats and protocols."""

    def __init__(self):
        self._cache = PixelCache()

    def stack(self, records: Sequence[ImageRecord]) -> tuple[np.ndarray, np.ndarray]:
        arrs = [self._cache.get(r.path) for r in records]
        labels = np.array([int(r.label) for r in records], dtype=np.int64)
        return np.stack(arrs), labels


# ---------------------------------------------------------------------------
# study inputs and report
# ---------------------------------------------------------------------------

@dataclass
class StudyInputs:
    master: Splits
    plan: Optional[BalancePlan]
    accepted: dict[ClassLabel, list[ImageRecord]] = field(default_factory=dict)


@dataclass
class ExperimentReport:
    protocols: list[str]
    repeats: int
    iterations: int
    seeds: list[int]
    per_class: dict[str, list[PerClassAccuracy]]      # protocol -> per repeat
    curves: dict[str, list[list[float]]]              # protocol -> repeat x iter
    config_lock: str = ""
    runtime_seconds: float = 0.0

    def totals(self, protocol: str) -> list[float]:
        return [acc.total for acc in self.per_class[protocol]]

    def total_mean_std(self, protocol: str) -> tuple[float, float]:
        t = np.array(self.totals(protocol), dtype=np.float64)
        return float(t.mean()), float(t.std())

    def class_mean(self, protocol: str, label: ClassLabel) -> Optional[float]:
        vals = [acc.per_class[label] for acc in self.per_class[protocol]
                if acc.per_class[label] is not None]
        return float(np.mean(vals)) if vals else None

    def curve_mean_std(self, protocol: str) -> tuple[np.ndarray, np.ndarray]:
        arr = np.array(self.curves[protocol], dtype=np.float64)
        return arr.mean(axis=0), arr.std(axis=0)


TrainFn = Callable[..., tuple[Callable[[np.ndarray], np.ndarray], list[float]]]
EvalFn = Callable[[Callable, np.ndarray, np.ndarray], PerClassAccuracy]


def default_train_fn(train_u8: np.ndarray, train_labels: np.ndarray,
                     val_u8: np.ndarray, val_labels: np.ndarray,
                     config: ClassifierConfig, rng: np.random.Generator,
                     eval_batch: int = 512, log_prefix: str = ""):
    xt = normalize_u8(train_u8, "unit")
    xv = normalize_u8(val_u8, "unit")
    result = train_classifier(xt, train_labels, xv, val_labels, config, rng,
                              log_prefix=log_prefix)

    def predict(images_u8: np.ndarray) -> np.ndarray:
        return predict_batched(normalize_u8(images_u8, "unit"), result.params,
                               config, batch_size=eval_batch)

    return predict, result.val_curve


def default_eval_fn(predict, test_u8: np.ndarray, test_labels: np.ndarray):
    return evaluate_per_class(predict(test_u8), test_labels)


def run_study(cfg: StudyConfig, inputs: StudyInputs,
              train_fn: Optional[TrainFn] = None,
              eval_fn: Optional[EvalFn] = None,
              progress: Callable[[str], None] = logger.info) -> ExperimentReport:
    """Train and evaluate every protocol x repeat; deterministic per seed."""
    t_start = time.time()
    protocols = Protocol.parse(cfg.protocols)
    train_fn = train_fn or default_train_fn
    eval_fn = eval_fn or default_eval_fn
    clf_cfg = cfg.classifier_config()
    store = PixelStore()

    test_records = [r for m in inputs.master.test for r in m.records]
    test_u8, test_labels = store.stack(test_records) if test_records else (None, None)

    report = ExperimentReport(
        protocols=[p.value for p in protocols],
        repeats=cfg.repeats,
        iterations=cfg.iterations,
        seeds=[cfg.seed + r for r in range(cfg.repeats)],
        per_class={p.value: [] for p in protocols},
        curves={p.value: [] for p in protocols},
        config_lock=cfg.to_lock(),
    )

    # pool for per-repeat re-splits: master train + master val (real only
    # ends up in val by construction)
    pool = [ClassManifest(lbl, list(inputs.master.train[lbl].records)
                          + list(inputs.master.val[lbl].records))
            for lbl in ClassLabel]

    for r in range(cfg.repeats):
        repeat_seed = int(np.random.SeedSequence([cfg.seed, r]).generate_state(1)[0])
        splits = make_splits(pool, SplitSpec(cfg.val_reserve, 0, repeat_seed))
        val_records = [rec for m in splits.val for rec in m.records]
        val_u8, val_labels = store.stack(val_records)
        for p in protocols:
            records = assemble(p, splits.train, inputs.plan, inputs.accepted,
                               seed=repeat_seed, allow_deficit=cfg.allow_ds3_deficit)
            train_u8, train_labels = store.stack(records)
            rng = np.random.default_rng([cfg.seed, r, list(Protocol).index(p)])
            progress(f"repeat {r + 1}/{cfg.repeats} {p.value}: "
                     f"{len(records)} train images")
            predict, curve = train_fn(train_u8, train_labels, val_u8, val_labels,
                                      clf_cfg, rng, eval_batch=cfg.eval_batch,
                                      log_prefix=f"[{p.value} r{r}]")
            report.curves[p.value].append(curve)
            acc = eval_fn(predict, test_u8, test_labels)
            report.per_class[p.value].append(acc)
            progress(f"repeat {r + 1}/{cfg.repeats} {p.value}: "
                     f"test total {acc.total:.2f}%")
    report.runtime_seconds = time.time() - t_start
    return report


# ---------------------------------------------------------------------------
# report emission
# ---------------------------------------------------------------------------

def render_report_table(report: ExperimentReport) -> str:
    """Accuracy table: class rows, protocol columns, Total row with +/- std."""
    protos = [p for p in report.protocols if report.per_class[p]]
    omitted = [p for p in report.protocols if not report.per_class[p]]
    header = ["Accuracy (%)"] + [p.upper() for p in protos]
    rows = [header]
    for lbl in TABLE_ORDER:
        row = [DISPLAY_NAMES[lbl]]
        for p in protos:
            v = report.class_mean(p, lbl)
            row.append("absent" if v is None else f"{v:.2f}")
        rows.append(row)
    total_row = ["Total"]
    for p in protos:
        mean, std = report.total_mean_std(p)
        total_row.append(f"{mean:.2f}±{std:.2f}")
    rows.append(total_row)
    widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
    lines = []
    for i, row in enumerate(rows):
        lines.append("  ".join(cell.ljust(widths[j]) for j, cell in enumerate(row)).rstrip())
        if i == 0:
            lines.append("-" * (sum(widths) + 2 * (len(widths) - 1)))
    if omitted:
        lines.append("")
        lines.append(f"(no results for: {', '.join(o.upper() for o in omitted)})")
    return "\n".join(lines) + "\n"


def report_csv(report: ExperimentReport) -> str:
    lines = ["protocol,class,mean_accuracy,std_accuracy"]
    for p in report.protocols:
        if not report.per_class[p]:
            continue
        for lbl in TABLE_ORDER:
            vals = [acc.per_class[lbl] for acc in report.per_class[p]
                    if acc.per_class[lbl] is not None]
            if vals:
                arr = np.array(vals, dtype=np.float64)
                lines.append(f"{p},{DISPLAY_NAMES[lbl]},{arr.mean()},{arr.std()}")
            else:
                lines.append(f"{p},{DISPLAY_NAMES[lbl]},absent,absent")
        mean, std = report.total_mean_std(p)
        lines.append(f"{p},Total,{mean},{std}")
    return "\n".join(lines) + "\n"


def curves_csv(report: ExperimentReport, protocol: str) -> str:
    mean, std = report.curve_mean_std(protocol)
    lines = ["iteration,mean_accuracy,std"]
    for i, (m, s) in enumerate(zip(mean, std)):
        lines.append(f"{i},{m},{s}")
    return "\n".join(lines) + "\n"


def emit_report(report: ExperimentReport, out_dir) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, text in (("report.txt", render_report_table(report)),
                       ("report.csv", report_csv(report)),
                       ("config.lock", report.config_lock)):
        p = out / name
        p.write_text(text, encoding="utf-8")
        paths.append(p)
    return paths


def emit_curves(report: ExperimentReport, out_dir) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for p in report.protocols:
        if not report.curves[p]:
            continue
        f = out / f"curves_{p}.csv"
        f.write_text(curves_csv(report, p), encoding="utf-8")
        paths.append(f)
    return paths


# ---------------------------------------------------------------------------
# full pipeline: scan, split, plan, GAN training, synthesis, curation
# ---------------------------------------------------------------------------

def prepare_inputs(cfg: StudyConfig, auto_accept: bool = True,
                   progress: Callable[[str], None] = logger.info) -> StudyInputs:
    """Run the data side of the study: splits, plan, GANs, curation export.

    With auto_accept=False the pipeline stops after enqueueing synthetics so
    a human can review them through the curation service; rerun with the
    same run_dir afterwards to pick up the verdicts.
    """
    run = Path(cfg.run_dir)
    run.mkdir(parents=True, exist_ok=True)
    scan = scan_dataset(cfg.dataset_root)
    if scan.skipped:
        progress(f"skipped {len(scan.skipped)} non-conforming files")
    write_manifests(run / "manifests.tsv", scan.manifests)
    master = make_splits(scan.manifests, SplitSpec(cfg.val_reserve,
                                                   cfg.test_reserve, cfg.seed))
    write_split_indices(run / "splits.tsv", scan.manifests, master)
    plan = plan_balance(master.train, cfg.multiplier)
    (run / "plan.csv").write_text(plan.to_csv(), encoding="utf-8")
    progress(f"balance plan: target {plan.target} per class")

    store = CurationStore(cfg.store_dir)
    pixel_store = PixelStore()
    gan_cfg = cfg.gan_config()
    for lbl in ClassLabel:
        quota = plan.quotas[lbl]
        synth_dir = run / "synthetic" / lbl.name
        if quota <= 0:
            continue
        done_marker = run / f"gan_{lbl.name}.done"
        if done_marker.exists():
            progress(f"{lbl.name}: synthetics already generated")
            continue
        rng = np.random.default_rng([cfg.seed, 100 + lbl.value])
        train_records = list(master.train[lbl].records)
        if len(train_records) > cfg.gan_train_per_class:
            idx = rng.permutation(len(train_records))[:cfg.gan_train_per_class]
            train_records = [train_records[i] for i in sorted(idx)]
        images, _ = pixel_store.stack(train_records)
        progress(f"{lbl.name}: training GAN on {len(images)} images "
                 f"({gan_cfg.iterations} iterations)")
        result = gan.train_gan(images, gan_cfg, rng)
        ckpt = run / f"gan_{lbl.name}.gbck"
        gan.save_generator(ckpt, result.generator)
        gen_id = file_checksum(ckpt)[:16]
        progress(f"{lbl.name}: synthesizing {quota} images")
        synth = gan.synthesize(result.generator, quota, rng,
                               batch_size=gan_cfg.batch_size)
        synth_dir.mkdir(parents=True, exist_ok=True)
        samples = []
        for i in range(synth.shape[0]):
            path = synth_dir / f"{lbl.name.lower()}_synth_{i:05d}.png"
            Image.fromarray(synth[i], mode="L").save(path)
            samples.append(GeneratedSample(
                id=f"{lbl.name}-{gen_id}-{i:05d}",
                label=lbl.name,
                png_path=str(path),
                generator_id=gen_id,
                created_at=time.time(),
                checksum=file_checksum(path),
            ))
        store.enqueue(samples)
        done_marker.write_text(gen_id + "\n", encoding="utf-8")
    if auto_accept:
        n = store.auto_accept_all()
        if n:
            progress(f"auto-accepted {n} pending samples")
    accepted = {lbl: store.export_accepted(lbl) for lbl in ClassLabel}
    return StudyInputs(master=master, plan=plan, accepted=accepted)


def run_full_study(cfg: StudyConfig, auto_accept: bool = True,
                   progress: Callable[[str], None] = logger.info,
                   train_fn: Optional[TrainFn] = None,
                   eval_fn: Optional[EvalFn] = None) -> ExperimentReport:
    inputs = prepare_inputs(cfg, auto_accept=auto_accept, progress=progress)
    report = run_study(cfg, inputs, train_fn=train_fn, eval_fn=eval_fn,
                       progress=progress)
    emit_report(report, cfg.run_dir)
    emit_curves(report, cfg.run_dir)
    return report
