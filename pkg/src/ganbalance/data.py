"""Dataset ingestion, split reservation, and balance planning.

Datasets are directories of 8-bit grayscale PNGs, one subdirectory per class.
Manifests snapshot what was found (path, class, source, checksum); splits
reserve per-class validation/test images from the real pool; the balance
plan derives per-class synthesis quotas from a target of ``multiplier`` times
the largest training class.

A procedural five-class "desk" dataset generator stands in for the private
hospital data: each class carries a distinct geometric signature over a
shared torso/lung template, with enough jitter and noise that the classes
overlap where a real imbalanced dataset would.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from PIL import Image
from scipy.ndimage import gaussian_filter

from .tensor import Tensor

logger = logging.getLogger(__name__)

REAL = "real"
SYNTHETIC = "synthetic"
SYNTHETIC_ACCEPTED = "synthetic-accepted"
_SOURCES = (REAL, SYNTHETIC, SYNTHETIC_ACCEPTED)


class ClassLabel(IntEnum):
    """The five pathology classes, with stable integer codes."""

    Pneumothorax = 0
    PulmonaryEdema = 1
    PleuralEffusion = 2
    Normal = 3
    Cardiomegaly = 4


# Row order used by the accuracy table (largest classes first, Total last).
TABLE_ORDER = [
    ClassLabel.Cardiomegaly,
    ClassLabel.Normal,
    ClassLabel.PleuralEffusion,
    ClassLabel.PulmonaryEdema,
    ClassLabel.Pneumothorax,
]

DISPLAY_NAMES = {
    ClassLabel.Pneumothorax: "Pneumothorax",
    ClassLabel.PulmonaryEdema: "Pulmonary Edema",
    ClassLabel.PleuralEffusion: "Pleural Effusion",
    ClassLabel.Normal: "Normal",
    ClassLabel.Cardiomegaly: "Cardiomegaly",
}

# Full-scale per-class image counts of the source hospital dataset.
HOSPITAL_COUNTS = {
    ClassLabel.Normal: 15781,
    ClassLabel.Cardiomegaly: 17098,
    ClassLabel.PleuralEffusion: 14510,
    ClassLabel.PulmonaryEdema: 5018,
    ClassLabel.Pneumothorax: 4013,
}

# Desk-scale counts: the hospital ratios divided by ten.
DESK_COUNTS = {label: round(n / 10) for label, n in HOSPITAL_COUNTS.items()}


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class ImageRecord:
    path: str
    label: ClassLabel
    source: str = REAL
    checksum: str = ""


@dataclass
class ClassManifest:
    label: ClassLabel
    records: list[ImageRecord] = field(default_factory=list)

    def __len__(self):
        return len(self.records)


@dataclass
class ScanReport:
    manifests: list[ClassManifest]
    skipped: list[tuple[str, str]] = field(default_factory=list)  # (path, reason)
    unknown_dirs: list[str] = field(default_factory=list)


def file_checksum(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def scan_dataset(root, source: str = REAL) -> ScanReport:
    """Enumerate 8-bit grayscale PNGs under one subdirectory per class.

    Non-conforming or unreadable files are skipped and reported; directories
    that are not class names are flagged. Output ordering (classes by code,
    files by name) is deterministic, so rescanning an unchanged tree yields
    byte-identical manifest serialization.
    """
    root = Path(root)
    if not root.is_dir():
        raise DatasetError(f"dataset root {root} is not a directory")
    known = {lbl.name: lbl for lbl in ClassLabel}
    report = ScanReport(manifests=[ClassManifest(lbl) for lbl in ClassLabel])
    for sub in sorted(p for p in root.iterdir() if p.is_dir()):
        if sub.name not in known:
            logger.warning("ignoring unknown class directory %s", sub)
            report.unknown_dirs.append(str(sub))
            continue
        label = known[sub.name]
        manifest = report.manifests[label]
        for f in sorted(sub.iterdir()):
            if f.is_dir():
                continue
            try:
                with Image.open(f) as im:
                    if im.format != "PNG" or im.mode != "L":
                        report.skipped.append(
                            (str(f), f"not an 8-bit grayscale PNG ({im.format}/{im.mode})"))
                        continue
                    im.load()
            except Exception as exc:  # decode errors, truncated files
                report.skipped.append((str(f), f"unreadable: {exc}"))
                continue
            manifest.records.append(
                ImageRecord(str(f), label, source, file_checksum(f)))
    for m in report.manifests:
        if not m.records:
            logger.warning("no images found for class %s", m.label.name)
    return report


# ---------------------------------------------------------------------------
# manifest serialization: path<TAB>class<TAB>source<TAB>checksum
# ---------------------------------------------------------------------------

def serialize_manifests(manifests: Sequence[ClassManifest]) -> str:
    lines = []
    for m in manifests:
        for r in m.records:
            lines.append(f"{r.path}\t{r.label.name}\t{r.source}\t{r.checksum}")
    return "\n".join(lines) + ("\n" if lines else "")


def write_manifests(path, manifests: Sequence[ClassManifest]):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(serialize_manifests(manifests), encoding="utf-8")


def read_manifests(path) -> list[ClassManifest]:
    manifests = [ClassManifest(lbl) for lbl in ClassLabel]
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 4:
            raise DatasetError(f"{path}:{lineno}: expected 4 tab-separated fields")
        p, cls, source, checksum = parts
        if source not in _SOURCES:
            raise DatasetError(f"{path}:{lineno}: unknown source {source!r}")
        label = ClassLabel[cls]
        manifests[label].records.append(ImageRecord(p, label, source, checksum))
    return manifests


# ---------------------------------------------------------------------------
# splits
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SplitSpec:
    val_per_class: int
    test_per_class: int
    seed: int


@dataclass
class Splits:
    train: list[ClassManifest]
    val: list[ClassManifest]
    test: list[ClassManifest]


def make_splits(manifests: Sequence[ClassManifest], spec: SplitSpec) -> Splits:
    """Seeded per-class reservation: val, then test, remainder to train.

    Only source=real images are eligible for val/test; synthetic records
    always land in train. Raises with a per-class deficit report if any
    class cannot satisfy the reserves.
    """
    deficits = []
    for m in manifests:
        n_real = sum(1 for r in m.records if r.source == REAL)
        need = spec.val_per_class + spec.test_per_class
        if n_real < need:
            deficits.append(f"{m.label.name}: have {n_real} real, need {need}")
    if deficits:
        raise DatasetError("insufficient real images for split reserves: "
                           + "; ".join(deficits))
    rng = np.random.default_rng(spec.seed)
    out = Splits([], [], [])
    for m in manifests:
        real = sorted((r for r in m.records if r.source == REAL), key=lambda r: r.path)
        other = sorted((r for r in m.records if r.source != REAL), key=lambda r: r.path)
        perm = rng.permutation(len(real))
        shuffled = [real[i] for i in perm]
        v, t = spec.val_per_class, spec.test_per_class
        out.val.append(ClassManifest(m.label, shuffled[:v]))
        out.test.append(ClassManifest(m.label, shuffled[v:v + t]))
        out.train.append(ClassManifest(m.label, shuffled[v + t:] + other))
    return out


def write_split_indices(path, manifests: Sequence[ClassManifest], splits: Splits):
    """Persist splits as indices into the serialized manifest row order."""
    index_of = {}
    row = 0
    for m in manifests:
        for r in m.records:
            index_of[(r.path, r.label)] = row
            row += 1
    lines = []
    for name, part in (("train", splits.train), ("val", splits.val), ("test", splits.test)):
        for m in part:
            for r in m.records:
                lines.append(f"{name}\t{index_of[(r.path, r.label)]}")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_split_indices(path, manifests: Sequence[ClassManifest]) -> Splits:
    rows: list[ImageRecord] = [r for m in manifests for r in m.records]
    parts = {"train": [], "val": [], "test": []}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        name, idx = line.split("\t")
        parts[name].append(rows[int(idx)])
    out = Splits([], [], [])
    for name, dest in (("train", out.train), ("val", out.val), ("test", out.test)):
        by_label = {lbl: ClassManifest(lbl) for lbl in ClassLabel}
        for r in parts[name]:
            by_label[r.label].records.append(r)
        dest.extend(by_label[lbl] for lbl in ClassLabel)
    return out


# ---------------------------------------------------------------------------
# balance planning
# ---------------------------------------------------------------------------

@dataclass
class BalancePlan:
    target: int
    real_counts: dict[ClassLabel, int]
    quotas: dict[ClassLabel, int]

    def to_csv(self) -> str:
        lines = ["class,target,real,quota"]
        for lbl in ClassLabel:
            lines.append(f"{lbl.name},{self.target},{self.real_counts[lbl]},{self.quotas[lbl]}")
        return "\n".join(lines) + "\n"

    @staticmethod
    def from_csv(text: str) -> "BalancePlan":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        real, quotas, target = {}, {}, 0
        for ln in lines[1:]:
            cls, tgt, r, q = ln.split(",")
            label = ClassLabel[cls]
            target = int(tgt)
            real[label] = int(r)
            quotas[label] = int(q)
        return BalancePlan(target, real, quotas)


def plan_balance(train_manifests: Sequence[ClassManifest],
                 multiplier: float = 2.0) -> BalancePlan:
    """Per-class synthesis quotas toward multiplier x the largest train class."""
    counts = {m.label: len(m.records) for m in train_manifests}
    if all(c == 0 for c in counts.values()):
        raise DatasetError("cannot plan balance: all classes are empty")
    target = int(round(multiplier * max(counts.values())))
    quotas = {lbl: target - counts.get(lbl, 0) for lbl in ClassLabel}
    return BalancePlan(target, {lbl: counts.get(lbl, 0) for lbl in ClassLabel}, quotas)


# ---------------------------------------------------------------------------
# procedural desk-scale dataset
# ---------------------------------------------------------------------------

def _soft_ellipse(yy, xx, cy, cx, ry, rx, sharpness=60.0):
    """Smooth-edged ellipse mask in [0,1]; coordinates span [-1,1]."""
    q = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2
    return 1.0 / (1.0 + np.exp(np.clip((q - 1.0) * sharpness, -40, 40)))


def _draw_one(label: ClassLabel, size: int, rng: np.random.Generator) -> np.ndarray:
    """Render one image as uint8 [size, size].

    Class cues deliberately overlap: heart-size ranges for Normal and
    Cardiomegaly share a boundary region, effusion levels and edema texture
    can be faint, and Normal images often carry vessel-like streaks that
    mimic a pleural line away from the pleura. Minority-class accuracy then
    genuinely depends on how much of each cue manifold training covers.
    """
    lin = np.linspace(-1.0, 1.0, size)
    yy, xx = np.meshgrid(lin, lin, indexing="ij")

    dy, dx = rng.uniform(-0.03, 0.03, 2)  # whole-figure position jitter
    scale = rng.uniform(0.95, 1.05)       # whole-figure scale jitter

    img = np.full((size, size), 0.08)
    torso = _soft_ellipse(yy, xx, 0.05 + dy, dx, 0.88 * scale, 0.66 * scale)
    img += 0.40 * torso

    lungs = []
    lung_geom = []
    for side in (-1, 1):
        ry = 0.55 * scale * rng.uniform(0.97, 1.03)
        rx = 0.26 * scale * rng.uniform(0.96, 1.04)
        cy, cx = -0.08 + dy, side * 0.33 + dx
        lung = _soft_ellipse(yy, xx, cy, cx, ry, rx)
        lungs.append(lung)
        lung_geom.append((cy, cx, ry, rx))
        img -= 0.17 * lung
    lung_field = np.maximum(lungs[0], lungs[1])

    # cardiac silhouette: overlapping size ranges keep the boundary cases
    # ambiguous even with plentiful data
    if label is ClassLabel.Cardiomegaly:
        rx_heart = rng.uniform(0.25, 0.34)
    else:
        rx_heart = rng.uniform(0.19, 0.25)
    heart = _soft_ellipse(yy, xx, 0.30 + dy, 0.03 + dx,
                          1.25 * rx_heart * scale, rx_heart * scale)
    img += 0.30 * heart

    # vessel-like streaks inside the lungs (common in non-pneumothorax
    # classes): local bright segments a line detector would confuse with the
    # pleural line unless position relative to the lung edge is learned
    if label is not ClassLabel.Pneumothorax and rng.uniform() < 0.45:
        for _ in range(rng.integers(1, 3)):
            s = rng.integers(0, 2)
            cy, cx, ry, rx = lung_geom[s]
            t0 = rng.uniform(0, 2 * np.pi)
            length = rng.uniform(0.15, 0.45)
            r_frac = rng.uniform(0.15, 0.55)
            py = cy + ry * r_frac * np.sin(t0)
            px = cx + rx * r_frac * np.cos(t0)
            ang = rng.uniform(0, np.pi)
            d = np.abs(np.cos(ang) * (yy - py) + np.sin(ang) * (xx - px))
            along = np.abs(-np.sin(ang) * (yy - py) + np.cos(ang) * (xx - px))
            streak = np.exp(-(d / 0.015) ** 2) * (along < length / 2)
            img += rng.uniform(0.06, 0.11) * streak * lungs[s]

    if label is ClassLabel.PleuralEffusion:
        # bright fluid level; sometimes only a shallow pool
        level = rng.uniform(0.02, 0.38) + dy
        band = lung_field * (1.0 / (1.0 + np.exp(-(yy - level) * 30)))
        img += rng.uniform(0.18, 0.28) * band
    elif label is ClassLabel.Pneumothorax:
        # thin pleural line tracing part of one lung at variable depth and
        # brightness, with a subtle darker rim outside it
        side = int(rng.uniform() < 0.5)
        cy, cx, ry, rx = lung_geom[side]
        f = rng.uniform(0.68, 0.90)
        inner = _soft_ellipse(yy, xx, cy, cx, ry * f, rx * f, sharpness=220.0)
        shell = inner - _soft_ellipse(yy, xx, cy, cx, ry * f * 0.90,
                                      rx * f * 0.90, sharpness=220.0)
        theta = np.arctan2(yy - cy, (xx - cx) * (1 if side else -1))
        t_lo = rng.uniform(-1.3, -0.3)
        sector = (theta > t_lo) & (theta < t_lo + rng.uniform(1.2, 2.4))
        rim = np.clip(lungs[side] - inner, 0, 1)
        img += rng.uniform(0.10, 0.22) * np.clip(shell, 0, 1) * sector
        img -= 0.05 * rim
    elif label is ClassLabel.PulmonaryEdema:
        # hazy texture of variable strength across the lung fields
        noise = gaussian_filter(rng.standard_normal((size, size)), sigma=size / 40.0)
        noise /= max(np.abs(noise).max(), 1e-9)
        img += lung_field * (0.04 + rng.uniform(0.05, 0.15) * np.abs(noise))

    img *= rng.uniform(0.94, 1.06)
    img += rng.uniform(-0.02, 0.02)
    img += rng.standard_normal((size, size)) * 0.015
    return (np.clip(img, 0.0, 1.0) * 255.0).round().astype(np.uint8)


def generate_synthetic_desk_dataset(counts: Mapping[ClassLabel, int], size: int,
                                    seed: int, root) -> int:
    """Write a procedural dataset under root/<ClassName>/; returns file count.

    Deterministic for a fixed (counts, size, seed): each class draws from its
    own child RNG stream, so per-class pixel data is reproducible.
    """
    if size < 32:
        raise DatasetError(f"image size must be >= 32, got {size}")
    root = Path(root)
    written = 0
    seq = np.random.SeedSequence(seed)
    children = seq.spawn(len(ClassLabel))
    for label in ClassLabel:
        rng = np.random.default_rng(children[label.value])
        out_dir = root / label.name
        out_dir.mkdir(parents=True, exist_ok=True)
        for i in range(counts.get(label, 0)):
            arr = _draw_one(label, size, rng)
            Image.fromarray(arr, mode="L").save(out_dir / f"{label.name.lower()}_{i:05d}.png")
            written += 1
    return written


# ---------------------------------------------------------------------------
# pixel loading
# ---------------------------------------------------------------------------

class PixelCache:
    """Decoded-PNG cache: path -> uint8 [H, W]. Safe to share read-only."""

    def __init__(self):
        self._store: dict[str, np.ndarray] = {}

    def get(self, path: str) -> np.ndarray:
        arr = self._store.get(path)
        if arr is None:
            try:
                with Image.open(path) as im:
                    arr = np.asarray(im.convert("L"), dtype=np.uint8)
            except Exception as exc:
                raise DatasetError(f"failed to decode {path}: {exc}") from exc
            self._store[path] = arr
        return arr

    def __len__(self):
        return len(self._store)


def load_batch(records: Sequence[ImageRecord], normalization: str = "unit",
               cache: PixelCache | None = None) -> tuple[Tensor, np.ndarray]:
    """Decode records into a float32 [n,1,S,S] tensor plus label codes.

    normalization 'unit' maps pixels to [0,1]; 'symmetric' to [-1,1].
    """
    if normalization not in ("unit", "symmetric"):
        raise ValueError(f"unknown normalization {normalization!r}")
    cache = cache or PixelCache()
    arrs = [cache.get(r.path) for r in records]
    shapes = {a.shape for a in arrs}
    if len(shapes) > 1:
        raise DatasetError(f"mixed image shapes in batch: {sorted(shapes)}")
    stack = np.stack(arrs).astype(np.float32)[:, None, :, :]
    if normalization == "unit":
        stack /= 255.0
    else:
        stack = stack / 127.5 - 1.0
    labels = np.array([int(r.label) for r in records], dtype=np.int64)
    return Tensor(stack), labels


def normalize_u8(stack: np.ndarray, normalization: str) -> np.ndarray:
    """Normalize a uint8 [n,S,S] stack to float32 [n,1,S,S]."""
    x = stack.astype(np.float32)[:, None, :, :]
    if normalization == "unit":
        x /= 255.0
    elif normalization == "symmetric":
        x = x / 127.5 - 1.0
    else:
        raise ValueError(f"unknown normalization {normalization!r}")
    return x
