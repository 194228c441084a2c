"""AlexNet-style grayscale CNN for 5-class pathology classification.

The network is a stack of 5x5 same-padded convolutions, each followed by
ReLU then 2x2 max pooling, flattened into a feature vector, a single hidden
MLP layer, and a softmax output. The paper-scale geometry (256x256 input,
five conv stages) flattens to exactly 4,096 features; the desk geometry
(64x64, four stages) flattens to 1,024.

Training is mini-batch Adam (beta1=0.5) under a sigmoid-decay learning rate
with coupled L2 regularization; the best-validation parameters are restored
at the end (early stopping as model selection).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from . import ops
from .optim import Adam, EarlyStopConfig, LrSchedule, early_stop_check
from .tensor import ShapeError, Tensor, no_grad
from .data import ClassLabel

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ClassifierConfig:
    input_size: int = 256
    conv_channels: tuple[int, ...] = (16, 32, 64, 64, 64)
    kernel: int = 5
    hidden: int = 512
    num_classes: int = 5
    batch_size: int = 128
    iterations: int = 100
    lr0: float = 1e-3
    l2: float = 1e-4
    init_std: float | None = None  # None: sqrt(2/fan_in) per layer
    bias_init: float = 0.1
    early_stop: EarlyStopConfig | None = None  # None: train full length, restore best

    def __post_init__(self):
        size = self.input_size
        for _ in self.conv_channels:
            if size % 2:
                raise ShapeError(
                    f"conv stack reaches odd extent {size}; 2x2 pooling needs even sizes")
            size //= 2
        if size < 1:
            raise ShapeError("conv stack pools the image away entirely")

    @property
    def feature_len(self) -> int:
        side = self.input_size // (2 ** len(self.conv_channels))
        return side * side * self.conv_channels[-1]

    @staticmethod
    def paper() -> "ClassifierConfig":
        return ClassifierConfig()

    @staticmethod
    def desk(iterations: int = 30) -> "ClassifierConfig":
        return ClassifierConfig(
            input_size=64,
            conv_channels=(8, 16, 32, 64),
            hidden=128,
            batch_size=128,
            iterations=iterations,
        )


def init_classifier(config: ClassifierConfig, rng: np.random.Generator) -> dict[str, Tensor]:
    """Zero-mean normal weights, constant bias_init biases.

    With init_std=None each layer draws at std sqrt(2/fan_in); a fixed tiny
    std collapses the signal through the conv stack and training never
    escapes the class prior.
    """
    params: dict[str, Tensor] = {}

    def std(fan_in):
        return config.init_std if config.init_std is not None \
            else float(np.sqrt(2.0 / fan_in))

    c_in = 1
    k = config.kernel
    for i, c_out in enumerate(config.conv_channels):
        params[f"conv{i}.w"] = Tensor(
            rng.normal(0.0, std(c_in * k * k), (c_out, c_in, k, k)).astype(np.float32),
            requires_grad=True)
        params[f"conv{i}.b"] = Tensor(
            np.full(c_out, config.bias_init, dtype=np.float32), requires_grad=True)
        c_in = c_out
    params["fc1.w"] = Tensor(
        rng.normal(0.0, std(config.feature_len),
                   (config.feature_len, config.hidden)).astype(np.float32),
        requires_grad=True)
    params["fc1.b"] = Tensor(
        np.full(config.hidden, config.bias_init, dtype=np.float32), requires_grad=True)
    params["out.w"] = Tensor(
        rng.normal(0.0, std(config.hidden),
                   (config.hidden, config.num_classes)).astype(np.float32),
        requires_grad=True)
    params["out.b"] = Tensor(
        np.full(config.num_classes, config.bias_init, dtype=np.float32), requires_grad=True)
    return params


def classify_logits(x: Tensor, params: dict[str, Tensor], config: ClassifierConfig) -> Tensor:
    n, c, h, w = x.shape
    if c != 1 or h != config.input_size or w != config.input_size:
        raise ShapeError(
            f"classifier expects [n,1,{config.input_size},{config.input_size}], got {x.shape}")
    pad = config.kernel // 2
    for i in range(len(config.conv_channels)):
        x = ops.conv2d(x, params[f"conv{i}.w"], params[f"conv{i}.b"], stride=1, padding=pad)
        x = ops.relu(x)
        x = ops.maxpool2x2(x)
    f = x.reshape(n, config.feature_len)
    h1 = ops.relu(ops.dense(f, params["fc1.w"], params["fc1.b"]))
    return ops.dense(h1, params["out.w"], params["out.b"])


def classify_forward(x: Tensor, params: dict[str, Tensor],
                     config: ClassifierConfig) -> Tensor:
    """Class probabilities [n, num_classes]; rows sum to 1."""
    return ops.softmax(classify_logits(x, params, config))


def predict_class(probs: Tensor | np.ndarray) -> np.ndarray:
    """Row argmax; exact ties resolve to the lowest class code."""
    p = probs.data if isinstance(probs, Tensor) else np.asarray(probs)
    sums = p.sum(axis=1, dtype=np.float64)
    if np.abs(sums - 1.0).max() > 1e-5:
        raise ValueError("predict_class expects row-normalized probabilities")
    return p.argmax(axis=1)


@dataclass
class TrainResult:
    params: dict[str, Tensor]
    val_curve: list[float]          # validation accuracy (%) per iteration
    best_iteration: int
    stopped_early: bool


def _snapshot(params: dict[str, Tensor]) -> dict[str, np.ndarray]:
    return {k: v.data.copy() for k, v in params.items()}


def _restore(params: dict[str, Tensor], snap: dict[str, np.ndarray]):
    for k, v in params.items():
        v.data = snap[k].copy()


def train_classifier(train_images: np.ndarray, train_labels: np.ndarray,
                     val_images: np.ndarray, val_labels: np.ndarray,
                     config: ClassifierConfig, rng: np.random.Generator,
                     log_prefix: str = "") -> TrainResult:
    """Train on float32 [n,1,S,S] images in [0,1]; returns params + val curve.

    Order is reshuffled per iteration from rng; identical seeds give
    identical curves. The returned params are the best-validation snapshot.
    """
    present = set(np.unique(train_labels).tolist())
    missing = [c for c in range(config.num_classes) if c not in present]
    if missing:
        raise ValueError(f"train set lacks classes {missing}; accuracy undefined")
    params = init_classifier(config, rng)
    opt = Adam(params, beta1=0.5, weight_decay=config.l2)
    schedule = LrSchedule.sigmoid_decay(config.lr0, config.iterations)
    n = train_images.shape[0]
    curve: list[float] = []
    best_snap = _snapshot(params)
    best_acc, best_it = -1.0, 0
    stopped = False
    for it in range(config.iterations):
        lr = schedule(it)
        perm = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = perm[start:start + config.batch_size]
            xb = Tensor(train_images[idx])
            loss = ops.cross_entropy(
                classify_forward(xb, params, config), train_labels[idx])
            opt.zero_grad()
            loss.backward()
            opt.step(lr)
        acc = accuracy(val_images, val_labels, params, config)
        curve.append(acc)
        if acc > best_acc:
            best_acc, best_it = acc, it
            best_snap = _snapshot(params)
        if log_prefix:
            logger.info("%s iter %d/%d lr %.2e val %.2f%%",
                        log_prefix, it + 1, config.iterations, lr, acc)
        if config.early_stop is not None:
            decision = early_stop_check(curve, config.early_stop)
            if decision.should_stop:
                stopped = True
                break
    _restore(params, best_snap)
    return TrainResult(params, curve, best_it, stopped)


def predict_batched(images: np.ndarray, params: dict[str, Tensor],
                    config: ClassifierConfig, batch_size: int = 256) -> np.ndarray:
    preds = []
    with no_grad():
        for start in range(0, images.shape[0], batch_size):
            probs = classify_forward(Tensor(images[start:start + batch_size]),
                                     params, config)
            preds.append(predict_class(probs))
    return np.concatenate(preds) if preds else np.zeros(0, dtype=np.int64)


def accuracy(images: np.ndarray, labels: np.ndarray, params, config) -> float:
    preds = predict_batched(images, params, config)
    return float((preds == labels).mean() * 100.0)


@dataclass
class PerClassAccuracy:
    per_class: dict[ClassLabel, float | None]  # percent, None when class absent
    total: float
    counts: dict[ClassLabel, int]

    def rows(self) -> list[tuple[str, str]]:
        """(name, formatted accuracy) rows in the accuracy-table order."""
        from .data import DISPLAY_NAMES, TABLE_ORDER
        out = []
        for lbl in TABLE_ORDER:
            v = self.per_class[lbl]
            out.append((DISPLAY_NAMES[lbl], "absent" if v is None else f"{v:.2f}"))
        out.append(("Total", f"{self.total:.2f}"))
        return out


def evaluate_per_class(preds: np.ndarray, labels: np.ndarray) -> PerClassAccuracy:
    """Per-class and sample-weighted total accuracy, in percent."""
    per: dict[ClassLabel, float | None] = {}
    counts: dict[ClassLabel, int] = {}
    for lbl in ClassLabel:
        mask = labels == int(lbl)
        counts[lbl] = int(mask.sum())
        per[lbl] = float((preds[mask] == int(lbl)).mean() * 100.0) if counts[lbl] else None
    total = float((preds == labels).mean() * 100.0) if labels.size else 0.0
    return PerClassAccuracy(per, total, counts)
