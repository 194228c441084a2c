"""Adam optimization, learning-rate schedules, and early stopping.

Adam runs with beta1=0.5 (the momentum both networks train with here) and
the usual beta2=0.999 / eps=1e-8 defaults. Moment buffers are kept in
float64 so scalar reference traces reproduce to ~1e-9 even though the
parameters themselves are float32.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, NamedTuple, Sequence

import numpy as np

from .tensor import Tensor


class NonFiniteGradientError(ValueError):
    """A gradient contained NaN or infinity; the step was not applied."""


class Adam:
    """Adam with bias correction and optional coupled L2 weight decay.

    The L2 term (``weight_decay`` > 0) is added to the raw gradient as
    ``g + lambda * theta`` before the moment updates, i.e. the gradient of an
    L2 loss penalty. One instance owns one parameter set; steps mutate the
    parameter tensors in place.
    """

    def __init__(self, params: Mapping[str, Tensor] | Sequence[Tensor],
                 beta1: float = 0.5, beta2: float = 0.999, eps: float = 1e-8,
                 weight_decay: float = 0.0):
        if isinstance(params, Mapping):
            self.params = list(params.values())
        else:
            self.params = list(params)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = [np.zeros(p.shape, dtype=np.float64) for p in self.params]
        self.v = [np.zeros(p.shape, dtype=np.float64) for p in self.params]

    def step(self, lr: float):
        """Apply one update; rejects the whole step if any gradient is non-finite."""
        grads = []
        for p in self.params:
            g = p.grad
            if g is None:
                g = np.zeros(p.shape, dtype=np.float64)
            if not np.all(np.isfinite(g)):
                raise NonFiniteGradientError("non-finite gradient; step rejected")
            grads.append(np.asarray(g, dtype=np.float64))
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * np.square(g)
            update = lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p.data -= update.astype(p.data.dtype)

    def zero_grad(self):
        for p in self.params:
            p.grad = None


@dataclass(frozen=True)
class LrSchedule:
    """Constant or sigmoid-decay learning rate as a function of iteration.

    sigmoid-decay interpolates from lr0 down to lr_min through a logistic
    curve centred at iteration t0 with width tau:
    lr(t) = lr_min + (lr0 - lr_min) * sigma((t0 - t) / tau).
    """

    kind: str  # "constant" | "sigmoid-decay"
    lr0: float
    lr_min: float = 0.0
    t0: float = 0.0
    tau: float = 1.0

    def __post_init__(self):
        if self.kind not in ("constant", "sigmoid-decay"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")

    @staticmethod
    def constant(lr0: float) -> "LrSchedule":
        return LrSchedule("constant", lr0)

    @staticmethod
    def sigmoid_decay(lr0: float, total_iterations: int,
                      lr_min: float | None = None) -> "LrSchedule":
        """Default shape: midpoint at half the run, width a tenth of it."""
        return LrSchedule(
            "sigmoid-decay",
            lr0,
            lr_min=lr0 / 100 if lr_min is None else lr_min,
            t0=total_iterations / 2,
            tau=max(total_iterations / 10, 1e-9),
        )

    def __call__(self, t: float) -> float:
        if t < 0:
            raise ValueError(f"iteration must be >= 0, got {t}")
        if self.kind == "constant":
            return self.lr0
        z = (self.t0 - t) / self.tau
        if z >= 0:
            sig = 1.0 / (1.0 + np.exp(-z))
        else:
            e = np.exp(z)
            sig = e / (1.0 + e)
        return self.lr_min + (self.lr0 - self.lr_min) * float(sig)


def schedule_lr(schedule: LrSchedule, t: float) -> float:
    return schedule(t)


@dataclass(frozen=True)
class EarlyStopConfig:
    patience: int
    min_delta: float = 0.0

    def __post_init__(self):
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.min_delta < 0:
            raise ValueError("min_delta must be >= 0")


class EarlyStopDecision(NamedTuple):
    should_stop: bool
    best_index: int


def early_stop_check(history: Sequence[float], cfg: EarlyStopConfig) -> EarlyStopDecision:
    """Stop once `patience` consecutive entries fail to beat the best by min_delta.

    best_index identifies the entry whose checkpoint should be restored.
    """
    if not history:
        raise ValueError("history must be non-empty")
    best = history[0]
    best_i = 0
    since = 0
    for i in range(1, len(history)):
        if history[i] > best + cfg.min_delta:
            best, best_i, since = history[i], i, 0
        else:
            since += 1
    return EarlyStopDecision(since >= cfg.patience, best_i)
