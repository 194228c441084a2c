"""DCGAN for class-conditional grayscale image synthesis.

One generator/discriminator pair is trained per class directory. The
generator projects a uniform(-1,1) noise vector onto a 4x4 seed with
``base_channels`` feature maps, then doubles the spatial extent through
``stages`` fractionally-strided 4x4/stride-2 convolutions (channels halving
per stage) down to a tanh image in [-1,1]. The discriminator mirrors the
chain with strided convolutions and leaky-0.2 activations into a single
sigmoid logit: outputs near 1 mean "real", near 0 mean "synthesized".

Training alternates one discriminator step (real batch plus a freshly
generated batch) with one generator step per mini-batch. The generator runs
purely feed-forward while the discriminator trains, and the discriminator's
parameters are frozen while the generator trains, so each step updates only
its own network.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Iterable

import numpy as np

from . import ops
from .checkpoint import load_checkpoint, save_checkpoint
from .optim import Adam, LrSchedule
from .ops import BatchNormState
from .tensor import ShapeError, Tensor, no_grad

logger = logging.getLogger(__name__)

SEED_SIZE = 4  # spatial extent of the projected noise


@dataclass(frozen=True)
class GanConfig:
    z_dim: int = 128
    base_channels: int = 1024
    stages: int = 6
    output_size: int = 256
    image_channels: int = 1
    batch_size: int = 64
    iterations: int = 20          # passes over the class dataset
    lr0: float = 2e-4             # paper range: 2e-4 .. 2e-3 by dataset size
    lr_schedule_kind: str = "constant"
    beta1: float = 0.5
    use_batchnorm: bool = True
    init_std: float = 0.02

    def __post_init__(self):
        if self.output_size != SEED_SIZE * 2 ** self.stages:
            raise ShapeError(
                f"output_size {self.output_size} != {SEED_SIZE}*2^{self.stages}")
        if self.base_channels // 2 ** (self.stages - 1) < self.image_channels:
            raise ShapeError("channel halving drops below image_channels")

    @staticmethod
    def paper() -> "GanConfig":
        return GanConfig()

    @staticmethod
    def desk(**overrides) -> "GanConfig":
        cfg = GanConfig(z_dim=32, base_channels=64, stages=4, output_size=64,
                        batch_size=32, iterations=200, lr0=2e-3)
        return replace(cfg, **overrides) if overrides else cfg

    def schedule(self) -> LrSchedule:
        if self.lr_schedule_kind == "constant":
            return LrSchedule.constant(self.lr0)
        return LrSchedule.sigmoid_decay(self.lr0, self.iterations)

    def gen_channels(self) -> list[int]:
        """Channel counts after the projection and after each stage."""
        chain = [self.base_channels // 2 ** s for s in range(self.stages)]
        return chain + [self.image_channels]


class NetParams:
    """Named parameter tensors plus batch-norm running state."""

    def __init__(self, params: dict[str, Tensor], bn: dict[str, BatchNormState],
                 config: GanConfig):
        self.params = params
        self.bn = bn
        self.config = config

    def tensors(self) -> dict[str, Tensor]:
        return self.params

    def set_requires_grad(self, flag: bool):
        for t in self.params.values():
            t.requires_grad = flag


class GeneratorParams(NetParams):
    pass


class DiscriminatorParams(NetParams):
    pass


def _normal(rng, std, shape):
    return rng.normal(0.0, std, shape).astype(np.float32)


def init_generator(config: GanConfig, rng: np.random.Generator) -> GeneratorParams:
    ch = config.gen_channels()
    p: dict[str, Tensor] = {}
    bn: dict[str, BatchNormState] = {}
    p["proj.w"] = Tensor(_normal(rng, config.init_std,
                                 (config.z_dim, ch[0] * SEED_SIZE * SEED_SIZE)),
                         requires_grad=True)
    p["proj.b"] = Tensor(np.zeros(ch[0] * SEED_SIZE * SEED_SIZE, np.float32),
                         requires_grad=True)
    if config.use_batchnorm:
        p["bn0.gamma"] = Tensor(np.ones(ch[0], np.float32), requires_grad=True)
        p["bn0.beta"] = Tensor(np.zeros(ch[0], np.float32), requires_grad=True)
        bn["bn0"] = BatchNormState(ch[0])
    for s in range(config.stages):
        c_in, c_out = ch[s], ch[s + 1]
        p[f"up{s}.w"] = Tensor(_normal(rng, config.init_std, (c_in, c_out, 4, 4)),
                               requires_grad=True)
        p[f"up{s}.b"] = Tensor(np.zeros(c_out, np.float32), requires_grad=True)
        if config.use_batchnorm and s < config.stages - 1:
            p[f"bn{s + 1}.gamma"] = Tensor(np.ones(c_out, np.float32), requires_grad=True)
            p[f"bn{s + 1}.beta"] = Tensor(np.zeros(c_out, np.float32), requires_grad=True)
            bn[f"bn{s + 1}"] = BatchNormState(c_out)
    return GeneratorParams(p, bn, config)


def init_discriminator(config: GanConfig, rng: np.random.Generator) -> DiscriminatorParams:
    ch = list(reversed(config.gen_channels()))  # image_channels .. base_channels
    p: dict[str, Tensor] = {}
    bn: dict[str, BatchNormState] = {}
    for s in range(config.stages):
        c_in, c_out = ch[s], ch[s + 1]
        p[f"down{s}.w"] = Tensor(_normal(rng, config.init_std, (c_out, c_in, 4, 4)),
                                 requires_grad=True)
        p[f"down{s}.b"] = Tensor(np.zeros(c_out, np.float32), requires_grad=True)
        if config.use_batchnorm and s > 0:
            p[f"bn{s}.gamma"] = Tensor(np.ones(c_out, np.float32), requires_grad=True)
            p[f"bn{s}.beta"] = Tensor(np.zeros(c_out, np.float32), requires_grad=True)
            bn[f"bn{s}"] = BatchNormState(c_out)
    feat = config.base_channels * SEED_SIZE * SEED_SIZE
    p["head.w"] = Tensor(_normal(rng, config.init_std, (feat, 1)), requires_grad=True)
    p["head.b"] = Tensor(np.zeros(1, np.float32), requires_grad=True)
    return DiscriminatorParams(p, bn, config)


def sample_noise(n: int, z_dim: int, rng: np.random.Generator) -> Tensor:
    """Uniform(-1, 1) noise batch [n, z_dim]; deterministic per rng state."""
    if n < 1:
        raise ValueError(f"batch size must be >= 1, got {n}")
    return Tensor(rng.uniform(-1.0, 1.0, (n, z_dim)).astype(np.float32))


def generate(z: Tensor, gen: GeneratorParams, training: bool = False) -> Tensor:
    """Map noise [n, z_dim] to images [n, image_channels, S, S] in [-1, 1]."""
    cfg = gen.config
    if z.shape[1] != cfg.z_dim:
        raise ShapeError(f"noise dimension {z.shape[1]} != configured {cfg.z_dim}")
    p = gen.params
    n = z.shape[0]
    ch = cfg.gen_channels()
    x = ops.dense(z, p["proj.w"], p["proj.b"]).reshape(n, ch[0], SEED_SIZE, SEED_SIZE)
    if cfg.use_batchnorm:
        x = ops.batchnorm2d(x, p["bn0.gamma"], p["bn0.beta"], gen.bn["bn0"], training)
    x = ops.relu(x)
    for s in range(cfg.stages):
        x = ops.conv2d_transpose(x, p[f"up{s}.w"], p[f"up{s}.b"], stride=2, padding=1)
        if s < cfg.stages - 1:
            if cfg.use_batchnorm:
                x = ops.batchnorm2d(x, p[f"bn{s + 1}.gamma"], p[f"bn{s + 1}.beta"],
                                    gen.bn[f"bn{s + 1}"], training)
            x = ops.relu(x)
    return ops.tanh(x)


def discriminate(x: Tensor, disc: DiscriminatorParams,
                 training: bool = False) -> tuple[Tensor, Tensor]:
    """Score images; returns (probabilities in (0,1), logits), each [n]."""
    cfg = disc.config
    n, c, h, w = x.shape
    if c != cfg.image_channels or h != cfg.output_size or w != cfg.output_size:
        raise ShapeError(
            f"discriminator expects [n,{cfg.image_channels},{cfg.output_size},"
            f"{cfg.output_size}], got {x.shape}")
    p = disc.params
    for s in range(cfg.stages):
        x = ops.conv2d(x, p[f"down{s}.w"], p[f"down{s}.b"], stride=2, padding=1)
        if cfg.use_batchnorm and s > 0:
            x = ops.batchnorm2d(x, p[f"bn{s}.gamma"], p[f"bn{s}.beta"],
                                disc.bn[f"bn{s}"], training)
        x = ops.leaky_relu(x, 0.2)
    feat = x.reshape(n, cfg.base_channels * SEED_SIZE * SEED_SIZE)
    logits = ops.dense(feat, p["head.w"], p["head.b"]).reshape(n)
    return ops.sigmoid(logits), logits


def gan_losses(d_real: Tensor, d_fake: Tensor) -> tuple[Tensor, Tensor]:
    """(loss_D, loss_G), both to be minimized.

    loss_D is the negated minimax value -mean[log d_real + log(1 - d_fake)];
    loss_G is the non-saturating -mean[log d_fake]. Probabilities are
    clamped at 1e-12 before the logs.
    """
    loss_d = -(ops.log_clamped(d_real).mean() + ops.log_clamped(1.0 - d_fake).mean())
    loss_g = -(ops.log_clamped(d_fake).mean())
    return loss_d, loss_g


@dataclass
class GanTrainResult:
    generator: GeneratorParams
    discriminator: DiscriminatorParams
    history: list[tuple[float, float]]  # (loss_D, loss_G) per mini-batch


def _as_symmetric_batch(images: np.ndarray, idx: np.ndarray) -> Tensor:
    batch = images[idx]
    if batch.dtype == np.uint8:
        batch = batch.astype(np.float32)[:, None, :, :] / 127.5 - 1.0
    return Tensor(batch)


def train_gan(images: np.ndarray, config: GanConfig, rng: np.random.Generator,
              log_prefix: str = "") -> GanTrainResult:
    """Alternating D/G training over one class's images.

    ``images`` is either uint8 [n,S,S] (normalized per batch) or float32
    [n,1,S,S] already in [-1,1]. Partial trailing mini-batches are dropped so
    batch statistics stay well-defined. Deterministic for a fixed rng.
    """
    n = images.shape[0]
    if n == 0:
        raise ValueError("cannot train a GAN on an empty dataset")
    gen = init_generator(config, rng)
    disc = init_discriminator(config, rng)
    g_opt = Adam(gen.params, beta1=config.beta1)
    d_opt = Adam(disc.params, beta1=config.beta1)
    schedule = config.schedule()
    history: list[tuple[float, float]] = []
    b = min(config.batch_size, n)
    for epoch in range(config.iterations):
        lr = schedule(epoch)
        perm = rng.permutation(n)
        for start in range(0, n - b + 1, b):
            idx = perm[start:start + b]
            real = _as_symmetric_batch(images, idx)
            # one fresh fake batch per alternation; the discriminator step
            # sees it detached (generator runs feed-forward only there) and
            # the generator step backpropagates through the retained graph
            z = sample_noise(b, config.z_dim, rng)
            fake = generate(z, gen, training=True)
            d_real, _ = discriminate(real, disc, training=True)
            d_fake, _ = discriminate(fake.detach(), disc, training=True)
            loss_d, _ = gan_losses(d_real, d_fake)
            d_opt.zero_grad()
            loss_d.backward()
            d_opt.step(lr)
            # generator step against the freshly updated, frozen discriminator
            disc.set_requires_grad(False)
            d_fake2, _ = discriminate(fake, disc, training=True)
            loss_g = -(ops.log_clamped(d_fake2).mean())
            g_opt.zero_grad()
            loss_g.backward()
            g_opt.step(lr)
            disc.set_requires_grad(True)
            history.append((loss_d.item(), loss_g.item()))
        if log_prefix:
            logger.info("%s epoch %d/%d loss_D %.3f loss_G %.3f",
                        log_prefix, epoch + 1, config.iterations, *history[-1])
    return GanTrainResult(gen, disc, history)


def images_to_u8(batch: np.ndarray) -> np.ndarray:
    """Affine [-1,1] -> [0,255] rounding to uint8; [n,1,S,S] -> [n,S,S]."""
    return np.clip(np.round((batch[:, 0] + 1.0) * 127.5), 0, 255).astype(np.uint8)


def synthesize(gen: GeneratorParams, count: int, rng: np.random.Generator,
               batch_size: int = 64) -> np.ndarray:
    """Generate ``count`` eval-mode images as uint8 [count, S, S]."""
    out = []
    with no_grad():
        remaining = count
        while remaining > 0:
            b = min(batch_size, remaining)
            z = sample_noise(b, gen.config.z_dim, rng)
            out.append(images_to_u8(generate(z, gen, training=False).data))
            remaining -= b
    return np.concatenate(out) if out else np.zeros((0, gen.config.output_size,
                                                     gen.config.output_size), np.uint8)


# ---------------------------------------------------------------------------
# checkpointing (GBCK)
# ---------------------------------------------------------------------------

_META_FIELDS = ("z_dim", "base_channels", "stages", "output_size",
                "image_channels", "use_batchnorm")


def _net_to_tensors(net: NetParams, prefix: str) -> dict[str, np.ndarray]:
    out = {f"{prefix}.{k}": v.data for k, v in net.params.items()}
    for name, st in net.bn.items():
        out[f"{prefix}.{name}.running_mean"] = st.running_mean.astype(np.float32)
        out[f"{prefix}.{name}.running_var"] = st.running_var.astype(np.float32)
    return out


def save_generator(path, gen: GeneratorParams):
    tensors = {f"meta.{f}": np.array([float(getattr(gen.config, f))], np.float32)
               for f in _META_FIELDS}
    tensors.update(_net_to_tensors(gen, "g"))
    save_checkpoint(path, tensors)


def load_generator(path) -> GeneratorParams:
    loaded = load_checkpoint(path)
    meta = {f: loaded[f"meta.{f}"][0] for f in _META_FIELDS}
    config = GanConfig(z_dim=int(meta["z_dim"]),
                       base_channels=int(meta["base_channels"]),
                       stages=int(meta["stages"]),
                       output_size=int(meta["output_size"]),
                       image_channels=int(meta["image_channels"]),
                       use_batchnorm=bool(meta["use_batchnorm"]))
    gen = init_generator(config, np.random.default_rng(0))
    for k, t in gen.params.items():
        t.data = loaded[f"g.{k}"].astype(np.float32)
    for name, st in gen.bn.items():
        st.running_mean = loaded[f"g.{name}.running_mean"].astype(np.float64)
        st.running_var = loaded[f"g.{name}.running_var"].astype(np.float64)
    return gen
