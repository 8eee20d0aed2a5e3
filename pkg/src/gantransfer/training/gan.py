"""Adversarial training of a generator/discriminator pair."""
from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np

from ..autodiff import BCE_EPS, Tensor, bce, no_grad
from ..errors import EmptyBatch, InvalidHyperparameter, NonFiniteLoss, ShapeMismatch, TooSmall
from ..models import ModelGraph, build_discriminator, build_generator
from .optim import Optimizer, adam

log = logging.getLogger(__name__)

G_LOSSES = ("non_saturating", "minimax")


@dataclass
class GanTrainConfig:
    iterations: int = 2000
    batch_size: int = 32
    latent_dim: int = 100
    d_steps: int = 1
    g_loss: str = "non_saturating"
    lr_g: float = 2e-4
    lr_d: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    base_channels: int = 32
    seed: int = 0
    log_path: Optional[str] = None

    def __post_init__(self):
        if self.iterations < 0:
            raise InvalidHyperparameter("iterations must be >= 0")
        for name in ("batch_size", "latent_dim", "d_steps", "base_channels"):
            if getattr(self, name) < 1:
                raise InvalidHyperparameter(f"{name} must be >= 1")
        if self.g_loss not in G_LOSSES:
            raise InvalidHyperparameter(f"g_loss must be one of {G_LOSSES}")


@dataclass
class TrainingReport:
    g_loss: List[float] = field(default_factory=list)
    d_loss: List[float] = field(default_factory=list)
    d_real: List[float] = field(default_factory=list)
    d_fake: List[float] = field(default_factory=list)
    wall_clock: float = 0.0
    checksum: str = ""

    def __len__(self):
        return len(self.g_loss)

    def append(self, metrics: dict) -> None:
        for key in ("g_loss", "d_loss", "d_real", "d_fake"):
            getattr(self, key).append(metrics[key])

    def rows(self):
        for i in range(len(self)):
            yield {"iteration": i + 1, "g_loss": self.g_loss[i], "d_loss": self.d_loss[i],
                   "d_real": self.d_real[i], "d_fake": self.d_fake[i]}

    def tail_mean(self, key: str, window: int = 100) -> float:
        series = getattr(self, key)[-window:]
        return float(np.mean(series)) if series else float("nan")

    def write_jsonl(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as fh:
            for row in self.rows():
                fh.write(json.dumps(row) + "\n")
        return path


def _finite(value: float, what: str, **diag) -> float:
    if not np.isfinite(value):
        raise NonFiniteLoss(f"{what} is {value}", diagnostics=diag)
    return value


def _finite_probs(*probs: Tensor) -> None:
    # a NaN probability would otherwise surface as a bce domain error
    for p in probs:
        bad = ~np.isfinite(p.data)
        if bad.any():
            raise NonFiniteLoss("discriminator produced non-finite probabilities",
                                diagnostics={"non_finite": int(bad.sum())})


def minimax_value(D: ModelGraph, G: ModelGraph, real_batch, noise_batch, train: bool = False) -> float:
    """Empirical value of the two-player objective

        mean log D(x) + mean log(1 - D(G(z)))

    with probabilities clamped to [1e-7, 1 - 1e-7].  Evaluated without
    recording gradients.
    """
    if len(real_batch) == 0 or len(noise_batch) == 0:
        raise EmptyBatch("minimax_value needs non-empty real and noise batches")
    with no_grad():
        p_real = D(real_batch, train=train).data
        p_fake = D(G(noise_batch, train=train), train=train).data
    return value_from_probabilities(p_real, p_fake)


def value_from_probabilities(p_real, p_fake) -> float:
    p_real = np.clip(np.asarray(p_real, dtype=np.float64), BCE_EPS, 1 - BCE_EPS)
    p_fake = np.clip(np.asarray(p_fake, dtype=np.float64), BCE_EPS, 1 - BCE_EPS)
    if p_real.size == 0 or p_fake.size == 0:
        raise EmptyBatch("empty probability batch")
    return float(np.mean(np.log(p_real)) + np.mean(np.log(1 - p_fake)))


def generator_loss(d_fake: Tensor, variant: str) -> Tensor:
    """Generator objective on D(G(z)); both variants push D(G(z)) upward."""
    if variant == "non_saturating":
        return bce(d_fake, 1.0)
    if variant == "minimax":
        # mean log(1 - D(G(z))), minimised by G
        return -bce(d_fake, 0.0)
    raise InvalidHyperparameter(f"unknown generator loss {variant!r}")


def sample_noise(rng: np.random.Generator, n: int, latent_dim: int, dtype=np.float32) -> np.ndarray:
    return rng.standard_normal((n, latent_dim)).astype(dtype)


def gan_train_step(G: ModelGraph, D: ModelGraph, real_batch, config: GanTrainConfig,
                   opt_g: Optimizer, opt_d: Optimizer, rng: np.random.Generator) -> dict:
    """One round of ``d_steps`` discriminator updates followed by one generator update.

    The discriminator learns real -> 1, fake -> 0 on generator samples that
    are produced without a gradient path back into the generator.
    """
    real = real_batch if isinstance(real_batch, Tensor) else Tensor(np.asarray(real_batch, dtype=D.dtype))
    n = real.shape[0]
    if n == 0:
        raise EmptyBatch("empty real batch")
    size = D.meta.get("in_size")
    if real.ndim != 4 or real.shape[1:] != (1, size, size):
        raise ShapeMismatch(f"real batch {real.shape} does not match discriminator input (N, 1, {size}, {size})")
    latent = G.meta["latent_dim"]

    for _ in range(config.d_steps):
        with no_grad():
            fake = G(sample_noise(rng, n, latent, G.dtype), train=True)
        d_real = D(real, train=True)
        d_fake = D(fake, train=True)
        _finite_probs(d_real, d_fake)
        loss_d = bce(d_real, 1.0) + bce(d_fake, 0.0)
        _finite(loss_d.item(), "discriminator loss", d_real=float(d_real.data.mean()),
                d_fake=float(d_fake.data.mean()))
        D.zero_grad()
        loss_d.backward()
        opt_d.step(D.trainable())

    fake = G(sample_noise(rng, n, latent, G.dtype), train=True)
    d_on_fake = D(fake, train=True)
    _finite_probs(d_on_fake)
    loss_g = generator_loss(d_on_fake, config.g_loss)
    _finite(loss_g.item(), "generator loss", d_fake=float(d_on_fake.data.mean()))
    G.zero_grad()
    loss_g.backward()
    D.zero_grad()  # the generator step must not move the discriminator
    opt_g.step(G.trainable())

    return {"d_loss": loss_d.item(), "g_loss": loss_g.item(),
            "d_real": float(d_real.data.mean()), "d_fake": float(d_fake.data.mean())}


def train_gan(images, config: GanTrainConfig, G: Optional[ModelGraph] = None,
              D: Optional[ModelGraph] = None) -> Tuple[ModelGraph, ModelGraph, TrainingReport]:
    """Train a GAN on single-class images.

    ``images`` is (N, H, W) or (N, 1, H, W) with pixel values in [0, 1] (a
    :class:`~gantransfer.data.Dataset` also works).  Models are built from
    ``config`` unless supplied.
    """
    pixels = images.pixels if hasattr(images, "pixels") else np.asarray(images)
    if pixels.ndim == 3:
        pixels = pixels[:, None]
    n, _, h, w = pixels.shape
    if h != w:
        raise ShapeMismatch("GAN training needs square images")
    if n < config.batch_size:
        raise TooSmall(f"{n} images is fewer than the batch size {config.batch_size}")
    seeds = np.random.SeedSequence(config.seed).spawn(3)
    g_seed, d_seed = (int(s.generate_state(1)[0]) for s in seeds[:2])
    rng = np.random.default_rng(seeds[2])
    if G is None:
        G = build_generator(config.latent_dim, config.base_channels, h, seed=g_seed)
    if D is None:
        D = build_discriminator(h, config.base_channels, seed=d_seed)
    if G.meta["out_size"] != h or D.meta["in_size"] != h:
        raise ShapeMismatch("generator/discriminator size does not match the images")

    data = (pixels * 2.0 - 1.0).astype(D.dtype)
    opt_g = adam(config.lr_g, config.beta1, config.beta2)
    opt_d = adam(config.lr_d, config.beta1, config.beta2)
    report = TrainingReport()
    start = time.perf_counter()
    for it in range(config.iterations):
        idx = rng.choice(n, size=config.batch_size, replace=False)
        try:
            metrics = gan_train_step(G, D, data[idx], config, opt_g, opt_d, rng)
        except NonFiniteLoss as exc:
            exc.diagnostics["iteration"] = it + 1
            log.error("GAN training diverged at iteration %d: %s", it + 1, exc)
            raise
        report.append(metrics)
        if (it + 1) % 500 == 0:
            log.info("iter %d  d_loss %.4f  g_loss %.4f  D(real) %.3f  D(fake) %.3f",
                     it + 1, metrics["d_loss"], metrics["g_loss"], metrics["d_real"], metrics["d_fake"])
    report.wall_clock = time.perf_counter() - start
    if config.iterations:
        G.meta["trained"] = True
        G.meta["trained_iterations"] = G.meta.get("trained_iterations", 0) + config.iterations
    report.checksum = G.checksum() + D.checksum()
    if config.log_path:
        report.write_jsonl(config.log_path)
    return G, D, report


def config_dict(config: GanTrainConfig) -> dict:
    return asdict(config)
