"""Adversarial + actor-critic training loop."""

from __future__ import annotations

import contextlib
import dataclasses
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Union

import numpy as np

from .data import Corpus, procedural_corpus, sample_batch
from .layers import Module
from .losses import (
    FeatureExtractor, LossReport, RLWindow, compute_reward, gan_losses, generator_gan_loss,
    is_window_boundary, mse_loss, perceptual_loss, proposed_loss, rl_terms, sample_action, srgan_total,
)
from .metrics import psnr
from .model import Discriminator, Generator, save_model
from .optim import Adam
from .tensor import Tensor

log = logging.getLogger(__name__)


class NonFiniteLossError(ArithmeticError):
    def __init__(self, iteration: int, component: str, value: float):
        super().__init__(f"non-finite {component} ({value!r}) at iteration {iteration}")
        self.iteration = iteration
        self.component = component
        self.value = value


@dataclass
class TrainConfig:
    r: int = 4
    lr: float = 1e-3
    iters: int = 500
    batch: int = 4
    patch_hr: int = 64
    k_window: int = 10
    gamma: float = 0.9
    seed: int = 0
    feature_seed: int = 1
    checkpoint_path: Optional[str] = None
    log_path: Optional[str] = None
    checkpoint_every: int = 0
    width: int = 32
    n_blocks: int = 2
    disc_width: int = 16
    channels: int = 3
    jpeg_lr_quality: Optional[int] = None
    feature_checkpoint: Optional[str] = None
    corpus_size: int = 200

    def __post_init__(self):
        if self.patch_hr % self.r:
            raise ValueError(f"patch_hr={self.patch_hr} must be divisible by r={self.r}")
        if self.iters < self.k_window:
            raise ValueError(f"iters={self.iters} must be >= k_window={self.k_window}")
        if self.k_window < 1 or self.batch < 1:
            raise ValueError("k_window and batch must be positive")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in (0, 1], got {self.gamma}")

    @classmethod
    def from_mapping(cls, values: Mapping[str, object]) -> "TrainConfig":
        """Build from string or typed values, e.g. a parsed config file."""
        fields = {f.name: f for f in dataclasses.fields(cls)}
        kwargs = {}
        for key, raw in values.items():
            if key not in fields:
                raise KeyError(f"unknown config key {key!r}")
            kwargs[key] = _coerce(fields[key].type, raw)
        return cls(**kwargs)

    def as_dict(self) -> Dict[str, object]:
        return dataclasses.asdict(self)


def _coerce(type_name, raw):
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    if "Optional" in str(type_name) and text.lower() in ("", "none", "null"):
        return None
    if "int" in str(type_name):
        return int(text)
    if "float" in str(type_name):
        return float(text)
    return text


def read_config_file(path: Union[str, Path]) -> Dict[str, str]:
    """Parse flat ``key = value`` lines; ``#`` starts a comment."""
    values = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, value = line.split("=", 1)
        values[key.strip().replace("-", "_")] = value.strip()
    return values


@dataclass
class TrainResult:
    generator: Generator
    discriminator: Discriminator
    reports: List[dict] = field(default_factory=list)
    rl_applications: int = 0


@contextlib.contextmanager
def frozen(module: Module):
    """Stop gradients accumulating into ``module`` while still flowing through it."""
    params = module.parameters()
    for p in params:
        p.requires_grad = False
    try:
        yield
    finally:
        for p in params:
            p.requires_grad = True


def _batch_psnr(pred: np.ndarray, target: np.ndarray) -> float:
    return float(np.mean([psnr(p, t) for p, t in zip(pred, target)]))


def _check_finite(iteration: int, values: Mapping[str, float]) -> None:
    for name, value in values.items():
        if isinstance(value, float) and not math.isfinite(value):
            raise NonFiniteLossError(iteration, name, value)


def build_models(config: TrainConfig):
    init_g, init_d, data_seed, action_seed = np.random.SeedSequence(config.seed).spawn(4)
    gen = Generator(np.random.default_rng(init_g), r=config.r, width=config.width,
                    n_blocks=config.n_blocks, channels=config.channels)
    disc = Discriminator(np.random.default_rng(init_d), patch=config.patch_hr, width=config.disc_width,
                         channels=config.channels)
    return gen, disc, np.random.default_rng(data_seed), np.random.default_rng(action_seed)


def train(config: TrainConfig, corpus: Optional[Corpus] = None, progress: bool = False) -> TrainResult:
    """Run ``config.iters`` alternating discriminator/generator updates.

    The generator loss is the weighted SRGAN sum every iteration, plus the
    actor-critic loss on iterations that are multiples of ``k_window``.
    """
    if corpus is None:
        corpus = procedural_corpus(config.corpus_size, config.patch_hr, seed=config.seed)
    gen, disc, data_rng, action_rng = build_models(config)
    if config.feature_checkpoint:
        features = FeatureExtractor.from_checkpoint(config.feature_checkpoint, config.channels)
    else:
        features = FeatureExtractor(config.feature_seed, config.channels)
    opt_g = Adam(gen.parameters(), lr=config.lr)
    opt_d = Adam(disc.parameters(), lr=config.lr)
    window = RLWindow(config.k_window, config.gamma)
    prev_psnr = -math.inf
    result = TrainResult(gen, disc)
    log_file = open(config.log_path, "w", encoding="utf-8") if config.log_path else None
    try:
        for it in range(1, config.iters + 1):
            gen.train()
            opt_g.zero_grad()
            opt_d.zero_grad()
            lr_b, hr_b = sample_batch(corpus, data_rng, config.batch, config.patch_hr, config.r,
                                      config.jpeg_lr_quality)
            hr_t = Tensor(hr_b)
            hr_pred, policy = gen(Tensor(lr_b))

            action, log_probs = sample_action(policy, action_rng)
            measured = _batch_psnr(hr_pred.data, hr_b)
            reward = compute_reward(measured, prev_psnr)
            prev_psnr = measured
            window.push(reward, log_probs.mean(), policy.value.mean(), measured)

            l_d, _ = gan_losses(disc(hr_t), disc(hr_pred.detach()))
            _check_finite(it, {"l_gan_d": l_d.item()})
            l_d.backward()
            opt_d.step()

            with frozen(disc):
                l_mse = mse_loss(hr_pred, hr_t)
                l_vgg = perceptual_loss(hr_pred, hr_t, features)
                l_gan_g = generator_gan_loss(disc(hr_pred))
                l_srgan = srgan_total(l_mse, l_gan_g, l_vgg)
                terms = rl_terms(window) if is_window_boundary(it, config.k_window) else None
                l_total = proposed_loss(l_srgan, terms.l_rl if terms else None, it, config.k_window)
                report = LossReport(
                    l_mse=l_mse.item(), l_vgg=l_vgg.item(), l_gan_g=l_gan_g.item(), l_gan_d=l_d.item(),
                    l_pi=terms.l_pi.item() if terms else 0.0,
                    l_value=terms.l_value.item() if terms else 0.0,
                    l_rl=terms.l_rl.item() if terms else 0.0,
                    l_total=l_total.item(), window_applied=terms is not None,
                )
                _check_finite(it, {k: v for k, v in report.as_dict().items() if k != "window_applied"})
                l_total.backward()
            opt_g.step()
            if terms is not None:
                window.clear()
                result.rl_applications += 1

            row = {"iter": it, **report.as_dict(), "measured_psnr": measured, "reward": reward,
                   "psnr_pred": float(np.mean(action))}
            result.reports.append(row)
            if log_file:
                log_file.write(json.dumps(row) + "\n")
            if progress and (it % 50 == 0 or it == config.iters):
                log.info("iter %d/%d mse=%.5f psnr=%.2f", it, config.iters, report.l_mse, measured)
            if config.checkpoint_path and config.checkpoint_every and it % config.checkpoint_every == 0:
                save_model(config.checkpoint_path, gen)
    finally:
        if log_file:
            log_file.close()
    gen.eval()
    if config.checkpoint_path:
        save_model(config.checkpoint_path, gen)
    return result


def smoothed(values: List[float], window: int) -> List[float]:
    """Trailing moving average (shorter windows at the start)."""
    out, acc = [], 0.0
    for i, v in enumerate(values):
        acc += v
        if i >= window:
            acc -= values[i - window]
        out.append(acc / min(i + 1, window))
    return out
