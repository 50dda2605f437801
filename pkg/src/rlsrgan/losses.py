"""Training objectives: pixel/perceptual/adversarial terms and the
actor-critic PSNR-improvement loss."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np

from . import tensor as T
from .checkpoint import load_checkpoint
from .layers import Conv2d, Module
from .model import PolicyOutput
from .tensor import Tensor

GAN_WEIGHT = 1e-3
PERCEPTUAL_WEIGHT = 6e-3
VALUE_WEIGHT = 5e-3
PROB_EPS = 1e-7


def mse_loss(pred: Tensor, target) -> Tensor:
    pred, target = T.as_tensor(pred), T.as_tensor(target)
    if pred.shape != target.shape:
        raise ValueError(f"mse_loss: shape mismatch {pred.shape} vs {target.shape}")
    return T.square(pred - target).mean()


class FeatureExtractor(Module):
    """Frozen random conv stack used in place of pretrained VGG features.

    Three stride-2 3x3 convolutions (16, 32, 64 maps) with ReLU.
    """

    def __init__(self, seed: int = 0, channels: int = 3, widths: Sequence[int] = (16, 32, 64)):
        rng = np.random.default_rng(seed)
        chans = [channels, *widths]
        self.convs = [Conv2d(chans[i], chans[i + 1], 3, rng, stride=2) for i in range(len(widths))]
        for name, t in self.named_tensors():
            t.requires_grad = False
            t.name = name

    @classmethod
    def from_checkpoint(cls, path: Union[str, Path], channels: int = 3) -> "FeatureExtractor":
        """Build an extractor whose conv weights come from an external checkpoint."""
        config, state = load_checkpoint(path)
        widths = [int(w) for w in config.get("widths", "16,32,64").split(",")]
        net = cls(channels=channels, widths=widths)
        net.load_state_dict(state)
        return net

    def config(self):
        return {"kind": "features", "widths": ",".join(str(c.weight.shape[0]) for c in self.convs)}

    def forward(self, x: Tensor) -> Tensor:
        for conv in self.convs:
            x = T.relu(conv(x))
        return x


def perceptual_loss(pred: Tensor, target, feature_net: Callable[[Tensor], Tensor]) -> Tensor:
    """MSE between feature maps of ``target`` and ``pred``."""
    with T.no_grad():
        target_feats = feature_net(T.as_tensor(target))
    return mse_loss(feature_net(T.as_tensor(pred)), target_feats.detach())


def _clamp_prob(p: Tensor) -> Tensor:
    return T.clip(T.as_tensor(p), PROB_EPS, 1.0 - PROB_EPS)


def generator_gan_loss(d_fake) -> Tensor:
    """Non-saturating generator term: -mean log D(G(x))."""
    return -T.log(_clamp_prob(d_fake)).mean()


def gan_losses(d_real, d_fake) -> Tuple[Tensor, Tensor]:
    """Return ``(d_loss, g_loss)`` from discriminator probabilities."""
    real = _clamp_prob(d_real)
    fake = _clamp_prob(d_fake)
    d_loss = -(T.log(real).mean() + T.log(1.0 - fake).mean())
    return d_loss, generator_gan_loss(fake)


def srgan_total(l_mse, l_gan_g, l_vgg):
    return l_mse + GAN_WEIGHT * l_gan_g + PERCEPTUAL_WEIGHT * l_vgg


# -- actor-critic -------------------------------------------------------------

def sample_action(policy: PolicyOutput, rng: np.random.Generator) -> Tuple[np.ndarray, Tensor]:
    """Draw one PSNR prediction per item from N(mean, exp(log_std)^2).

    Returns the sampled values (plain array, off the tape) and their
    log-probabilities, differentiable w.r.t. mean and log_std.
    """
    mean = policy.psnr_pred_mean
    std = math.exp(float(policy.log_std.data))
    noise = rng.standard_normal(mean.shape)
    action = (mean.data + std * noise).astype(mean.data.dtype)
    log_prob = T.gaussian_log_density(Tensor(action, dtype=mean.data.dtype), mean, policy.log_std)
    return action, log_prob


def compute_reward(psnr_i: float, psnr_prev: float) -> int:
    """1 when PSNR strictly improved on the previous iteration, else 0."""
    return 1 if psnr_i > psnr_prev else 0


def discounted_returns(rewards: Sequence[float], gamma: float) -> List[float]:
    """Monte-Carlo returns within the window; nothing bootstrapped past its end."""
    if len(rewards) == 0:
        raise ValueError("discounted_returns needs at least one reward")
    if not 0.0 < gamma <= 1.0:
        raise ValueError(f"gamma must lie in (0, 1], got {gamma}")
    out = [0.0] * len(rewards)
    running = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        running = rewards[t] + gamma * running
        out[t] = running
    return out


@dataclass
class StepRecord:
    reward: int
    log_prob: Tensor
    value: Tensor
    measured_psnr: float


@dataclass
class RLWindow:
    capacity: int
    gamma: float = 0.9
    records: List[StepRecord] = field(default_factory=list)

    def __post_init__(self):
        if self.capacity < 1:
            raise ValueError(f"window capacity must be >= 1, got {self.capacity}")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in (0, 1], got {self.gamma}")

    def push(self, reward: int, log_prob: Tensor, value: Tensor, measured_psnr: float) -> None:
        if reward not in (0, 1):
            raise ValueError(f"reward must be 0 or 1, got {reward!r}")
        if self.full:
            raise RuntimeError(f"RL window already holds {self.capacity} records")
        self.records.append(StepRecord(int(reward), T.as_tensor(log_prob), T.as_tensor(value), float(measured_psnr)))

    @property
    def full(self) -> bool:
        return len(self.records) == self.capacity

    def clear(self) -> None:
        self.records.clear()

    def __len__(self) -> int:
        return len(self.records)


@dataclass
class RLTerms:
    l_pi: Tensor
    l_value: Tensor
    l_rl: Tensor
    returns: List[float]


def rl_terms(window: RLWindow) -> RLTerms:
    if not window.full:
        raise ValueError(f"rl_loss needs a full window ({len(window)}/{window.capacity} records)")
    returns = discounted_returns([r.reward for r in window.records], window.gamma)
    l_pi = None
    l_value = None
    for rec, ret in zip(window.records, returns):
        # advantage enters the policy term as a constant
        advantage = ret - float(rec.value.data)
        pi_t = rec.log_prob * advantage
        v_t = T.square(ret - rec.value)
        l_pi = pi_t if l_pi is None else l_pi + pi_t
        l_value = v_t if l_value is None else l_value + v_t
    l_value = l_value * VALUE_WEIGHT
    return RLTerms(l_pi=l_pi, l_value=l_value, l_rl=l_value - l_pi, returns=returns)


def rl_loss(window: RLWindow) -> Tensor:
    return rl_terms(window).l_rl


def is_window_boundary(iteration: int, k: int) -> bool:
    return iteration > 0 and iteration % k == 0


def proposed_loss(l_srgan, l_rl, iteration: int, k: int):
    """SRGAN loss, plus the RL loss on iterations that close a k-step window."""
    if is_window_boundary(iteration, k):
        if l_rl is None:
            raise ValueError(f"iteration {iteration} closes a {k}-step window but no RL loss was supplied")
        return l_srgan + l_rl
    if l_rl is not None:
        raise ValueError(f"RL loss supplied at iteration {iteration}, which is not a multiple of k={k}")
    return l_srgan


@dataclass
class LossReport:
    l_mse: float
    l_vgg: float
    l_gan_g: float
    l_gan_d: float
    l_pi: float = 0.0
    l_value: float = 0.0
    l_rl: float = 0.0
    l_total: float = 0.0
    window_applied: bool = False

    def as_dict(self):
        return asdict(self)
