"""SRGAN-style generator with an actor-critic head, and the discriminator."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Tuple, Union

import numpy as np

from . import tensor as T
from .checkpoint import load_checkpoint, save_checkpoint
from .layers import BatchNorm2d, Conv2d, LeakyReLU, Linear, Module, PReLU, global_avg_pool, pixel_shuffle
from .tensor import Tensor

LOG_STD_MIN, LOG_STD_MAX = -5.0, 2.0
HEAD_GAIN = 0.01


@dataclass
class PolicyOutput:
    """Per-item PSNR-prediction policy and value baseline."""

    psnr_pred_mean: Tensor  # (N,) dB
    log_std: Tensor  # scalar, clamped
    value: Tensor  # (N,)


class ResidualBlock(Module):
    def __init__(self, width: int, rng: np.random.Generator):
        self.conv1 = Conv2d(width, width, 3, rng)
        self.bn1 = BatchNorm2d(width)
        self.act = PReLU(width)
        self.conv2 = Conv2d(width, width, 3, rng)
        self.bn2 = BatchNorm2d(width)

    def forward(self, x: Tensor) -> Tensor:
        y = self.act(self.bn1(self.conv1(x)))
        return x + self.bn2(self.conv2(y))


class UpsampleStage(Module):
    """conv -> pixel_shuffle(2) -> PReLU: doubles both spatial dims."""

    def __init__(self, width: int, rng: np.random.Generator):
        self.conv = Conv2d(width, width * 4, 3, rng)
        self.act = PReLU(width)

    def forward(self, x: Tensor) -> Tensor:
        return self.act(pixel_shuffle(self.conv(x), 2))


class Generator(Module):
    """Encoder (ResNet trunk + policy/value head) followed by a subpixel decoder.

    ``r`` must be a power of two; the decoder uses ``log2(r)`` x2 stages.
    """

    def __init__(self, rng: np.random.Generator, r: int = 4, width: int = 64, n_blocks: int = 5,
                 channels: int = 3):
        if r < 2 or r & (r - 1):
            raise ValueError(f"upscale factor must be a power of two >= 2, got {r}")
        self.r = r
        self.width = width
        self.n_blocks = n_blocks
        self.channels = channels
        self.head = Conv2d(channels, width, 9, rng)
        self.head_act = PReLU(width)
        self.blocks = [ResidualBlock(width, rng) for _ in range(n_blocks)]
        self.tail = Conv2d(width, width, 3, rng)
        self.policy_fc = Linear(width, 2, rng)
        # small-gain head: early policy-gradient spikes would otherwise swamp
        # the trunk's Adam second-moment estimates
        self.policy_fc.weight.data *= HEAD_GAIN
        self.policy_fc.bias.data[:] = 0.0
        self.log_std = Tensor(np.zeros(()), requires_grad=True)
        self.stages = [UpsampleStage(width, rng) for _ in range(int(math.log2(r)))]
        self.out = Conv2d(width, channels, 9, rng)
        for name, t in self.named_tensors():
            t.name = name

    def config(self) -> Dict[str, object]:
        return {"kind": "generator", "r": self.r, "width": self.width,
                "n_blocks": self.n_blocks, "channels": self.channels}

    def encoder_forward(self, lr: Tensor) -> Tuple[Tensor, PolicyOutput]:
        lr = T.as_tensor(lr)
        if lr.ndim != 4 or lr.shape[1] != self.channels:
            raise ValueError(f"generator expects (N, {self.channels}, h, w) input, got {lr.shape}")
        first = self.head_act(self.head(lr))
        x = first
        for block in self.blocks:
            x = block(x)
        features = self.tail(x) + first
        head = self.policy_fc(global_avg_pool(features))
        policy = PolicyOutput(
            psnr_pred_mean=head[:, 0],
            log_std=T.clip(self.log_std, LOG_STD_MIN, LOG_STD_MAX),
            value=head[:, 1],
        )
        return features, policy

    def decoder_forward(self, features: Tensor) -> Tensor:
        x = features
        for stage in self.stages:
            x = stage(x)
        return T.sigmoid(self.out(x))

    def forward(self, lr: Tensor) -> Tuple[Tensor, PolicyOutput]:
        features, policy = self.encoder_forward(lr)
        return self.decoder_forward(features), policy


class Discriminator(Module):
    """Six 3x3 convs (stride-2 in place of pooling), LeakyReLU 0.2, FC -> sigmoid."""

    def __init__(self, rng: np.random.Generator, patch: int = 64, width: int = 64, channels: int = 3,
                 alpha: float = 0.2):
        self.patch = patch
        self.width = width
        self.channels = channels
        widths = [channels, width, width, 2 * width, 2 * width, 4 * width, 4 * width]
        strides = [1, 2, 1, 2, 1, 2]
        self.convs = [Conv2d(widths[i], widths[i + 1], 3, rng, stride=strides[i]) for i in range(6)]
        self.act = LeakyReLU(alpha)
        side = patch
        for s in strides:
            side = (side + 2 - 3) // s + 1
        self.fc = Linear(4 * width * side * side, 1, rng)
        for name, t in self.named_tensors():
            t.name = name

    def config(self) -> Dict[str, object]:
        return {"kind": "discriminator", "patch": self.patch, "width": self.width, "channels": self.channels}

    def forward(self, img: Tensor) -> Tensor:
        img = T.as_tensor(img)
        expected = (self.channels, self.patch, self.patch)
        if img.ndim != 4 or tuple(img.shape[1:]) != expected:
            raise ValueError(f"discriminator expects (N, {expected[0]}, {expected[1]}, {expected[2]}) "
                             f"input, got {img.shape}")
        x = img
        for conv in self.convs:
            x = self.act(conv(x))
        logits = self.fc(x.reshape(x.shape[0], -1))
        return T.sigmoid(logits).reshape(x.shape[0])


def save_model(path: Union[str, Path], model: Module) -> None:
    save_checkpoint(path, model.state_dict(), model.config())


def load_generator(path: Union[str, Path]) -> Generator:
    config, state = load_checkpoint(path)
    if config.get("kind") != "generator":
        raise ValueError(f"{path}: checkpoint does not hold a generator (kind={config.get('kind')!r})")
    gen = Generator(np.random.default_rng(0), r=int(config["r"]), width=int(config["width"]),
                    n_blocks=int(config["n_blocks"]), channels=int(config["channels"]))
    gen.load_state_dict(state)
    gen.eval()
    return gen


def images_to_batch(images: List[np.ndarray]) -> np.ndarray:
    """Stack HxWxC images into an NCHW array of the default dtype."""
    arr = np.stack([np.asarray(im) if np.ndim(im) == 3 else np.asarray(im)[:, :, None] for im in images])
    return np.ascontiguousarray(arr.transpose(0, 3, 1, 2), dtype=T.default_dtype())


def batch_to_images(batch: np.ndarray) -> List[np.ndarray]:
    return [np.ascontiguousarray(x.transpose(1, 2, 0)) for x in np.asarray(batch)]


def super_resolve(gen: Generator, lr_image: np.ndarray) -> np.ndarray:
    """Run frozen-parameter inference on one HxWxC image."""
    with T.no_grad():
        hr, _ = gen(Tensor(images_to_batch([lr_image])))
    return batch_to_images(hr.data)[0]
