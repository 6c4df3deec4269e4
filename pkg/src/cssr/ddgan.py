"""DD-GAN: high-to-low degradation generator and relativistic discriminator."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .blocks import ResBlock, UpsampleBlock
from .errors import ConfigurationError, ShapeError
from .nn import Conv2d, Linear, Module


@dataclass(frozen=True)
class GeneratorConfig:
    base_channels: int = 64
    contracting_groups: int = 3
    scale: int = 4
    channel_schedule: tuple[int, ...] | None = None

    def __post_init__(self):
        s, n = self.scale, self.contracting_groups
        if s < 1 or s & (s - 1):
            raise ConfigurationError(f"generator scale must be a power of two, got {s}")
        if n < 1 or n < math.log2(s):
            raise ConfigurationError(f"need at least log2({s}) contracting groups, got {n}")
        if self.channel_schedule is None:
            widths = tuple(self.base_channels * 2 ** min(i, 2) for i in range(n))
            object.__setattr__(self, "channel_schedule", widths)
        if len(self.channel_schedule) != n:
            raise ConfigurationError(
                f"channel schedule {self.channel_schedule} needs {n} entries")

    @property
    def upsample_blocks(self) -> int:
        return num_upsample_blocks(self.contracting_groups, self.scale)


def num_upsample_blocks(groups: int, scale: int) -> int:
    """Decoder depth: contracting groups minus log2 of the scale factor."""
    return groups - int(round(math.log2(scale)))


class _EncoderGroup(Module):
    def __init__(self, in_channels: int, width: int, *, rng, dtype):
        self.proj = Conv2d(in_channels, width, 3, rng=rng, dtype=dtype) if in_channels != width else None
        self.rb1 = ResBlock(width, rng=rng, dtype=dtype)
        self.rb2 = ResBlock(width, rng=rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        if self.proj is not None:
            x = self.proj(x)
        return ad.maxpool2(self.rb2(self.rb1(x)))


class Generator(Module):
    """Encoder-decoder mapping an HR image in [0,1] to a 1/scale LR image in [0,1].

    Every decoder stage and the tail concatenate the running features with the
    pooled encoder output of the same spatial size.
    """

    def __init__(self, cfg: GeneratorConfig, *, seed: int = 0, dtype=np.float32):
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        w = cfg.channel_schedule
        n = cfg.contracting_groups
        self.head = Conv2d(3, w[0], 3, rng=rng, dtype=dtype)
        self.groups = []
        prev = w[0]
        for width in w:
            self.groups.append(_EncoderGroup(prev, width, rng=rng, dtype=dtype))
            prev = width
        self.bottleneck = [ResBlock(w[-1], rng=rng, dtype=dtype) for _ in range(2)]
        stages = cfg.upsample_blocks
        self.decoder = []
        cur = w[-1]
        for k in range(stages):
            skip = w[n - 1 - k]
            out = w[0] if k == stages - 1 else w[n - 2 - k]
            self.decoder.append(UpsampleBlock(cur + skip, out, 2, rng=rng, dtype=dtype))
            cur = out
        self.tail = Conv2d(cur + w[n - 1 - stages], 3, 3, rng=rng, dtype=dtype)

    def forward(self, y: Tensor) -> Tensor:
        n = self.cfg.contracting_groups
        if y.ndim != 4 or y.shape[1] != 3:
            raise ShapeError(f"generator expects (B,3,H,W), got {y.shape}")
        if y.shape[2] % 2 ** n or y.shape[3] % 2 ** n:
            raise ShapeError(f"generator input {y.shape[2:]} not divisible by {2 ** n}")
        x = self.head(y)
        pooled = []
        for group in self.groups:
            x = group(x)
            pooled.append(x)
        for rb in self.bottleneck:
            x = rb(x)
        for k, stage in enumerate(self.decoder):
            x = stage(ad.concat_channels([x, pooled[n - 1 - k]]))
        x = ad.concat_channels([x, pooled[n - 1 - len(self.decoder)]])
        return ad.sigmoid(self.tail(x))


@dataclass(frozen=True)
class DiscriminatorConfig:
    base_channels: int = 64
    input_size: int = 48
    max_channels: int = 512
    hidden: int = 1024
    final_size: int = 6

    def __post_init__(self):
        ratio = self.input_size / self.final_size
        if ratio < 1 or ratio != int(ratio) or int(ratio) & (int(ratio) - 1):
            raise ConfigurationError(
                f"discriminator input {self.input_size} must be {self.final_size} times a power of two")

    @property
    def levels(self) -> int:
        return int(math.log2(self.input_size // self.final_size))


class Discriminator(Module):
    """SRGAN-style ladder: strided 3x3 convs halve the size down to 6x6, then two dense layers."""

    def __init__(self, cfg: DiscriminatorConfig, *, seed: int = 0, dtype=np.float32):
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        c = cfg.base_channels
        self.head = Conv2d(3, c, 3, rng=rng, dtype=dtype)
        self.body = []
        for _ in range(cfg.levels):
            wider = min(2 * c, cfg.max_channels)
            self.body.append(Conv2d(c, c, 3, stride=2, rng=rng, dtype=dtype))
            self.body.append(Conv2d(c, wider, 3, rng=rng, dtype=dtype))
            c = wider
        self.fc1 = Linear(c * cfg.final_size ** 2, cfg.hidden, rng=rng, dtype=dtype)
        self.fc2 = Linear(cfg.hidden, 1, rng=rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        """Raw logit per batch element, shape (B,)."""
        size = self.cfg.input_size
        if x.ndim != 4 or x.shape[1] != 3 or x.shape[2:] != (size, size):
            raise ShapeError(f"discriminator expects (B,3,{size},{size}), got {x.shape}")
        h = ad.leaky_relu(self.head(x))
        for conv in self.body:
            h = ad.leaky_relu(conv(h))
        h = ad.leaky_relu(self.fc1(ad.flatten(h)))
        return ad.reshape(self.fc2(h), (x.shape[0],))


def build_generator(cfg: GeneratorConfig | None = None, *, seed: int = 0, dtype=np.float32) -> Generator:
    return Generator(cfg or GeneratorConfig(), seed=seed, dtype=dtype)


def build_discriminator(cfg: DiscriminatorConfig | None = None, *, seed: int = 0, dtype=np.float32) -> Discriminator:
    return Discriminator(cfg or DiscriminatorConfig(), seed=seed, dtype=dtype)


def relativistic_score(target_logits: Tensor, opposite_logits: Tensor) -> Tensor:
    """sigmoid(target_i - mean(opposite)): how much more realistic each target
    sample looks than the average of the opposite class in the mini-batch."""
    if opposite_logits.size == 0:
        raise ValueError("relativistic score needs a non-empty opposite batch")
    return ad.sigmoid(target_logits - ad.mean(opposite_logits))


def generate_lr_image(gen: Generator, image: np.ndarray) -> np.ndarray:
    """HxWx3 uint8 HR image -> uint8 LR image at 1/scale."""
    x = image.astype(gen.head.weight.dtype).transpose(2, 0, 1)[None] / 255.0
    with ad.no_grad():
        y = gen(Tensor(x)).data[0]
    return np.floor(np.clip(y, 0.0, 1.0).transpose(1, 2, 0) * 255.0 + 0.5).astype(np.uint8)
