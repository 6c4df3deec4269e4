"""DuRCAN: the low-to-high restoration network.

head conv -> RCAB_bg -> DuRB stack -> RCAB_ed -> conv (+ last residual stream)
-> log2(scale) x2 upsample blocks -> tail conv -> tanh.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .blocks import RCAB, DuRB, DuRBConfig, RCABConfig, UpsampleBlock
from .errors import ConfigurationError, ShapeError
from .nn import Conv2d, Module

PRESETS: dict[str, list[tuple[int, int]]] = {
    "durcan-6_s": [(3, 3), (5, 3), (7, 5), (7, 5), (7, 3), (5, 3)],
    "durcan-6": [(5, 3), (7, 5), (11, 7), (11, 7), (11, 5), (7, 5)],
    "durcan-12": [(5, 3), (5, 3), (7, 3), (7, 5), (11, 5), (11, 7),
                  (11, 7), (11, 5), (7, 5), (7, 3), (5, 3), (5, 3)],
    "durcan-18": [(5, 3)] * 3 + [(7, 5)] * 3 + [(11, 7)] * 6 + [(11, 5)] * 3 + [(7, 5)] * 3,
}

# parameter totals listed for the presets at 64 channels
REFERENCE_COUNTS = {"durcan-6_s": 1_978_000, "durcan-6": 3_518_000,
                    "durcan-12": 5_453_000, "durcan-18": 9_878_000}


@dataclass
class DuRCANConfig:
    depth: int
    kernel_schedule: list[tuple[int, int]] = field(default_factory=list)
    channels: int = 64
    scale: int = 4
    reduction: int = 16

    def __post_init__(self):
        self.kernel_schedule = [tuple(p) for p in self.kernel_schedule]
        if len(self.kernel_schedule) != self.depth:
            raise ConfigurationError(
                f"kernel schedule has {len(self.kernel_schedule)} entries for depth {self.depth}")
        if self.scale < 1 or self.scale & (self.scale - 1):
            raise ConfigurationError(f"scale must be a power of two, got {self.scale}")
        for m, n in self.kernel_schedule:
            DuRBConfig(self.channels, m, n)
        RCABConfig(self.channels, self.reduction)

    @classmethod
    def preset(cls, name: str, channels: int = 64, scale: int = 4, reduction: int | None = None) -> "DuRCANConfig":
        if name not in PRESETS:
            raise ConfigurationError(f"unknown architecture {name!r}; choose from {sorted(PRESETS)}")
        if reduction is None:
            reduction = auto_reduction(channels)
        schedule = PRESETS[name]
        return cls(depth=len(schedule), kernel_schedule=list(schedule), channels=channels,
                   scale=scale, reduction=reduction)


def auto_reduction(channels: int) -> int:
    """16 when it divides the width; narrower test widths keep at least two hidden units."""
    for r in (16, 8, 4, 2):
        if channels % r == 0 and channels // r >= 2:
            return r
    return 1


class DuRCAN(Module):
    def __init__(self, cfg: DuRCANConfig, *, seed: int = 0, dtype=np.float32):
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        c = cfg.channels
        self.head = Conv2d(3, c, 3, rng=rng, dtype=dtype)
        self.rcab_bg = RCAB(RCABConfig(c, cfg.reduction), rng=rng, dtype=dtype)
        self.durbs = [DuRB(DuRBConfig(c, m, n), rng=rng, dtype=dtype) for m, n in cfg.kernel_schedule]
        self.rcab_ed = RCAB(RCABConfig(c, cfg.reduction), rng=rng, dtype=dtype)
        self.conv_ed = Conv2d(c, c, 3, rng=rng, dtype=dtype)
        self.upsample = [UpsampleBlock(c, c, 2, rng=rng, dtype=dtype)
                         for _ in range(int(math.log2(cfg.scale)))]
        self.tail = Conv2d(c, 3, 3, rng=rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        """Map a (B,3,h,w) image in [-1,1] to (B,3,scale*h,scale*w) in (-1,1)."""
        if x.ndim != 4 or x.shape[1] != 3:
            raise ShapeError(f"DuRCAN expects (B,3,h,w) input, got {x.shape}")
        f_ca1 = self.rcab_bg(self.head(x))
        feat, res = f_ca1, f_ca1
        for block in self.durbs:
            feat, res = block(feat, res)
        up = self.conv_ed(self.rcab_ed(feat)) + res
        for block in self.upsample:
            up = block(up)
        return ad.tanh(self.tail(up))

    def super_resolve(self, lr: Tensor) -> Tensor:
        """[0,1] in, [0,1] out; differentiable."""
        return (self.forward(lr * 2.0 - 1.0) + 1.0) * 0.5


def build_durcan(cfg: DuRCANConfig | str, *, seed: int = 0, dtype=np.float32, channels: int = 64) -> DuRCAN:
    if isinstance(cfg, str):
        cfg = DuRCANConfig.preset(cfg, channels=channels)
    return DuRCAN(cfg, seed=seed, dtype=dtype)


def super_resolve_image(net: DuRCAN, image: np.ndarray) -> np.ndarray:
    """Run inference on one HxWx3 uint8 image and return a uint8 image."""
    x = image.astype(net.head.weight.dtype).transpose(2, 0, 1)[None] / 255.0
    with ad.no_grad():
        y = net.super_resolve(Tensor(x)).data[0]
    return np.floor(np.clip(y, 0.0, 1.0).transpose(1, 2, 0) * 255.0 + 0.5).astype(np.uint8)
