"""Reusable blocks: residual block, upsample block, channel attention, dual residual block."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigurationError, ShapeError
from .nn import Conv2d, Module

ALLOWED_KERNELS = (3, 5, 7, 11)


@dataclass(frozen=True)
class RCABConfig:
    channels: int
    reduction: int = 16

    def __post_init__(self):
        if self.reduction < 1 or self.channels % self.reduction:
            raise ConfigurationError(
                f"channels ({self.channels}) must be divisible by reduction ({self.reduction})")


@dataclass(frozen=True)
class DuRBConfig:
    channels: int
    kernel_large: int
    kernel_small: int

    def __post_init__(self):
        for k in (self.kernel_large, self.kernel_small):
            if k not in ALLOWED_KERNELS:
                raise ConfigurationError(f"DuRB kernel {k} not in {ALLOWED_KERNELS}")
        if self.kernel_large < self.kernel_small:
            raise ConfigurationError(
                f"large kernel {self.kernel_large} smaller than small kernel {self.kernel_small}")


def _check_channels(x: Tensor, channels: int, block: str) -> None:
    if x.ndim != 4 or x.shape[1] != channels:
        raise ShapeError(f"{block} expects {channels} channels, got input shape {x.shape}")


class ResBlock(Module):
    """conv -> relu -> conv plus identity shortcut, no normalisation."""

    def __init__(self, channels: int, kernel_size: int = 3, *, rng, dtype=np.float32):
        self.channels = channels
        self.conv1 = Conv2d(channels, channels, kernel_size, rng=rng, dtype=dtype)
        self.conv2 = Conv2d(channels, channels, kernel_size, rng=rng, dtype=dtype)

    def branch(self, x: Tensor) -> Tensor:
        return self.conv2(ad.relu(self.conv1(x)))

    def forward(self, x: Tensor) -> Tensor:
        _check_channels(x, self.channels, "res_block")
        return self.branch(x) + x


class UpsampleBlock(Module):
    """conv (in -> out*r^2) -> pixel shuffle -> relu."""

    def __init__(self, in_channels: int, out_channels: int | None = None, r: int = 2,
                 kernel_size: int = 3, *, rng, dtype=np.float32):
        self.in_channels = in_channels
        self.r = r
        out_channels = in_channels if out_channels is None else out_channels
        self.conv = Conv2d(in_channels, out_channels * r * r, kernel_size, rng=rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        _check_channels(x, self.in_channels, "upsample_block")
        return ad.relu(ad.pixel_shuffle(self.conv(x), self.r))


class RCAB(Module):
    """Channel attention: global pool -> 1x1 squeeze -> relu -> 1x1 excite -> sigmoid gate."""

    def __init__(self, cfg: RCABConfig, *, rng, dtype=np.float32):
        self.cfg = cfg
        hidden = cfg.channels // cfg.reduction
        self.squeeze = Conv2d(cfg.channels, hidden, 1, rng=rng, dtype=dtype)
        self.excite = Conv2d(hidden, cfg.channels, 1, rng=rng, dtype=dtype)

    def attention(self, x: Tensor) -> Tensor:
        _check_channels(x, self.cfg.channels, "rcab")
        return ad.sigmoid(self.excite(ad.relu(self.squeeze(ad.global_avg_pool(x)))))

    def forward(self, x: Tensor) -> Tensor:
        return ad.channel_scale(x, self.attention(x))


class DuRB(Module):
    """Dual residual block threading a feature stream and a residual stream.

        x_c      = C(x) + x                    C: conv3 -> relu -> conv3
        res_next = relu(C_m(x_c)) + res_in      C_m: kernel_large
        x_next   = relu(C_n(res_next)) + x      C_n: kernel_small
    """

    def __init__(self, cfg: DuRBConfig, *, rng, dtype=np.float32):
        self.cfg = cfg
        c = cfg.channels
        self.conv1 = Conv2d(c, c, 3, rng=rng, dtype=dtype)
        self.conv2 = Conv2d(c, c, 3, rng=rng, dtype=dtype)
        self.conv_m = Conv2d(c, c, cfg.kernel_large, rng=rng, dtype=dtype)
        self.conv_n = Conv2d(c, c, cfg.kernel_small, rng=rng, dtype=dtype)

    def forward(self, x: Tensor, res: Tensor) -> tuple[Tensor, Tensor]:
        _check_channels(x, self.cfg.channels, "durb")
        if x.shape != res.shape:
            raise ShapeError(f"durb: feature {x.shape} and residual {res.shape} differ")
        xc = self.conv2(ad.relu(self.conv1(x))) + x
        res_next = ad.relu(self.conv_m(xc)) + res
        x_next = ad.relu(self.conv_n(res_next)) + x
        return x_next, res_next
