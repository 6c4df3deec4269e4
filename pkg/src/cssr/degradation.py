"""Synthetic camera-screen degradation used to manufacture paired training data.

    X_LR = ((f(Y * k1) down1 + n1) * k2) down2 + n2

k1/k2 are isotropic Gaussian blurs, f a per-channel gain/gamma/bias distortion,
the downsamplers are box averages and n1/n2 additive Gaussian noise.  Values are
handled on the 0..255 scale internally; sigmas and biases are in [0, 1] units.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.ndimage import correlate

from .errors import ConfigurationError, ImageIOError, ShapeError
from .imageio import list_images, read_image, write_image


@dataclass(frozen=True)
class DegradationParams:
    screen_blur_sigma: float = 0.8
    screen_scale: int = 1
    screen_noise_sigma: float = 0.01
    color_gain: tuple[float, float, float] = (1.08, 1.0, 0.9)
    color_bias: tuple[float, float, float] = (0.03, 0.0, -0.02)
    gamma: float = 0.9
    camera_blur_sigma: float = 0.6
    camera_scale: int = 4
    camera_noise_sigma: float = 0.01
    seed: int = 0

    def __post_init__(self):
        for name in ("screen_blur_sigma", "screen_noise_sigma", "camera_blur_sigma", "camera_noise_sigma"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be >= 0")
        if len(self.color_gain) != 3 or len(self.color_bias) != 3:
            raise ConfigurationError("color_gain and color_bias need three entries")
        if any(g <= 0 for g in self.color_gain):
            raise ConfigurationError("color gains must be positive")
        if self.gamma <= 0:
            raise ConfigurationError("gamma must be positive")
        if self.screen_scale < 1 or self.camera_scale < 1:
            raise ConfigurationError("scales must be >= 1")

    @property
    def total_scale(self) -> int:
        return self.screen_scale * self.camera_scale

    @classmethod
    def identity(cls, scale: int = 4, seed: int = 0) -> "DegradationParams":
        return cls(0.0, 1, 0.0, (1.0, 1.0, 1.0), (0.0, 0.0, 0.0), 1.0, 0.0, scale, 0.0, seed)


def gaussian_kernel(sigma: float, radius: int | None = None) -> np.ndarray:
    """Normalised isotropic Gaussian; sigma 0 gives the delta kernel."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if radius is None:
        radius = int(math.ceil(3 * sigma))
    if sigma == 0:
        k = np.zeros((2 * radius + 1, 2 * radius + 1))
        k[radius, radius] = 1.0
        return k
    ax = np.arange(-radius, radius + 1, dtype=np.float64)
    g = np.exp(-(ax[:, None] ** 2 + ax[None, :] ** 2) / (2 * sigma * sigma))
    return g / g.sum()


def blur(img: np.ndarray, sigma: float) -> np.ndarray:
    if sigma == 0:
        return img
    k = gaussian_kernel(sigma)
    return np.stack([correlate(img[..., c], k, mode="reflect") for c in range(img.shape[2])], axis=-1)


def box_downsample(img: np.ndarray, factor: int) -> np.ndarray:
    if factor == 1:
        return img
    h, w, c = img.shape
    if h % factor or w % factor:
        raise ShapeError(f"{h}x{w} not divisible by {factor}")
    return img.reshape(h // factor, factor, w // factor, factor, c).mean(axis=(1, 3))


def distort(img: np.ndarray, p: DegradationParams) -> np.ndarray:
    """Per-channel gain * x**gamma + bias on the [0,1] scale, clamped."""
    gain = np.asarray(p.color_gain)
    bias = np.asarray(p.color_bias) * 255.0
    if p.gamma == 1:
        out = img * gain + bias
    else:
        out = 255.0 * gain * (img / 255.0) ** p.gamma + bias
    return np.clip(out, 0.0, 255.0)


def quantize(img: np.ndarray) -> np.ndarray:
    return np.floor(np.clip(img, 0.0, 255.0) + 0.5).astype(np.uint8)


def degrade_float(y: np.ndarray, p: DegradationParams, rng: np.random.Generator | None = None) -> np.ndarray:
    """Apply the degradation chain to a float HxWx3 image on the 0..255 scale."""
    h, w, _ = y.shape
    if h % p.total_scale or w % p.total_scale:
        raise ShapeError(f"image {h}x{w} not divisible by total scale {p.total_scale}")
    rng = np.random.default_rng(p.seed) if rng is None else rng
    x = blur(y, p.screen_blur_sigma)
    x = distort(x, p)
    x = box_downsample(x, p.screen_scale)
    x = x + rng.normal(0.0, 1.0, size=x.shape) * (p.screen_noise_sigma * 255.0)
    x = blur(x, p.camera_blur_sigma)
    x = box_downsample(x, p.camera_scale)
    x = x + rng.normal(0.0, 1.0, size=x.shape) * (p.camera_noise_sigma * 255.0)
    return np.clip(x, 0.0, 255.0)


def degrade(y: np.ndarray, p: DegradationParams) -> np.ndarray:
    """uint8 HR image -> uint8 LR image at 1/(screen_scale * camera_scale)."""
    return quantize(degrade_float(np.asarray(y, dtype=np.float64), p))


def synthetic_images(n: int, size: int = 96, seed: int = 0) -> list[np.ndarray]:
    """Procedural HR test images: smooth colour gradients, shapes, stripes and texture."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size] / size
    images = []
    for _ in range(n):
        c0, c1 = rng.uniform(0.1, 0.9, 3), rng.uniform(0.1, 0.9, 3)
        t = np.clip(xx * rng.uniform(0.3, 1) + yy * rng.uniform(0.3, 1), 0, 2) / 2
        img = c0 + (c1 - c0) * t[..., None]
        for _ in range(rng.integers(3, 7)):
            color = rng.uniform(0, 1, 3)
            cx, cy, r = rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9), rng.uniform(0.06, 0.25)
            if rng.random() < 0.5:
                mask = (xx - cx) ** 2 + (yy - cy) ** 2 < r * r
            else:
                mask = (np.abs(xx - cx) < r) & (np.abs(yy - cy) < r * rng.uniform(0.3, 1.0))
            img[mask] = color
        freq, angle = rng.uniform(6, 16), rng.uniform(0, math.pi)
        stripes = 0.5 + 0.5 * np.sin(2 * math.pi * freq * (xx * math.cos(angle) + yy * math.sin(angle)))
        band = (yy > rng.uniform(0.0, 0.5)) & (yy < rng.uniform(0.6, 1.0)) & (xx < rng.uniform(0.2, 0.6))
        img[band] = img[band] * 0.5 + 0.5 * stripes[band][:, None] * rng.uniform(0.3, 1, 3)
        img = img + rng.normal(0, 0.02, img.shape)
        images.append(quantize(img * 255.0))
    return images


@dataclass
class PairedDataset:
    """HR/LR image pairs resolved from a manifest."""

    pairs: list[tuple[Path, Path]] = field(default_factory=list)

    def load(self) -> list[tuple[np.ndarray, np.ndarray]]:
        return [(read_image(h), read_image(l)) for h, l in self.pairs]


def write_manifest(path: str | os.PathLike, pairs: list[tuple[Path, Path]]) -> None:
    base = Path(path).parent
    with open(path, "w") as fh:
        for hr, lr in pairs:
            fh.write(f"{os.path.relpath(hr, base)}\t{os.path.relpath(lr, base)}\n")


def read_manifest(path: str | os.PathLike) -> PairedDataset:
    """One ``hr_path<TAB>lr_path`` line per pair; relative paths resolve against the manifest."""
    path = Path(path)
    if not path.is_file():
        raise ImageIOError(f"{path}: manifest not found")
    pairs = []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise ImageIOError(f"{path}:{lineno}: expected 'hr_path<TAB>lr_path'")
        pairs.append(tuple((path.parent / p).resolve() for p in parts))
    return PairedDataset(pairs)


def make_dataset(hr_dir: str | os.PathLike, p: DegradationParams, n_pairs: int | None,
                 out_dir: str | os.PathLike, suffix: str = ".ppm") -> Path:
    """Degrade the first ``n_pairs`` HR images of ``hr_dir`` (image i uses seed+i).

    Writes ``hr/``, ``lr/`` and ``manifest.txt`` under ``out_dir`` and returns the
    manifest path.
    """
    candidates = list_images(hr_dir)
    images, bad = [], []
    for path in candidates:
        if n_pairs is not None and len(images) == n_pairs:
            break
        try:
            images.append((path, read_image(path)))
        except ImageIOError as exc:
            bad.append(f"{path} ({exc})")
    if n_pairs is not None and len(images) < n_pairs:
        detail = "; unreadable: " + ", ".join(bad) if bad else ""
        raise ImageIOError(f"{hr_dir}: found {len(images)} readable images, need {n_pairs}{detail}")
    out = Path(out_dir)
    (out / "hr").mkdir(parents=True, exist_ok=True)
    (out / "lr").mkdir(parents=True, exist_ok=True)
    pairs = []
    for i, (path, img) in enumerate(images):
        lr = degrade(img, replace(p, seed=p.seed + i))
        hr_path, lr_path = out / "hr" / (path.stem + suffix), out / "lr" / (path.stem + suffix)
        write_image(hr_path, img)
        write_image(lr_path, lr)
        pairs.append((hr_path, lr_path))
    manifest = out / "manifest.txt"
    write_manifest(manifest, pairs)
    return manifest
