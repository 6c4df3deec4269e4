"""PSNR / SSIM on the BT.601 luma plane, plus RGB channel histograms."""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ImageIOError, ShapeError
from .imageio import list_images, read_image

PSNR_CAP = 100.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5


def rgb_to_y(img: np.ndarray) -> np.ndarray:
    """Full-range BT.601 luma of an HxWx3 image, as float64."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ShapeError(f"expected HxWx3 image, got {img.shape}")
    return 0.299 * img[..., 0] + 0.587 * img[..., 1] + 0.114 * img[..., 2]


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 255.0) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"psnr: shapes {a.shape} and {b.shape} differ")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0:
        return PSNR_CAP
    return min(10.0 * math.log10(peak * peak / mse), PSNR_CAP)


def _gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    ax = np.arange(size) - (size - 1) / 2
    g = np.exp(-ax ** 2 / (2 * sigma * sigma))
    return g / g.sum()


def _filter_valid(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    n = g.size
    rows = sliding_window_view(x, n, axis=1) @ g
    return sliding_window_view(rows, n, axis=0) @ g


def ssim(a: np.ndarray, b: np.ndarray, peak: float = 255.0) -> float:
    """Mean SSIM over all fully-contained 11x11 Gaussian (sigma 1.5) windows."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"ssim: shapes {a.shape} and {b.shape} differ")
    if a.ndim != 2 or min(a.shape) < SSIM_WINDOW:
        raise ShapeError(f"ssim needs a 2-D plane of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {a.shape}")
    c1 = (0.01 * peak) ** 2
    c2 = (0.03 * peak) ** 2
    g = _gaussian_window()
    mu_a, mu_b = _filter_valid(a, g), _filter_valid(b, g)
    var_a = _filter_valid(a * a, g) - mu_a ** 2
    var_b = _filter_valid(b * b, g) - mu_b ** 2
    cov = _filter_valid(a * b, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def channel_histograms(images) -> np.ndarray:
    """(3, 256) counts of each intensity per RGB channel over all pixels of all images."""
    hist = np.zeros((3, 256), dtype=np.int64)
    for img in images:
        img = np.asarray(img)
        if img.dtype != np.uint8 or img.ndim != 3 or img.shape[2] != 3:
            raise ShapeError(f"expected HxWx3 uint8 image, got {img.dtype} {img.shape}")
        for c in range(3):
            hist[c] += np.bincount(img[..., c].ravel(), minlength=256)
    return hist


@dataclass
class MetricReport:
    rows: list[tuple[str, float, float]] = field(default_factory=list)

    def add(self, name: str, psnr_db: float, ssim_value: float) -> None:
        self.rows.append((name, psnr_db, ssim_value))

    @property
    def psnr_db(self) -> float:
        return float(np.mean([r[1] for r in self.rows])) if self.rows else float("nan")

    @property
    def ssim(self) -> float:
        return float(np.mean([r[2] for r in self.rows])) if self.rows else float("nan")

    def to_text(self) -> str:
        lines = ["image\tpsnr_db\tssim"]
        lines += [f"{name}\t{p:.4f}\t{s:.6f}" for name, p, s in self.rows]
        lines.append(f"mean\t{self.psnr_db:.4f}\t{self.ssim:.6f}")
        return "\n".join(lines) + "\n"


def evaluate_pair(sr: np.ndarray, hr: np.ndarray) -> tuple[float, float]:
    if sr.shape != hr.shape:
        raise ShapeError(f"SR {sr.shape} and HR {hr.shape} differ")
    ya, yb = rgb_to_y(sr), rgb_to_y(hr)
    return psnr(ya, yb), ssim(ya, yb)


def evaluate_dirs(sr_dir: str | os.PathLike, hr_dir: str | os.PathLike) -> MetricReport:
    """Pair images by file stem and score each SR image against its HR reference."""
    hr_by_stem = {p.stem: p for p in list_images(hr_dir)}
    report = MetricReport()
    for sr_path in list_images(sr_dir):
        hr_path = hr_by_stem.get(sr_path.stem)
        if hr_path is None:
            raise ImageIOError(f"{sr_path}: no HR image named {sr_path.stem}.* in {hr_dir}")
        report.add(sr_path.stem, *evaluate_pair(read_image(sr_path), read_image(hr_path)))
    if not report.rows:
        raise ImageIOError(f"{sr_dir}: no images to evaluate")
    return report


def format_histograms(hist: np.ndarray) -> str:
    return "\n".join(",".join(str(int(v)) for v in row) for row in hist) + "\n"
