"""Align captured shots to the HR reference: DLT + RANSAC homographies,
bilinear inverse warping, multi-shot averaging and bicubic downscaling."""

from __future__ import annotations

import os
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import EstimationError, ImageIOError, ShapeError


def read_correspondences(path: str | os.PathLike) -> tuple[np.ndarray, np.ndarray]:
    """Parse ``x1 y1 x2 y2`` lines (shot point, then reference point)."""
    src, dst = [], []
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ImageIOError(f"{path}: {exc.strerror}") from None
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            x1, y1, x2, y2 = (float(v) for v in line.split())
        except ValueError:
            raise ImageIOError(f"{path}:{lineno}: expected four numbers 'x1 y1 x2 y2'") from None
        src.append((x1, y1))
        dst.append((x2, y2))
    return np.array(src, dtype=np.float64).reshape(-1, 2), np.array(dst, dtype=np.float64).reshape(-1, 2)


def write_correspondences(path: str | os.PathLike, src: np.ndarray, dst: np.ndarray) -> None:
    with open(path, "w") as fh:
        for (x1, y1), (x2, y2) in zip(src, dst):
            fh.write(f"{x1:.10g} {y1:.10g} {x2:.10g} {y2:.10g}\n")


def apply_homography(H: np.ndarray, pts: np.ndarray) -> np.ndarray:
    pts = np.asarray(pts, dtype=np.float64)
    hom = np.c_[pts, np.ones(len(pts))] @ H.T
    return hom[:, :2] / hom[:, 2:3]


def transfer_error(H: np.ndarray, src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    return np.linalg.norm(apply_homography(H, src) - dst, axis=1)


def _similarity_normalizer(pts: np.ndarray) -> np.ndarray:
    centroid = pts.mean(axis=0)
    dist = np.linalg.norm(pts - centroid, axis=1).mean()
    s = np.sqrt(2.0) / dist if dist > 0 else 1.0
    return np.array([[s, 0, -s * centroid[0]], [0, s, -s * centroid[1]], [0, 0, 1.0]])


def _has_collinear_triple(pts: np.ndarray, rel_tol: float = 1e-9) -> bool:
    scale = max(np.ptp(pts[:, 0]), np.ptp(pts[:, 1]), 1e-12) ** 2
    n = len(pts)
    for i in range(n):
        for j in range(i + 1, n):
            for k in range(j + 1, n):
                a, b, c = pts[i], pts[j], pts[k]
                area = abs((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))
                if area <= rel_tol * scale:
                    return True
    return False


def estimate_homography_dlt(src: np.ndarray, dst: np.ndarray, normalize: bool = True) -> np.ndarray:
    """Homography mapping ``src`` to ``dst`` with H[2,2] fixed to 1.

    Four points give an exact 8x8 solve; more points are fitted in the
    least-squares sense through the normal equations.
    """
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    n = len(src)
    if n < 4 or len(dst) != n:
        raise EstimationError(f"need at least 4 matched points, got {n}")
    if n == 4 and _has_collinear_triple(src):
        raise EstimationError("degenerate configuration: three source points are collinear")
    if normalize:
        ts, td = _similarity_normalizer(src), _similarity_normalizer(dst)
        s, d = apply_homography(ts, src), apply_homography(td, dst)
    else:
        ts = td = np.eye(3)
        s, d = src, dst
    x, y, u, v = s[:, 0], s[:, 1], d[:, 0], d[:, 1]
    zeros, ones = np.zeros(n), np.ones(n)
    rows_u = np.stack([x, y, ones, zeros, zeros, zeros, -u * x, -u * y], axis=1)
    rows_v = np.stack([zeros, zeros, zeros, x, y, ones, -v * x, -v * y], axis=1)
    A = np.concatenate([rows_u, rows_v])
    b = np.concatenate([u, v])
    if n > 4:
        A, b = A.T @ A, A.T @ b
    try:
        if np.linalg.cond(A) > 1e14:
            raise np.linalg.LinAlgError("ill-conditioned system")
        h = np.linalg.solve(A, b)
    except np.linalg.LinAlgError as exc:
        raise EstimationError(f"degenerate configuration ({exc})") from None
    Hn = np.append(h, 1.0).reshape(3, 3)
    H = np.linalg.inv(td) @ Hn @ ts
    if abs(H[2, 2]) < 1e-15:
        raise EstimationError("homography has a vanishing scale term")
    H = H / H[2, 2]
    if abs(np.linalg.det(H)) < 1e-12:
        raise EstimationError("estimated homography is singular")
    return H


def ransac_homography(src: np.ndarray, dst: np.ndarray, threshold_px: float = 1.0,
                      iterations: int = 500, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Best-consensus homography over random minimal samples, refit on its inliers.

    Returns ``(H, inlier_indices)``; inliers are correspondences whose forward
    transfer error under the refit H is below ``threshold_px``.
    """
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    n = len(src)
    if n < 4:
        raise EstimationError(f"RANSAC needs at least 4 correspondences, got {n}")
    rng = np.random.default_rng(seed)
    best_mask, best_err = None, np.inf
    for _ in range(iterations):
        sample = rng.choice(n, size=4, replace=False)
        try:
            H = estimate_homography_dlt(src[sample], dst[sample])
        except EstimationError:
            continue
        with np.errstate(divide="ignore", invalid="ignore"):
            err = transfer_error(H, src, dst)
        mask = np.nan_to_num(err, nan=np.inf) < threshold_px
        score = err[mask].sum()
        if best_mask is None or mask.sum() > best_mask.sum() or (mask.sum() == best_mask.sum() and score < best_err):
            best_mask, best_err = mask, score
    if best_mask is None or best_mask.sum() < 4:
        raise EstimationError("RANSAC found no consensus set of 4 or more inliers")
    H = estimate_homography_dlt(src[best_mask], dst[best_mask])
    inliers = np.flatnonzero(transfer_error(H, src, dst) < threshold_px)
    if len(inliers) < 4:
        raise EstimationError("refit homography keeps fewer than 4 inliers")
    return H, inliers


def warp_bilinear(img: np.ndarray, H: np.ndarray, out_hw: tuple[int, int]) -> np.ndarray:
    """output[p] = bilinear sample of ``img`` at H^-1 p; samples outside the image are 0."""
    if abs(np.linalg.det(H)) < 1e-12:
        raise EstimationError("cannot warp with a singular homography")
    Hinv = np.linalg.inv(H)
    h_out, w_out = out_hw
    ys, xs = np.mgrid[0:h_out, 0:w_out]
    pts = apply_homography(Hinv, np.c_[xs.ravel(), ys.ravel()])
    sx, sy = pts[:, 0], pts[:, 1]
    h, w = img.shape[:2]
    eps = 1e-9
    valid = (sx >= -eps) & (sx <= w - 1 + eps) & (sy >= -eps) & (sy <= h - 1 + eps)
    sx = np.clip(sx, 0, w - 1)
    sy = np.clip(sy, 0, h - 1)
    x0 = np.floor(sx).astype(int)
    y0 = np.floor(sy).astype(int)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (sx - x0)[:, None]
    fy = (sy - y0)[:, None]
    src = img.astype(np.float64)
    top = src[y0, x0] * (1 - fx) + src[y0, x1] * fx
    bottom = src[y1, x0] * (1 - fx) + src[y1, x1] * fx
    out = top * (1 - fy) + bottom * fy
    out[~valid] = 0
    out = np.floor(np.clip(out, 0, 255) + 0.5).astype(np.uint8)
    return out.reshape(h_out, w_out, -1)


def average_stack(images: Sequence[np.ndarray]) -> np.ndarray:
    """Per-pixel mean of equally sized uint8 images, rounded half up (exact integer arithmetic)."""
    if not images:
        raise ShapeError("average_stack needs at least one image")
    shape = images[0].shape
    for img in images:
        if img.shape != shape:
            raise ShapeError(f"average_stack: {img.shape} differs from {shape}")
    total = np.sum([img.astype(np.int64) for img in images], axis=0)
    n = len(images)
    return ((2 * total + n) // (2 * n)).astype(np.uint8)


def _cubic(t: np.ndarray, a: float = -0.5) -> np.ndarray:
    t = np.abs(t)
    return np.where(
        t < 1, ((a + 2) * t - (a + 3)) * t * t + 1,
        np.where(t < 2, ((t - 5) * t + 8) * t * a - 4 * a, 0.0))


def _resize_weights(in_size: int, out_size: int) -> np.ndarray:
    """Dense (out, in) bicubic weights; the kernel is stretched when shrinking."""
    scale = in_size / out_size
    support_scale = max(scale, 1.0)
    support = 2.0 * support_scale
    weights = np.zeros((out_size, in_size))
    for i in range(out_size):
        center = (i + 0.5) * scale
        lo = max(int(center - support + 0.5), 0)
        hi = min(int(center + support + 0.5), in_size)
        taps = np.arange(lo, hi)
        w = _cubic((taps - center + 0.5) / support_scale)
        weights[i, lo:hi] = w / w.sum()
    return weights


def resize_bicubic(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Separable Catmull-Rom (a = -0.5) resize of an HxW[xC] float array."""
    img = np.asarray(img, dtype=np.float64)
    wy = _resize_weights(img.shape[0], out_h)
    wx = _resize_weights(img.shape[1], out_w)
    return np.einsum("ij,jk...->ik...", wy, np.einsum("ij,kj...->ki...", wx, img))


def downscale_bicubic(img: np.ndarray, factor: int) -> np.ndarray:
    h, w = img.shape[:2]
    if h % factor or w % factor:
        raise ShapeError(f"{h}x{w} not divisible by {factor}")
    if factor == 1:
        return img.copy()
    out = resize_bicubic(img, h // factor, w // factor)
    return np.floor(np.clip(out, 0, 255) + 0.5).astype(np.uint8)


def upscale_bicubic(img: np.ndarray, factor: int) -> np.ndarray:
    h, w = img.shape[:2]
    out = resize_bicubic(img, h * factor, w * factor)
    return np.floor(np.clip(out, 0, 255) + 0.5).astype(np.uint8)


def rectify_shots(shots: Sequence[np.ndarray], correspondences: Sequence[tuple[np.ndarray, np.ndarray]],
                  ref_hw: tuple[int, int], factor: int = 4, threshold_px: float = 1.0,
                  iterations: int = 500, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Warp each shot into the reference frame, average, then bicubic-downscale.

    Returns ``(aligned_average, lr)``.
    """
    if len(shots) != len(correspondences):
        raise ValueError(f"{len(shots)} shots but {len(correspondences)} correspondence sets")
    aligned = []
    for i, (shot, (src, dst)) in enumerate(zip(shots, correspondences)):
        H, _ = ransac_homography(src, dst, threshold_px, iterations, seed + i)
        aligned.append(warp_bilinear(shot, H, ref_hw))
    avg = average_stack(aligned)
    return avg, downscale_bicubic(avg, factor)
