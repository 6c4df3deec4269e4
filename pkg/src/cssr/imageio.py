"""8-bit RGB raster files: binary PPM always, PNG (and friends) through Pillow."""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np

from .errors import ImageIOError

try:
    from PIL import Image
except ImportError:  # pragma: no cover - Pillow is optional
    Image = None

PPM_SUFFIXES = {".ppm", ".pnm"}


def _ppm_tokens(buf: bytes, count: int) -> tuple[list[bytes], int]:
    tokens, pos = [], 2
    while len(tokens) < count:
        while pos < len(buf) and buf[pos:pos + 1].isspace():
            pos += 1
        if pos < len(buf) and buf[pos:pos + 1] == b"#":
            while pos < len(buf) and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError("truncated header")
        tokens.append(buf[start:pos])
    return tokens, pos + 1  # exactly one whitespace byte ends the header


def read_ppm(path: str | os.PathLike) -> np.ndarray:
    buf = Path(path).read_bytes()
    if buf[:2] != b"P6":
        raise ImageIOError(f"{path}: not a binary PPM (P6) file")
    try:
        (w, h, maxval), start = _ppm_tokens(buf, 3)
        w, h, maxval = int(w), int(h), int(maxval)
    except ValueError as exc:
        raise ImageIOError(f"{path}: corrupt PPM header ({exc})") from None
    if maxval > 255:
        raise ImageIOError(f"{path}: 16-bit images are not supported (maxval {maxval})")
    if w <= 0 or h <= 0 or maxval <= 0:
        raise ImageIOError(f"{path}: invalid PPM dimensions {w}x{h}, maxval {maxval}")
    need = w * h * 3
    payload = buf[start:start + need]
    if len(payload) < need:
        raise ImageIOError(f"{path}: truncated PPM payload ({len(payload)} of {need} bytes)")
    img = np.frombuffer(payload, dtype=np.uint8).reshape(h, w, 3)
    if maxval != 255:
        img = np.floor(img.astype(np.float64) * 255.0 / maxval + 0.5).astype(np.uint8)
    return img.copy()


def write_ppm(path: str | os.PathLike, img: np.ndarray) -> None:
    img = _as_rgb8(img)
    h, w, _ = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def _as_rgb8(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img)
    if img.dtype != np.uint8 or img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected an HxWx3 uint8 image, got {img.dtype} {img.shape}")
    return np.ascontiguousarray(img)


def read_image(path: str | os.PathLike) -> np.ndarray:
    """Read an 8-bit RGB image as an (H, W, 3) uint8 array."""
    path = Path(path)
    if not path.is_file():
        raise ImageIOError(f"{path}: no such file")
    if path.suffix.lower() in PPM_SUFFIXES:
        return read_ppm(path)
    if Image is None:
        raise ImageIOError(f"{path}: format needs Pillow, which is not installed")
    try:
        with Image.open(path) as im:
            if im.mode in ("I", "I;16", "I;16B", "I;16L", "I;16N", "F") or "16" in im.mode:
                raise ImageIOError(f"{path}: 16-bit images are not supported (mode {im.mode})")
            im.load()
            rgb = im.convert("RGB")
            return np.asarray(rgb, dtype=np.uint8).copy()
    except ImageIOError:
        raise
    except Exception as exc:
        raise ImageIOError(f"{path}: cannot decode image ({exc})") from None


def write_image(path: str | os.PathLike, img: np.ndarray) -> None:
    path = Path(path)
    img = _as_rgb8(img)
    if path.suffix.lower() in PPM_SUFFIXES:
        write_ppm(path, img)
        return
    if Image is None:
        raise ImageIOError(f"{path}: format needs Pillow, which is not installed")
    try:
        Image.fromarray(img).save(path)
    except Exception as exc:
        raise ImageIOError(f"{path}: cannot encode image ({exc})") from None


def to_float(img: np.ndarray, dtype=np.float32) -> np.ndarray:
    """uint8 HxWx3 -> float CxHxW in [0, 1]."""
    return (img.astype(dtype) / 255.0).transpose(2, 0, 1).copy()


def to_uint8(x: np.ndarray) -> np.ndarray:
    """float CxHxW in [0, 1] -> uint8 HxWx3, rounding half up."""
    return np.floor(np.clip(x, 0.0, 1.0).transpose(1, 2, 0) * 255.0 + 0.5).astype(np.uint8)


IMAGE_SUFFIXES = {".ppm", ".pnm", ".png", ".bmp", ".tif", ".tiff", ".jpg", ".jpeg"}


def list_images(directory: str | os.PathLike) -> list[Path]:
    return sorted(p for p in Path(directory).iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
