"""Checkpoint files.

Layout::

    CSSR1
    # key = value            (optional metadata lines)
    name<TAB>count<TAB>d0,d1,...
    ...
    <blank line>
    payload: little-endian float32 values, manifest order

The manifest can be read without touching the payload.
"""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, ImageIOError
from .nn import Module

MAGIC = "CSSR1"


def save_checkpoint(path: str | os.PathLike, tensors: dict[str, np.ndarray],
                    meta: dict[str, object] | None = None) -> None:
    header = [MAGIC]
    for key, value in (meta or {}).items():
        header.append(f"# {key} = {value}")
    for name, arr in tensors.items():
        if any(c in name for c in "\t\n"):
            raise ValueError(f"invalid parameter name {name!r}")
        shape = ",".join(str(d) for d in arr.shape)
        header.append(f"{name}\t{arr.size}\t{shape}")
    payload = b"".join(np.ascontiguousarray(a, dtype="<f4").tobytes() for a in tensors.values())
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n\n").encode("utf-8"))
        fh.write(payload)


def _split(path: Path) -> tuple[list[str], bytes]:
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise ImageIOError(f"{path}: {exc.strerror}") from None
    sep = raw.find(b"\n\n")
    if not raw.startswith(MAGIC.encode() + b"\n") or sep < 0:
        raise ImageIOError(f"{path}: not a {MAGIC} checkpoint")
    return raw[:sep].decode("utf-8").split("\n")[1:], raw[sep + 2:]


def read_manifest(path: str | os.PathLike) -> tuple[dict[str, str], list[tuple[str, int, tuple[int, ...]]]]:
    """Return (metadata, [(name, count, shape), ...]) from the header only."""
    path = Path(path)
    lines, _ = _split(path)
    meta, entries = {}, []
    for line in lines:
        if line.startswith("#"):
            key, _, value = line[1:].partition("=")
            meta[key.strip()] = value.strip()
            continue
        try:
            name, count, shape = line.split("\t")
            dims = tuple(int(d) for d in shape.split(",")) if shape else ()
            entries.append((name, int(count), dims))
        except ValueError:
            raise ImageIOError(f"{path}: malformed manifest line {line!r}") from None
    return meta, entries


def load_checkpoint(path: str | os.PathLike) -> tuple[dict[str, str], dict[str, np.ndarray]]:
    path = Path(path)
    meta, entries = read_manifest(path)
    _, payload = _split(path)
    expected = 4 * sum(count for _, count, _ in entries)
    if len(payload) != expected:
        raise ImageIOError(f"{path}: payload has {len(payload)} bytes, manifest needs {expected}")
    flat = np.frombuffer(payload, dtype="<f4")
    tensors, pos = {}, 0
    for name, count, shape in entries:
        tensors[name] = flat[pos:pos + count].reshape(shape).astype(np.float32)
        pos += count
    return meta, tensors


def module_state(net: Module, prefix: str = "") -> dict[str, np.ndarray]:
    return {prefix + name: p.data for name, p in net.named_parameters()}


def check_compatible(net: Module, entries: list[tuple[str, int, tuple[int, ...]]], prefix: str = "") -> None:
    """Raise unless the manifest lists exactly the module's parameters and shapes."""
    want = {prefix + n: p.shape for n, p in net.named_parameters()}
    have = {n: s for n, _, s in entries if n.startswith(prefix)}
    if want != have:
        missing = sorted(set(want) - set(have))
        extra = sorted(set(have) - set(want))
        wrong = sorted(n for n in set(want) & set(have) if want[n] != have[n])
        raise ConfigurationError(
            f"checkpoint does not match architecture (missing {missing[:3]}, "
            f"unexpected {extra[:3]}, shape mismatch {wrong[:3]})")


def load_into(net: Module, path: str | os.PathLike, prefix: str = "") -> dict[str, str]:
    """Validate the manifest against ``net`` first, then copy values in. Returns metadata."""
    meta, entries = read_manifest(path)
    check_compatible(net, entries, prefix)
    _, tensors = load_checkpoint(path)
    for name, p in net.named_parameters():
        p.data = tensors[prefix + name].astype(p.dtype)
    return meta
