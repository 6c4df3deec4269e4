"""Objectives for both networks.

Label pairing follows the printed objectives: in the discriminator loss the
real-vs-fake score is matched with label ``a`` and the fake-vs-real score with
label ``b``; the generator's adversarial loss swaps the two.  ``a`` is drawn
from the real range U(beta, 1) and ``b`` from the fake range U(0, alpha).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigurationError, ShapeError
from .nn import Conv2d, Module

BCE_EPS = 1e-7
LAPLACE_KERNEL = np.array([[0.0, 1.0, 0.0], [1.0, -4.0, 1.0], [0.0, 1.0, 0.0]])


@dataclass(frozen=True)
class LossWeights:
    eta: float = 6e-3   # Laplacian term in the restoration loss
    lam: float = 1e-3   # adversarial term in the generator loss
    alpha: float = 0.2  # fake labels ~ U(0, alpha)
    beta: float = 0.8   # real labels ~ U(beta, 1)

    def __post_init__(self):
        if not 0 <= self.alpha < self.beta <= 1:
            raise ConfigurationError(f"need 0 <= alpha < beta <= 1, got {self.alpha}, {self.beta}")
        if self.eta < 0 or self.lam < 0:
            raise ConfigurationError("loss weights must be non-negative")


def _same_shape(a: Tensor, b: Tensor, what: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{what}: shapes {a.shape} and {b.shape} differ")


def l1_loss(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "l1_loss")
    return ad.mean(ad.tabs(a - b))


def laplacian(x: Tensor) -> Tensor:
    """Filter every channel with the 4-neighbour Laplace stencil (zero padding)."""
    B, C, H, W = x.shape
    k = Tensor(LAPLACE_KERNEL.reshape(1, 1, 3, 3).astype(x.dtype))
    out = ad.conv2d(ad.reshape(x, (B * C, 1, H, W)), k, None, padding=1)
    return ad.reshape(out, (B, C, H, W))


def laplacian_loss(sr: Tensor, hr: Tensor) -> Tensor:
    _same_shape(sr, hr, "laplacian_loss")
    return l1_loss(laplacian(sr), laplacian(hr))


def restoration_loss(sr: Tensor, hr: Tensor, w: LossWeights = LossWeights()) -> Tensor:
    loss = l1_loss(sr, hr)
    if w.eta == 0:
        return loss
    return loss + laplacian_loss(sr, hr) * w.eta


def smoothed_labels(kind: str, n: int, rng: np.random.Generator, w: LossWeights = LossWeights(),
                    dtype=np.float32) -> np.ndarray:
    if n < 1:
        raise ValueError("need at least one label")
    if kind == "real":
        lo, hi = w.beta, 1.0
    elif kind == "fake":
        lo, hi = 0.0, w.alpha
    else:
        raise ValueError(f"label kind must be 'real' or 'fake', got {kind!r}")
    return rng.uniform(lo, hi, size=n).astype(dtype)


def bce(labels, probs: Tensor) -> Tensor:
    """Mean binary cross-entropy; probabilities are clamped away from 0 and 1."""
    p = probs.data
    if np.any(np.isnan(p)) or np.any(p < 0) or np.any(p > 1):
        raise ValueError("BCE probabilities must lie in [0, 1]")
    y = Tensor(np.asarray(labels, dtype=probs.dtype))
    _same_shape(y, probs, "bce")
    q = ad.clip(probs, BCE_EPS, 1 - BCE_EPS)
    nll = y * ad.log(q) + (1.0 - y) * ad.log(1.0 - q)
    return -ad.mean(nll)


def discriminator_loss(real_scores: Tensor, fake_scores: Tensor, real_labels, fake_labels) -> Tensor:
    """BCE(a, D(real, fake)) + BCE(b, D(fake, real)); a = real labels, b = fake labels."""
    return bce(real_labels, real_scores) + bce(fake_labels, fake_scores)


def generator_adv_loss(real_scores: Tensor, fake_scores: Tensor, real_labels, fake_labels) -> Tensor:
    """BCE(b, D(real, fake)) + BCE(a, D(fake, real)): label roles swapped."""
    return bce(fake_labels, real_scores) + bce(real_labels, fake_scores)


class FeatureExtractor(Module):
    """Frozen random-weight conv stack standing in for a pretrained perceptual network.

    Five 3x3 convs with relu between them, seeded, no trainable parameters.
    Pretrained features can be used instead by passing any callable to
    :func:`content_loss`.
    """

    def __init__(self, widths=(3, 16, 16, 32, 32, 32), *, seed: int = 1234, dtype=np.float32):
        rng = np.random.default_rng(seed)
        self.layers = [Conv2d(a, b, 3, rng=rng, dtype=dtype) for a, b in zip(widths[:-1], widths[1:])]
        self.freeze()

    def forward(self, x: Tensor) -> Tensor:
        for i, conv in enumerate(self.layers):
            x = conv(x)
            if i < len(self.layers) - 1:
                x = ad.relu(x)
        return x


def content_loss(sr: Tensor, hr: Tensor, extractor: Callable[[Tensor], Tensor]) -> Tensor:
    """Pixel L1 plus L1 between extracted features."""
    return l1_loss(sr, hr) + l1_loss(extractor(sr), extractor(hr))


def generator_loss(fake: Tensor, target: Tensor, real_scores: Tensor, fake_scores: Tensor,
                   real_labels, fake_labels, extractor, w: LossWeights = LossWeights()) -> Tensor:
    adv = generator_adv_loss(real_scores, fake_scores, real_labels, fake_labels)
    return content_loss(fake, target, extractor) + adv * w.lam
