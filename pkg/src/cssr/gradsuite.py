"""The finite-difference suite run by ``cssr gradcheck`` and the test-suite.

Every primitive op is checked at float64 against a random linear readout of
its output (tolerance 1e-6).  Blocks, the two GAN networks, a miniature
DuRCAN and every loss are checked as composed networks (tolerance 1e-4).
Widths are tiny so the whole suite runs in well under a minute on one core.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .blocks import RCAB, DuRB, DuRBConfig, RCABConfig, ResBlock, UpsampleBlock
from .ddgan import Discriminator, DiscriminatorConfig, Generator, GeneratorConfig, relativistic_score
from .durcan import DuRCAN, DuRCANConfig
from .gradcheck import GradCheckReport, finite_diff_check
from .losses import (FeatureExtractor, LossWeights, bce, content_loss, discriminator_loss,
                     generator_adv_loss, generator_loss, l1_loss, laplacian_loss, restoration_loss)
from .nn import Module

OP_TOLERANCE = 1e-6
NET_TOLERANCE = 1e-4
F64 = np.float64


@dataclass
class SuiteResult:
    name: str
    kind: str
    report: GradCheckReport
    seconds: float

    def line(self) -> str:
        return f"{self.kind:<4} {self.name:<22} {self.report.summary()}  ({self.seconds:.2f}s)"


def _leaf(rng, shape, lo=-1.0, hi=1.0) -> Tensor:
    return Tensor(rng.uniform(lo, hi, size=shape), requires_grad=True)


def _readout(out: Tensor, weights: np.ndarray) -> Tensor:
    return ad.tsum(out * Tensor(weights))


def _op_case(rng, build: Callable[..., Tensor], shapes, ranges=None):
    """Inputs drawn from ``ranges``; loss = sum(op(inputs) * R) for a fixed random R."""
    ranges = ranges or [(-1.0, 1.0)] * len(shapes)
    inputs = [_leaf(rng, s, *r) for s, r in zip(shapes, ranges)]
    with ad.no_grad():
        out_shape = build(*inputs).shape
    weights = rng.normal(size=out_shape)

    def loss():
        return _readout(build(*inputs), weights)

    def resample(r):
        for t, (lo, hi) in zip(inputs, ranges):
            t.data[...] = r.uniform(lo, hi, size=t.shape)

    return loss, {f"in{i}": t for i, t in enumerate(inputs)}, resample


def op_cases(rng) -> dict[str, tuple]:
    x4 = (2, 3, 6, 6)
    return {
        "add": _op_case(rng, ad.add, [x4, (1, 3, 1, 1)]),
        "sub": _op_case(rng, ad.sub, [x4, x4]),
        "mul": _op_case(rng, ad.mul, [x4, (3, 1, 1)]),
        "abs": _op_case(rng, ad.tabs, [x4]),
        "log": _op_case(rng, ad.log, [x4], [(0.2, 2.0)]),
        "clip": _op_case(rng, lambda x: ad.clip(x, -0.5, 0.5), [x4]),
        "relu": _op_case(rng, ad.relu, [x4]),
        "leaky_relu": _op_case(rng, ad.leaky_relu, [x4]),
        "sigmoid": _op_case(rng, ad.sigmoid, [x4], [(-4.0, 4.0)]),
        "tanh": _op_case(rng, ad.tanh, [x4], [(-2.0, 2.0)]),
        "sum": _op_case(rng, lambda x: ad.tsum(x) * 1.0, [x4]),
        "mean": _op_case(rng, lambda x: ad.mean(x, axis=(2, 3), keepdims=True), [x4]),
        "reshape": _op_case(rng, lambda x: ad.reshape(x, (2, 108)), [x4]),
        "conv2d_same": _op_case(rng, lambda x, w, b: ad.conv2d(x, w, b), [x4, (4, 3, 3, 3), (4,)]),
        "conv2d_k5": _op_case(rng, lambda x, w, b: ad.conv2d(x, w, b), [x4, (2, 3, 5, 5), (2,)]),
        "conv2d_stride2": _op_case(rng, lambda x, w, b: ad.conv2d(x, w, b, padding=1, stride=2),
                                   [x4, (4, 3, 3, 3), (4,)]),
        "maxpool2": _op_case(rng, ad.maxpool2, [x4]),
        "global_avg_pool": _op_case(rng, ad.global_avg_pool, [x4]),
        "pixel_shuffle": _op_case(rng, lambda x: ad.pixel_shuffle(x, 2), [(2, 8, 3, 3)]),
        "pixel_unshuffle": _op_case(rng, lambda x: ad.pixel_unshuffle(x, 2), [x4]),
        "concat": _op_case(rng, lambda a, b: ad.concat_channels([a, b]), [x4, (2, 2, 6, 6)]),
        "channel_scale": _op_case(rng, ad.channel_scale, [x4, (2, 3, 1, 1)]),
        "linear": _op_case(rng, ad.linear, [(3, 5), (4, 5), (4,)]),
    }


def _net_case(rng, net: Module, forward: Callable, input_shapes, lo=-1.0, hi=1.0):
    inputs = [_leaf(rng, s, lo, hi) for s in input_shapes]
    with ad.no_grad():
        out = forward(*inputs)
    outs = out if isinstance(out, tuple) else (out,)
    weights = [rng.normal(size=o.shape) for o in outs]

    def loss():
        res = forward(*inputs)
        res = res if isinstance(res, tuple) else (res,)
        total = _readout(res[0], weights[0])
        for o, w in zip(res[1:], weights[1:]):
            total = total + _readout(o, w)
        return total

    def resample(r):
        for t in inputs:
            t.data[...] = r.uniform(lo, hi, size=t.shape)

    params = {f"in{i}": t for i, t in enumerate(inputs)}
    params.update(net.parameters())
    return loss, params, resample


def _loss_case(rng, fn: Callable[..., Tensor], shapes, lo=0.0, hi=1.0, params_from: Module | None = None):
    inputs = [_leaf(rng, s, lo, hi) for s in shapes]

    def resample(r):
        for t in inputs:
            t.data[...] = r.uniform(lo, hi, size=t.shape)

    params = {f"in{i}": t for i, t in enumerate(inputs)}
    if params_from is not None:
        params.update(params_from.parameters())
    return (lambda: fn(*inputs)), params, resample


def net_cases(rng) -> dict[str, tuple]:
    seed = lambda: np.random.default_rng(int(rng.integers(1 << 31)))  # noqa: E731
    rb = ResBlock(3, rng=seed(), dtype=F64)
    rcab = RCAB(RCABConfig(4, 2), rng=seed(), dtype=F64)
    durb = DuRB(DuRBConfig(3, 5, 3), rng=seed(), dtype=F64)
    up = UpsampleBlock(4, 2, 2, rng=seed(), dtype=F64)
    gen = Generator(GeneratorConfig(4, 3, 4, (2, 3, 4)), seed=1, dtype=F64)
    disc = Discriminator(DiscriminatorConfig(2, 12, 8, 6, 6), seed=2, dtype=F64)
    durcan = DuRCAN(DuRCANConfig(2, [(3, 3), (5, 3)], channels=4, scale=2, reduction=2), seed=3, dtype=F64)
    feat = FeatureExtractor((3, 4, 4), dtype=F64)
    w = LossWeights()
    n = 3
    real_labels = rng.uniform(w.beta, 1.0, size=n)
    fake_labels = rng.uniform(0.0, w.alpha, size=n)

    def d_loss(real_logits, fake_logits):
        return discriminator_loss(relativistic_score(real_logits, fake_logits),
                                  relativistic_score(fake_logits, real_logits), real_labels, fake_labels)

    def g_adv(real_logits, fake_logits):
        return generator_adv_loss(relativistic_score(real_logits, fake_logits),
                                  relativistic_score(fake_logits, real_logits), real_labels, fake_labels)

    def g_full(fake, target, real_logits, fake_logits):
        return generator_loss(fake, target, relativistic_score(real_logits, fake_logits),
                              relativistic_score(fake_logits, real_logits), real_labels, fake_labels, feat, w)

    sr_hr = [(2, 3, 6, 6)] * 2
    return {
        "res_block": _net_case(rng, rb, rb, [(2, 3, 5, 5)]),
        "rcab": _net_case(rng, rcab, rcab, [(2, 4, 5, 5)]),
        "durb": _net_case(rng, durb, durb, [(1, 3, 6, 6), (1, 3, 6, 6)]),
        "upsample_block": _net_case(rng, up, up, [(1, 4, 3, 3)]),
        "generator": _net_case(rng, gen, gen, [(1, 3, 16, 16)], 0.0, 1.0),
        "discriminator": _net_case(rng, disc, disc, [(2, 3, 12, 12)], 0.0, 1.0),
        "durcan": _net_case(rng, durcan, durcan.super_resolve, [(1, 3, 4, 4)], 0.0, 1.0),
        "l1_loss": _loss_case(rng, l1_loss, sr_hr),
        "laplacian_loss": _loss_case(rng, laplacian_loss, sr_hr),
        "restoration_loss": _loss_case(rng, lambda a, b: restoration_loss(a, b, w), sr_hr),
        "bce": _loss_case(rng, lambda p: bce(real_labels, p), [(n,)], 0.05, 0.95),
        "discriminator_loss": _loss_case(rng, d_loss, [(n,), (n,)], -2.0, 2.0),
        "generator_adv_loss": _loss_case(rng, g_adv, [(n,), (n,)], -2.0, 2.0),
        "content_loss": _loss_case(rng, lambda a, b: content_loss(a, b, feat), sr_hr),
        "generator_loss": _loss_case(rng, g_full, sr_hr + [(n,), (n,)], 0.0, 1.0),
    }


def run_suite(seed: int = 0, max_elements: int | None = 24,
              on_result: Callable[[SuiteResult], None] | None = None) -> list[SuiteResult]:
    """Run every op and network check; ``max_elements`` caps probes per network tensor."""
    rng = np.random.default_rng(seed)
    results = []
    groups = [("op", op_cases(rng), OP_TOLERANCE, 1e-6, None),
              ("net", net_cases(rng), NET_TOLERANCE, 1e-5, max_elements)]
    for kind, cases, tol, eps, cap in groups:
        for name, (loss, params, resample) in cases.items():
            t0 = time.perf_counter()
            report = finite_diff_check(loss, params, tolerance=tol, eps=eps, max_elements=cap,
                                       seed=seed, resample=resample, kink_margin=1e-3)
            res = SuiteResult(name, kind, report, time.perf_counter() - t0)
            results.append(res)
            if on_result is not None:
                on_result(res)
    return results
