"""Joint optimisation of the degradation GAN and the restoration network.

Each iteration draws aligned HR/LR crops, then updates, in order,
the discriminator (relativistic BCE with smoothed labels), the generator
(content + weighted adversarial loss) and DuRCAN (L1 + weighted Laplacian)
on a batch where each LR is replaced by a generated one with probability
gamma / (1 + gamma).  Randomness for iteration ``t`` comes from a generator
seeded with ``(seed, t)``, so a resumed run replays exactly.
"""

from __future__ import annotations

import logging
import math
import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from . import checkpoint as ckpt
from .autodiff import Parameter, Tensor
from .ddgan import (Discriminator, DiscriminatorConfig, Generator, GeneratorConfig,
                    relativistic_score)
from .durcan import DuRCAN, DuRCANConfig, PRESETS, auto_reduction
from .errors import ConfigurationError, NumericError, ShapeError
from .losses import (FeatureExtractor, LossWeights, discriminator_loss, generator_loss,
                     restoration_loss, smoothed_labels)

log = logging.getLogger(__name__)

LOG_HEADER = "iter\tL_D\tL_G\tL_SR\tlr"


@dataclass
class TrainConfig:
    lr: float = 1e-4
    halve_every: int = 50_000
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    batch: int = 16
    crop: int = 48
    scale: int = 4
    mix_gamma: float = 0.25
    eta: float = 6e-3
    lam: float = 1e-3
    alpha: float = 0.2
    beta: float = 0.8
    max_iters: int = 300_000
    seed: int = 0
    checkpoint_every: int = 0
    arch: str = "durcan-12"
    channels: int = 64
    reduction: int = 0
    gen_channels: tuple[int, ...] = (64, 128, 256)
    disc_channels: int = 64
    disc_hidden: int = 1024
    joint: bool = True
    freeze: str = ""
    data: str = ""

    def __post_init__(self):
        if not 0 <= self.mix_gamma <= 1:
            raise ConfigurationError(f"mix_gamma must lie in [0, 1], got {self.mix_gamma}")
        if self.arch not in PRESETS:
            raise ConfigurationError(f"unknown architecture {self.arch!r}")
        if self.crop * self.scale % 2 ** len(self.gen_channels):
            raise ConfigurationError(
                f"HR crop {self.crop * self.scale} must be divisible by {2 ** len(self.gen_channels)}")
        self.weights  # validates alpha/beta/eta/lam

    @property
    def weights(self) -> LossWeights:
        return LossWeights(eta=self.eta, lam=self.lam, alpha=self.alpha, beta=self.beta)

    @property
    def generated_fraction(self) -> float:
        """Mixing rate gamma as a per-sample probability (gamma=0.25 -> 4 real : 1 generated)."""
        return self.mix_gamma / (1.0 + self.mix_gamma)

    def durcan_config(self) -> DuRCANConfig:
        return DuRCANConfig.preset(self.arch, channels=self.channels, scale=self.scale,
                                   reduction=self.reduction or auto_reduction(self.channels))

    def generator_config(self) -> GeneratorConfig:
        return GeneratorConfig(base_channels=self.gen_channels[0], contracting_groups=len(self.gen_channels),
                               scale=self.scale, channel_schedule=tuple(self.gen_channels))

    def discriminator_config(self) -> DiscriminatorConfig:
        return DiscriminatorConfig(base_channels=self.disc_channels, input_size=self.crop,
                                   hidden=self.disc_hidden, max_channels=8 * self.disc_channels)


def learning_rate(cfg: TrainConfig, iteration: int) -> float:
    return cfg.lr * 2.0 ** (-(iteration // cfg.halve_every))


class Adam:
    """Bias-corrected Adam over a fixed, named parameter set."""

    def __init__(self, params: dict[str, Parameter], beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.t = 0

    def step(self, lr: float) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        for k, p in self.params.items():
            g = p.grad
            m, v = self.m[k], self.v[k]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            p.data -= (lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)).astype(p.dtype)

    def state(self, prefix: str) -> dict[str, np.ndarray]:
        out = {f"{prefix}.m.{k}": a for k, a in self.m.items()}
        out.update({f"{prefix}.v.{k}": a for k, a in self.v.items()})
        return out

    def load_state(self, tensors: dict[str, np.ndarray], prefix: str, t: int) -> None:
        for k, p in self.params.items():
            self.m[k] = tensors[f"{prefix}.m.{k}"].astype(p.dtype)
            self.v[k] = tensors[f"{prefix}.v.{k}"].astype(p.dtype)
        self.t = t


# ---------------------------------------------------------------------------
# data


def apply_augment(img: np.ndarray, rotations: int, flip: bool) -> np.ndarray:
    """Rotate an HxWxC array by ``rotations`` x 90 degrees, then optionally mirror horizontally."""
    out = np.rot90(img, rotations, axes=(0, 1))
    if flip:
        out = out[:, ::-1]
    return np.ascontiguousarray(out)


def augment(hr: np.ndarray, lr: np.ndarray, rng: np.random.Generator, scale: int = 4):
    """Apply one random rotation/flip to both images of a pair."""
    if hr.shape[0] != lr.shape[0] * scale or hr.shape[1] != lr.shape[1] * scale:
        raise ShapeError(f"HR {hr.shape[:2]} is not {scale}x LR {lr.shape[:2]}")
    rotations = int(rng.integers(4))
    flip = bool(rng.random() < 0.5)
    return apply_augment(hr, rotations, flip), apply_augment(lr, rotations, flip)


def load_pairs(manifest: str | os.PathLike) -> list[tuple[np.ndarray, np.ndarray]]:
    """Read a manifest into float32 HxWx3 [0,1] (hr, lr) pairs."""
    from .degradation import read_manifest

    pairs = []
    for hr, lr in read_manifest(manifest).load():
        pairs.append((hr.astype(np.float32) / 255.0, lr.astype(np.float32) / 255.0))
    return pairs


def sample_crops(dataset: Sequence[tuple[np.ndarray, np.ndarray]], cfg: TrainConfig,
                 rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Aligned random crops (LR crop x crop, HR the matching window), augmented. NCHW."""
    if not dataset:
        raise ValueError("dataset is empty")
    c, s = cfg.crop, cfg.scale
    hrs, lrs = [], []
    for _ in range(cfg.batch):
        hr, lr = dataset[int(rng.integers(len(dataset)))]
        h, w = lr.shape[:2]
        if c > h or c > w:
            raise ShapeError(f"crop {c} larger than LR image {h}x{w}")
        y, x = int(rng.integers(h - c + 1)), int(rng.integers(w - c + 1))
        hr_c, lr_c = augment(hr[s * y:s * (y + c), s * x:s * (x + c)], lr[y:y + c, x:x + c], rng, s)
        hrs.append(hr_c.transpose(2, 0, 1))
        lrs.append(lr_c.transpose(2, 0, 1))
    return np.stack(hrs), np.stack(lrs)


def mix_generated(lr: np.ndarray, hr: np.ndarray, generator: Callable | None, fraction: float,
                  rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Replace each LR independently, with probability ``fraction``, by a generated one.

    Generated images are computed without recording a graph, so no gradient can
    reach the generator through the restoration step.
    """
    flags = rng.random(len(lr)) < fraction
    mixed = lr.copy()
    if flags.any() and generator is not None:
        with ad.no_grad():
            mixed[flags] = generator(Tensor(hr[flags])).data
    return mixed, flags


def sample_batch(dataset, generator, cfg: TrainConfig, rng: np.random.Generator):
    """(lr_batch, hr_batch, generated_flags) for one restoration step."""
    hr, lr = sample_crops(dataset, cfg, rng)
    mixed, flags = mix_generated(lr, hr, generator, cfg.generated_fraction, rng)
    return mixed, hr, flags


# ---------------------------------------------------------------------------
# training


@dataclass
class Networks:
    durcan: DuRCAN
    generator: Generator
    discriminator: Discriminator
    extractor: FeatureExtractor

    @classmethod
    def build(cls, cfg: TrainConfig, dtype=np.float32) -> "Networks":
        return cls(DuRCAN(cfg.durcan_config(), seed=cfg.seed, dtype=dtype),
                   Generator(cfg.generator_config(), seed=cfg.seed + 1, dtype=dtype),
                   Discriminator(cfg.discriminator_config(), seed=cfg.seed + 2, dtype=dtype),
                   FeatureExtractor(dtype=dtype))


@dataclass
class TrainState:
    nets: Networks
    opt_sr: Adam
    opt_g: Adam
    opt_d: Adam
    iteration: int = 0
    log: list[tuple[int, float, float, float, float]] = field(default_factory=list)


def _frozen(name: str, prefixes: Sequence[str]) -> bool:
    return any(name.startswith(p) for p in prefixes if p)


def init_state(cfg: TrainConfig) -> TrainState:
    nets = Networks.build(cfg)
    prefixes = [p.strip() for p in cfg.freeze.split(",")]
    sr_params = {k: p for k, p in nets.durcan.parameters().items() if not _frozen(k, prefixes)}
    if not sr_params:
        raise ConfigurationError(f"freeze={cfg.freeze!r} leaves no trainable DuRCAN parameters")
    args = (cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
    return TrainState(nets, Adam(sr_params, *args), Adam(nets.generator.parameters(), *args),
                      Adam(nets.discriminator.parameters(), *args))


def _finite(value: float, term: str, iteration: int) -> float:
    if not math.isfinite(value):
        raise NumericError(f"non-finite {term} ({value}) at iteration {iteration}")
    return value


def train_step(state: TrainState, dataset, cfg: TrainConfig) -> tuple[int, float, float, float, float]:
    it = state.iteration
    rng = np.random.default_rng([cfg.seed, it])
    step_lr = learning_rate(cfg, it)
    nets, w = state.nets, cfg.weights
    G, D = nets.generator, nets.discriminator
    hr, lr = sample_crops(dataset, cfg, rng)
    loss_d = loss_g = 0.0
    if cfg.joint:
        real_labels = smoothed_labels("real", len(lr), rng, w)
        fake_labels = smoothed_labels("fake", len(lr), rng, w)
        hr_t, lr_real = Tensor(hr), Tensor(lr)

        with ad.no_grad():
            fake = G(hr_t)
        c_real, c_fake = D(lr_real), D(fake)
        L_D = discriminator_loss(relativistic_score(c_real, c_fake), relativistic_score(c_fake, c_real),
                                 real_labels, fake_labels)
        loss_d = _finite(L_D.item(), "L_D", it)
        D.zero_grad()
        ad.backward(L_D)
        state.opt_d.step(step_lr)

        fake = G(hr_t)
        c_real, c_fake = D(lr_real), D(fake)
        L_G = generator_loss(fake, lr_real, relativistic_score(c_real, c_fake),
                             relativistic_score(c_fake, c_real), real_labels, fake_labels,
                             nets.extractor, w)
        loss_g = _finite(L_G.item(), "L_G", it)
        G.zero_grad()
        ad.backward(L_G)
        state.opt_g.step(step_lr)
        G.zero_grad()
        D.zero_grad()
        lr, _ = mix_generated(lr, hr, G, cfg.generated_fraction, rng)

    sr = nets.durcan.super_resolve(Tensor(lr))
    L_SR = restoration_loss(sr, Tensor(hr), w)
    loss_sr = _finite(L_SR.item(), "L_SR", it)
    nets.durcan.zero_grad()
    ad.backward(L_SR)
    state.opt_sr.step(step_lr)
    if any(p.grad.any() for p in G.parameters().values()):
        raise RuntimeError("restoration step leaked gradient into the generator")
    row = (it, loss_d, loss_g, loss_sr, step_lr)
    state.log.append(row)
    state.iteration += 1
    return row


def format_log_row(row) -> str:
    it, ld, lg, lsr, lr = row
    return f"{it}\t{ld:.9g}\t{lg:.9g}\t{lsr:.9g}\t{lr:.9g}"


def parse_log(text: str) -> list[tuple[int, float, float, float, float]]:
    rows = []
    for line in text.splitlines():
        if not line or line.startswith("iter"):
            continue
        it, *vals = line.split("\t")
        rows.append((int(it), *(float(v) for v in vals)))
    return rows


def _net_meta(cfg: TrainConfig) -> dict[str, object]:
    return {"arch": cfg.arch, "channels": cfg.channels, "scale": cfg.scale,
            "reduction": cfg.durcan_config().reduction,
            "gen_channels": ",".join(map(str, cfg.gen_channels)),
            "disc_channels": cfg.disc_channels, "disc_hidden": cfg.disc_hidden, "crop": cfg.crop}


def save_state(state: TrainState, cfg: TrainConfig, directory: str | os.PathLike) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    meta = _net_meta(cfg)
    nets = state.nets
    ckpt.save_checkpoint(d / "durcan.cssr", ckpt.module_state(nets.durcan), meta)
    ckpt.save_checkpoint(d / "generator.cssr", ckpt.module_state(nets.generator), meta)
    ckpt.save_checkpoint(d / "discriminator.cssr", ckpt.module_state(nets.discriminator), meta)
    opt = {**state.opt_sr.state("durcan"), **state.opt_g.state("generator"),
           **state.opt_d.state("discriminator")}
    ckpt.save_checkpoint(d / "optim.cssr", opt, {
        "iteration": state.iteration, "t_durcan": state.opt_sr.t,
        "t_generator": state.opt_g.t, "t_discriminator": state.opt_d.t})
    return d


def load_state(cfg: TrainConfig, directory: str | os.PathLike) -> TrainState:
    d = Path(directory)
    state = init_state(cfg)
    nets = state.nets
    ckpt.load_into(nets.durcan, d / "durcan.cssr")
    ckpt.load_into(nets.generator, d / "generator.cssr")
    ckpt.load_into(nets.discriminator, d / "discriminator.cssr")
    meta, tensors = ckpt.load_checkpoint(d / "optim.cssr")
    state.opt_sr.load_state(tensors, "durcan", int(meta["t_durcan"]))
    state.opt_g.load_state(tensors, "generator", int(meta["t_generator"]))
    state.opt_d.load_state(tensors, "discriminator", int(meta["t_discriminator"]))
    state.iteration = int(meta["iteration"])
    return state


def train_joint(dataset, cfg: TrainConfig, out_dir: str | os.PathLike | None = None,
                resume: str | os.PathLike | None = None, state: TrainState | None = None,
                stop_at: int | None = None) -> TrainState:
    """Run iterations up to ``cfg.max_iters`` (or ``stop_at``).

    With ``out_dir`` the loss log is appended to ``out_dir/loss_log.tsv`` and
    checkpoints go to ``out_dir/iter_XXXXXXX/`` every ``checkpoint_every``
    iterations and at the end.
    """
    if state is None:
        state = load_state(cfg, resume) if resume else init_state(cfg)
    end = cfg.max_iters if stop_at is None else min(stop_at, cfg.max_iters)
    log_fh = None
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        log_path = out / "loss_log.tsv"
        fresh = state.iteration == 0 or not log_path.exists()
        log_fh = open(log_path, "w" if fresh else "a")
        if fresh:
            log_fh.write(LOG_HEADER + "\n")
    try:
        while state.iteration < end:
            row = train_step(state, dataset, cfg)
            if log_fh is not None:
                log_fh.write(format_log_row(row) + "\n")
            if row[0] % 50 == 0:
                log.info("iter %d  L_D %.4f  L_G %.4f  L_SR %.5f  lr %.2e", *row)
            if out_dir is not None and cfg.checkpoint_every and state.iteration % cfg.checkpoint_every == 0:
                save_state(state, cfg, Path(out_dir) / f"iter_{state.iteration:07d}")
        if out_dir is not None:
            save_state(state, cfg, Path(out_dir) / f"iter_{state.iteration:07d}")
    finally:
        if log_fh is not None:
            log_fh.close()
    return state


def config_fields() -> dict[str, type]:
    return {f.name: f.type for f in fields(TrainConfig)}


def networks_from_meta(meta: dict[str, str], dtype=np.float32) -> tuple[DuRCAN, Generator]:
    """Rebuild inference networks from checkpoint metadata."""
    try:
        channels = int(meta["channels"])
        cfg = DuRCANConfig.preset(meta["arch"], channels=channels, scale=int(meta["scale"]),
                                  reduction=int(meta["reduction"]))
        widths = tuple(int(v) for v in meta["gen_channels"].split(","))
    except KeyError as exc:
        raise ConfigurationError(f"checkpoint metadata lacks {exc}") from None
    gcfg = GeneratorConfig(base_channels=widths[0], contracting_groups=len(widths),
                           scale=int(meta["scale"]), channel_schedule=widths)
    return DuRCAN(cfg, dtype=dtype), Generator(gcfg, dtype=dtype)


# ---------------------------------------------------------------------------
# evaluation on the training pairs


def _to_uint8(img: np.ndarray) -> np.ndarray:
    return np.floor(np.clip(img, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


@dataclass
class PairScores:
    psnr_sr: float
    psnr_bicubic: float
    laplacian_error: float

    @property
    def gain_db(self) -> float:
        return self.psnr_sr - self.psnr_bicubic


def score_pairs(net: DuRCAN, dataset) -> PairScores:
    """Mean luma PSNR of the network and of bicubic x scale, plus the mean
    absolute Laplacian-response error of the network output against HR."""
    from .durcan import super_resolve_image
    from .losses import laplacian
    from .metrics import psnr, rgb_to_y
    from .rectify import upscale_bicubic

    scale = net.cfg.scale
    sr_db, bic_db, lap = [], [], []
    for hr, lr in dataset:
        hr8, lr8 = _to_uint8(hr), _to_uint8(lr)
        sr8 = super_resolve_image(net, lr8)
        sr_db.append(psnr(rgb_to_y(sr8), rgb_to_y(hr8)))
        bic_db.append(psnr(rgb_to_y(upscale_bicubic(lr8, scale)), rgb_to_y(hr8)))
        a = Tensor(sr8.astype(np.float64).transpose(2, 0, 1)[None] / 255.0)
        b = Tensor(hr8.astype(np.float64).transpose(2, 0, 1)[None] / 255.0)
        lap.append(float(np.mean(np.abs(laplacian(a).data - laplacian(b).data))))
    return PairScores(float(np.mean(sr_db)), float(np.mean(bic_db)), float(np.mean(lap)))
