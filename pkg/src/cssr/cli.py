"""``cssr`` command-line entry point.

Exit codes: 0 success, 2 bad usage or configuration, 3 I/O failure,
4 numeric failure (NaN loss, failed gradient check, degenerate geometry).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from .errors import ConfigurationError, EstimationError, ImageIOError, NumericError, ShapeError

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4

log = logging.getLogger("cssr")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(EXIT_USAGE)


def effective_seed(arg_seed: int | None, default: int = 0) -> int:
    """CSSR_SEED, when set, wins over --seed."""
    env = os.environ.get("CSSR_SEED")
    if env is not None and env.strip():
        try:
            return int(env)
        except ValueError:
            raise ConfigurationError(f"CSSR_SEED must be an integer, got {env!r}") from None
    return default if arg_seed is None else arg_seed


def _checkpoint_file(path: str, name: str) -> Path:
    """Accept either a checkpoint file or a training checkpoint directory."""
    p = Path(path)
    if p.is_dir():
        p = p / f"{name}.cssr"
    if not p.is_file():
        raise ImageIOError(f"{p}: checkpoint not found")
    return p


def _split_list(text: str) -> list[str]:
    return [s for s in (t.strip() for t in text.split(",")) if s]


# ---------------------------------------------------------------------------
# commands


def cmd_train(args) -> int:
    from .config import load_config
    from .plotting import plot_losses
    from .trainer import format_log_row, load_pairs, train_joint

    cfg, _ = load_config(args.config)
    overrides = {"seed": effective_seed(args.seed, cfg.seed)}
    if args.max_iters is not None:
        overrides["max_iters"] = args.max_iters
    if args.data:
        overrides["data"] = args.data
    cfg = replace(cfg, **overrides)
    if not cfg.data:
        raise ConfigurationError("no training data: set 'data = <manifest>' or pass --data")
    data = Path(cfg.data)
    if not data.is_absolute() and not args.data:
        data = Path(args.config).parent / data
    dataset = load_pairs(data)
    state = train_joint(dataset, cfg, out_dir=args.out, resume=args.resume)
    out = Path(args.out)
    if state.log and not args.no_figures:
        from .trainer import parse_log

        plot_losses(parse_log((out / "loss_log.tsv").read_text()), out / "loss_curves.png")
    print("iter\tL_D\tL_G\tL_SR\tlr")
    for row in state.log[-args.tail:] if args.tail else []:
        print(format_log_row(row))
    print(f"# checkpoint\t{out / f'iter_{state.iteration:07d}'}")
    return EXIT_OK


def cmd_sr(args) -> int:
    from . import checkpoint as ckpt
    from .durcan import super_resolve_image
    from .imageio import read_image, write_image
    from .trainer import networks_from_meta

    path = _checkpoint_file(args.model, "durcan")
    meta, _ = ckpt.read_manifest(path)
    net, _ = networks_from_meta(meta)
    ckpt.load_into(net, path)
    img = read_image(args.input)
    sr = super_resolve_image(net, img)
    write_image(args.out, sr)
    print(f"{args.input}\t{img.shape[1]}x{img.shape[0]}\t{args.out}\t{sr.shape[1]}x{sr.shape[0]}")
    return EXIT_OK


def cmd_gen_lr(args) -> int:
    from . import checkpoint as ckpt
    from .ddgan import generate_lr_image
    from .imageio import read_image, write_image
    from .trainer import networks_from_meta

    path = _checkpoint_file(args.model, "generator")
    meta, _ = ckpt.read_manifest(path)
    _, gen = networks_from_meta(meta)
    ckpt.load_into(gen, path)
    img = read_image(args.input)
    lr = generate_lr_image(gen, img)
    write_image(args.out, lr)
    print(f"{args.input}\t{img.shape[1]}x{img.shape[0]}\t{args.out}\t{lr.shape[1]}x{lr.shape[0]}")
    return EXIT_OK


def cmd_degrade(args) -> int:
    from .config import load_config
    from .degradation import DegradationParams, degrade, make_dataset, synthetic_images
    from .imageio import read_image, write_image

    params = load_config(args.config)[1] if args.config else DegradationParams()
    params = replace(params, seed=effective_seed(args.seed, params.seed))
    modes = sum(x is not None for x in (args.input, args.hr_dir, args.synthetic))
    if modes != 1:
        raise ConfigurationError("give exactly one of --in, --hr-dir, --synthetic")
    if args.input is not None:
        lr = degrade(read_image(args.input), params)
        write_image(args.out, lr)
        print(f"{args.input}\t{args.out}\t{lr.shape[1]}x{lr.shape[0]}")
        return EXIT_OK
    out = Path(args.out)
    hr_dir = args.hr_dir
    n = args.n
    if args.synthetic is not None:
        hr_dir = out / "source"
        hr_dir.mkdir(parents=True, exist_ok=True)
        for i, img in enumerate(synthetic_images(args.synthetic, args.size, seed=params.seed)):
            write_image(hr_dir / f"img_{i:04d}.ppm", img)
        n = args.synthetic
    manifest = make_dataset(hr_dir, params, n, out, suffix=args.suffix)
    print(f"manifest\t{manifest}")
    return EXIT_OK


def cmd_rectify(args) -> int:
    from .imageio import read_image, write_image
    from .rectify import read_correspondences, rectify_shots

    shots_p, corrs_p = _split_list(args.shots), _split_list(args.corrs)
    if len(shots_p) != len(corrs_p) or not shots_p:
        raise ConfigurationError(f"{len(shots_p)} shots but {len(corrs_p)} correspondence files")
    ref = read_image(args.ref)
    shots = [read_image(p) for p in shots_p]
    corrs = [read_correspondences(p) for p in corrs_p]
    seed = effective_seed(args.seed)
    aligned, lr = rectify_shots(shots, corrs, ref.shape[:2], args.factor, args.threshold,
                                args.iterations, seed)
    write_image(args.out, lr)
    if args.aligned_out:
        write_image(args.aligned_out, aligned)
    print(f"{args.out}\t{lr.shape[1]}x{lr.shape[0]}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .imageio import list_images, read_image
    from .metrics import channel_histograms, evaluate_dirs, format_histograms

    report = evaluate_dirs(args.sr, args.hr)
    text = report.to_text()
    sys.stdout.write(text)
    if args.out:
        Path(args.out).write_text(text)
    if args.figures:
        from .plotting import plot_histograms

        fig_dir = Path(args.figures)
        fig_dir.mkdir(parents=True, exist_ok=True)
        hists = {name: channel_histograms(read_image(p) for p in list_images(d))
                 for name, d in (("SR", args.sr), ("HR", args.hr))}
        for name, h in hists.items():
            (fig_dir / f"histogram_{name.lower()}.csv").write_text(format_histograms(h))
        plot_histograms(hists, fig_dir / "histograms.png")
        print(f"# figures\t{fig_dir / 'histograms.png'}")
    return EXIT_OK


def cmd_params(args) -> int:
    from .durcan import REFERENCE_COUNTS, DuRCANConfig, DuRCAN
    from .nn import count_parameters

    cfg = DuRCANConfig.preset(args.arch, channels=args.channels, scale=args.scale,
                              reduction=args.reduction or None)
    total, breakdown = count_parameters(DuRCAN(cfg), depth=args.depth)
    for name, n in breakdown.items():
        print(f"{name}\t{n}")
    print(f"total\t{total}")
    ref = REFERENCE_COUNTS.get(args.arch)
    if ref and args.channels == 64 and args.scale == 4:
        print(f"reference\t{ref}\t{100.0 * (total - ref) / ref:+.3f}%")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradsuite import run_suite

    results = run_suite(seed=effective_seed(args.seed), max_elements=args.max_elements,
                        on_result=lambda r: print(r.line(), flush=True))
    failed = [r.name for r in results if not r.report.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return EXIT_NUMERIC if failed else EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="cssr", description="Camera-screen super-resolution toolkit.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="joint DD-GAN + DuRCAN training")
    t.add_argument("--config", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--data", help="manifest path (overrides the config)")
    t.add_argument("--resume", help="checkpoint directory to continue from")
    t.add_argument("--max-iters", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--tail", type=int, default=5, help="loss-log rows echoed at the end")
    t.add_argument("--no-figures", action="store_true")
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("sr", help="super-resolve one image with a DuRCAN checkpoint")
    s.add_argument("--model", required=True)
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sr)

    g = sub.add_parser("gen-lr", help="generate an LR image with the DD-GAN generator")
    g.add_argument("--model", required=True)
    g.add_argument("--in", dest="input", required=True)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_lr)

    d = sub.add_parser("degrade", help="simulate camera-screen degradation")
    d.add_argument("--in", dest="input")
    d.add_argument("--hr-dir")
    d.add_argument("--synthetic", type=int, metavar="N", help="make N synthetic HR images first")
    d.add_argument("--size", type=int, default=96, help="synthetic image side")
    d.add_argument("--n", type=int, help="number of pairs from --hr-dir (default all)")
    d.add_argument("--out", required=True)
    d.add_argument("--config", help="config file with degradation.* keys")
    d.add_argument("--suffix", default=".ppm")
    d.add_argument("--seed", type=int)
    d.set_defaults(func=cmd_degrade)

    r = sub.add_parser("rectify", help="align shots to a reference and downscale")
    r.add_argument("--shots", required=True, help="comma-separated shot images")
    r.add_argument("--corrs", required=True, help="comma-separated correspondence files")
    r.add_argument("--ref", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--aligned-out")
    r.add_argument("--factor", type=int, default=4)
    r.add_argument("--threshold", type=float, default=1.0)
    r.add_argument("--iterations", type=int, default=500)
    r.add_argument("--seed", type=int)
    r.set_defaults(func=cmd_rectify)

    e = sub.add_parser("eval", help="PSNR/SSIM report for SR vs HR directories")
    e.add_argument("--sr", required=True)
    e.add_argument("--hr", required=True)
    e.add_argument("--out", help="also write the report here")
    e.add_argument("--figures", help="directory for histogram figures and CSV")
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("params", help="parameter count breakdown")
    c.add_argument("--arch", required=True)
    c.add_argument("--channels", type=int, default=64)
    c.add_argument("--scale", type=int, default=4)
    c.add_argument("--reduction", type=int, default=0)
    c.add_argument("--depth", type=int, default=1)
    c.set_defaults(func=cmd_params)

    k = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    k.add_argument("--seed", type=int)
    k.add_argument("--max-elements", type=int, default=24)
    k.set_defaults(func=cmd_gradcheck)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ImageIOError, OSError) as exc:
        print(f"cssr: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (NumericError, EstimationError, FloatingPointError) as exc:
        print(f"cssr: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigurationError, ShapeError, ValueError) as exc:
        print(f"cssr: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
