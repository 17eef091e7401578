"""Command line entry point: ``synth``, ``train``, ``render``, ``eval``, ``ablate``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from ..checkpoint import CheckpointError, read_arrays
from ..colorspace import SingularMatrixError
from ..splat_renderer import RenderError
from ..tonecurve import compose, write_curve_table
from .config import ConfigError, RunConfig, load_config
from .data import DataError, load_dataset, read_transforms
from .synth import PRESETS, DatasetSpec, synth_dataset

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("tonesplat")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _size(text: str) -> tuple[int, int]:
    try:
        w, h = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"size must look like 64x64, got {text!r}")
    if w < 1 or h < 1:
        raise argparse.ArgumentTypeError("size must be positive")
    return w, h


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="tonesplat", description="Gaussian splatting with per-view tone curves.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    s = sub.add_parser("synth", help="render a synthetic multi-exposure dataset")
    s.add_argument("--preset", choices=sorted(PRESETS), required=True)
    s.add_argument("--views", type=int, default=16)
    s.add_argument("--test-views", type=int, default=4)
    s.add_argument("--size", type=_size, default=(64, 64))
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)

    t = sub.add_parser("train", help="optimize a scene on a dataset")
    t.add_argument("--data", required=True)
    t.add_argument("--config", help="key = value config file")
    t.add_argument("--out", required=True)
    t.add_argument("--resume", help="checkpoint to continue from")
    t.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="config override, repeatable")

    r = sub.add_parser("render", help="render novel views from a checkpoint")
    r.add_argument("--ckpt", required=True)
    r.add_argument("--cameras", required=True, help="transforms JSON file")
    r.add_argument("--out", required=True)
    r.add_argument("--pfm", action="store_true", help="also write float PFM images")

    e = sub.add_parser("eval", help="PSNR/SSIM of rendered vs ground-truth PNGs")
    e.add_argument("--pred", required=True)
    e.add_argument("--gt", required=True)
    e.add_argument("--out", required=True)

    a = sub.add_parser("ablate", help="train the four component configurations")
    a.add_argument("--data", required=True)
    a.add_argument("--out", required=True)
    a.add_argument("--config", help="key = value config file shared by all rows")
    return p


def _config(path, overrides) -> RunConfig:
    from .config import apply_overrides

    cfg = load_config(path) if path else RunConfig()
    pairs = {}
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not KEY=VALUE")
        k, v = item.split("=", 1)
        pairs[k.strip()] = v.strip()
    return apply_overrides(cfg, pairs)


def export_curves(trainer, out_dir) -> None:
    """One composed-curve table per training view, ``curves/view_XXX.txt``."""
    d = Path(out_dir) / "curves"
    d.mkdir(parents=True, exist_ok=True)
    g = trainer.state.global_curve.detach()
    for view in trainer.data.train:
        bias = view.cached_bias if trainer.flags["use_curve_bias"] else None
        write_curve_table(d / f"view_{view.view_id:03d}.txt", compose(g, bias))


def cmd_synth(args) -> None:
    w, h = args.size
    spec = DatasetSpec(preset=args.preset, views=args.views, test_views=args.test_views,
                       width=w, height=h, seed=args.seed)
    try:
        synth_dataset(spec, args.out)
    except OSError as exc:
        raise DataError(f"cannot write dataset to {args.out}: {exc}") from exc


def cmd_train(args) -> None:
    from .evaluate import render_novel, write_renders
    from .train import train

    cfg = _config(args.config, args.set)
    dataset = load_dataset(args.data)
    trainer = train(dataset, cfg, args.out, resume=args.resume)
    export_curves(trainer, args.out)
    if dataset.test:
        images = render_novel(trainer.state.cloud.detach(), [v.camera for v in dataset.test], cfg.background)
        write_renders(images, [v.name for v in dataset.test], Path(args.out) / "test_renders")


def cmd_render(args) -> None:
    from .evaluate import render_novel, write_renders

    meta, frames = read_transforms(args.cameras)
    arrays = read_arrays(args.ckpt)
    images = render_novel(arrays, [cam for _, cam in frames])
    write_renders(images, [Path(fp).stem for fp, _ in frames], args.out, pfm=args.pfm)


def cmd_eval(args) -> None:
    from .evaluate import eval_metrics, mean_row

    rows = eval_metrics(args.pred, args.gt, args.out)
    m = mean_row(rows)
    print(f"mean PSNR {m.psnr:.3f} dB  SSIM {m.ssim:.4f}  ({len(rows)} views)")


def cmd_ablate(args) -> None:
    from .ablation import run_ablation

    cfg = load_config(args.config) if args.config else RunConfig()
    rows = run_ablation(load_dataset(args.data), args.out, cfg)
    for r in rows:
        print(f"{r.label:10s} PSNR {r.psnr:.3f}  SSIM {r.ssim:.4f}")


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "render": cmd_render,
            "eval": cmd_eval, "ablate": cmd_ablate}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, CheckpointError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (FloatingPointError, SingularMatrixError, RenderError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
