"""Test-time rendering (enhanced colors only) and PSNR/SSIM evaluation."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from ..checkpoint import read_arrays
from ..losses import ssim
from ..scene import DTYPE, Camera, GaussianCloud
from ..splat_renderer import project, render
from .data import DataError, read_png, write_pfm, write_png
from .train import cloud_from_arrays


@dataclass
class MetricsRow:
    view: str
    psnr: float
    ssim: float
    reference: str = "normal-light"


def psnr(pred, target) -> float:
    """PSNR in dB on [0, 1] images; ``inf`` for identical inputs."""
    mse = float(np.mean((np.asarray(pred, dtype=np.float64) - np.asarray(target, dtype=np.float64)) ** 2))
    return math.inf if mse == 0 else 10.0 * math.log10(1.0 / mse)


def image_ssim(pred, target) -> float:
    return float(ssim(torch.as_tensor(np.asarray(pred), dtype=DTYPE), torch.as_tensor(np.asarray(target), dtype=DTYPE)))


def render_novel(checkpoint, cameras: list[Camera], background=(0.0, 0.0, 0.0)) -> list[torch.Tensor]:
    """Render with the enhanced colors only, clamped to [0, 1].

    ``checkpoint`` is a path, a loaded array dict, or a GaussianCloud.
    """
    if isinstance(checkpoint, GaussianCloud):
        cloud = checkpoint
    else:
        arrays = checkpoint if isinstance(checkpoint, dict) else read_arrays(checkpoint)
        cloud = cloud_from_arrays(arrays)
    images = []
    with torch.no_grad():
        for cam in cameras:
            out = render(project(cloud, cam), cam, background)
            images.append(out.image_out.clamp(0.0, 1.0))
    return images


def write_renders(images, names, out_dir, pfm: bool = False) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for img, name in zip(images, names):
        write_png(out / f"{name}.png", img)
        if pfm:
            write_pfm(out / f"{name}.pfm", img)


def compare(pred: dict, gt: dict, reference: str = "normal-light") -> list[MetricsRow]:
    if set(pred) != set(gt):
        raise DataError(f"view sets differ: {sorted(set(pred) ^ set(gt))}")
    rows = []
    for name in sorted(gt):
        p, g = np.asarray(pred[name]), np.asarray(gt[name])
        if p.shape != g.shape:
            raise DataError(f"{name}: shape {p.shape} vs {g.shape}")
        rows.append(MetricsRow(name, psnr(p, g), image_ssim(p, g), reference))
    return rows


def mean_row(rows: list[MetricsRow]) -> MetricsRow:
    return MetricsRow(
        "mean",
        float(np.mean([r.psnr for r in rows])),
        float(np.mean([r.ssim for r in rows])),
        rows[0].reference if rows else "",
    )


def write_metrics(rows: list[MetricsRow], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["view", "psnr", "ssim", "reference"])
        for r in rows + [mean_row(rows)]:
            w.writerow([r.view, repr(r.psnr), repr(r.ssim), r.reference])


def _png_dir(path) -> dict[str, np.ndarray]:
    d = Path(path)
    if not d.is_dir():
        raise DataError(f"{d}: not a directory")
    out = {p.stem: read_png(p) for p in sorted(d.glob("*.png"))}
    if not out:
        raise DataError(f"{d}: no PNG images")
    return out


def eval_metrics(pred_dir, gt_dir, out_csv=None, reference: str = "normal-light") -> list[MetricsRow]:
    rows = compare(_png_dir(pred_dir), _png_dir(gt_dir), reference)
    if out_csv is not None:
        write_metrics(rows, out_csv)
    return rows
