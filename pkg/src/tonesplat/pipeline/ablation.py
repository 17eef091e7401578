"""Component ablation: global curve, per-view bias and color matrix toggles."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .config import RunConfig
from .data import Dataset
from .evaluate import compare, mean_row, render_novel
from .train import train

log = logging.getLogger(__name__)

# (method key, row label) in table order
ABLATION_ROWS = (
    ("global_only", "Lg"),
    ("bias_only", "Lb"),
    ("global_bias", "Lg+Lb"),
    ("full", "Lg+Lb+M"),
)


@dataclass
class AblationRow:
    method: str
    label: str
    psnr: float
    ssim: float


def held_out_metrics(cloud, dataset: Dataset, background=(0.0, 0.0, 0.0)):
    """Mean PSNR/SSIM of enhanced-color renders against the normal-light test views."""
    if not dataset.test:
        raise ValueError("dataset has no held-out views")
    images = render_novel(cloud, [v.camera for v in dataset.test], background)
    pred = {v.name: im.numpy() for v, im in zip(dataset.test, images)}
    gt = {v.name: v.image.numpy() for v in dataset.test}
    return mean_row(compare(pred, gt))


def run_ablation(
    dataset: Dataset,
    out_csv,
    base: Optional[RunConfig] = None,
    rows=ABLATION_ROWS,
    work_dir=None,
) -> list[AblationRow]:
    """Train every configuration with a shared seed and write the comparison CSV.

    Training artifacts of each row go to ``work_dir/<method>`` (next to the CSV
    by default).
    """
    base = base or RunConfig()
    out_csv = Path(out_csv)
    work = Path(work_dir) if work_dir is not None else out_csv.parent / (out_csv.stem + "_runs")
    results = []
    for method, label in rows:
        cfg = base.replace(method=method)
        trainer = train(dataset, cfg, work / method)
        m = held_out_metrics(trainer.state.cloud.detach(), dataset, cfg.background)
        log.info("%s: PSNR %.2f SSIM %.4f", label, m.psnr, m.ssim)
        results.append(AblationRow(method, label, m.psnr, m.ssim))
    write_ablation(results, out_csv)
    return results


def write_ablation(rows: list[AblationRow], path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["config", "label", "psnr", "ssim"])
        for r in rows:
            w.writerow([r.method, r.label, repr(r.psnr), repr(r.ssim)])


def read_ablation(path) -> list[AblationRow]:
    with open(path, newline="") as fh:
        return [
            AblationRow(r["config"], r["label"], float(r["psnr"]), float(r["ssim"]))
            for r in csv.DictReader(fh)
        ]


def ordering_violations(rows: list[AblationRow], tolerance: float = 0.3) -> list[str]:
    """Pairs breaking full >= Lg+Lb >= Lg-only by more than ``tolerance`` dB."""
    by = {r.method: r.psnr for r in rows}
    chain = [m for m in ("full", "global_bias", "global_only") if m in by]
    return [
        f"{hi} ({by[hi]:.2f}) < {lo} ({by[lo]:.2f})"
        for hi, lo in zip(chain, chain[1:])
        if by[hi] < by[lo] - tolerance or not np.isfinite(by[hi])
    ]
