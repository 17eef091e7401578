"""Train the four component configurations and write the comparison CSV.

    python scripts/ablation.py --preset varying --iterations 3000 --out runs/ablation.csv

Equivalent to ``tonesplat ablate`` with a generated dataset and an
iteration override; also trains the frozen-identity baseline for reference.
"""

import argparse
from pathlib import Path

import torch

from tonesplat.pipeline.ablation import (
    ABLATION_ROWS,
    held_out_metrics,
    ordering_violations,
    run_ablation,
)
from tonesplat.pipeline.config import RunConfig
from tonesplat.pipeline.data import load_dataset
from tonesplat.pipeline.synth import DatasetSpec, synth_dataset
from tonesplat.pipeline.train import train


def main():
    p = argparse.ArgumentParser()
    p.add_argument("--preset", default="varying")
    p.add_argument("--iterations", type=int, default=3000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="runs/ablation.csv")
    p.add_argument("--baseline", action="store_true", help="also train the identity baseline")
    args = p.parse_args()

    torch.set_num_threads(1)
    out = Path(args.out)
    data = out.parent / f"data_{args.preset}"
    if not (data / "transforms_train.json").exists():
        synth_dataset(DatasetSpec(preset=args.preset, seed=args.seed), data)
    ds = load_dataset(data)
    base = RunConfig(seed=args.seed, total_iterations=args.iterations)
    rows = run_ablation(ds, out, base, ABLATION_ROWS)
    for r in rows:
        print(f"{r.label:10s} PSNR {r.psnr:6.2f}  SSIM {r.ssim:.4f}")
    if args.baseline:
        cfg = base.replace(method="identity")
        trainer = train(ds, cfg, out.parent / (out.stem + "_runs") / "identity")
        m = held_out_metrics(trainer.state.cloud.detach(), ds, cfg.background)
        print(f"{'identity':10s} PSNR {m.psnr:6.2f}  SSIM {m.ssim:.4f}")
    bad = ordering_violations(rows)
    print("ordering:", "ok" if not bad else "; ".join(bad))


if __name__ == "__main__":
    main()
