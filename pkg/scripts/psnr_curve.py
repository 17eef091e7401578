"""Held-out PSNR as training progresses, for one or more methods.

    python scripts/psnr_curve.py --preset varying --iterations 10000 \
        --methods full,identity,global_bias,global_only --every 1000

Synthesizes the dataset into --data if it is missing. Prints one line per
evaluation point; this is how the acceptance iteration budget was chosen.
"""

import argparse
import time
from pathlib import Path

import torch

from tonesplat.pipeline.ablation import held_out_metrics
from tonesplat.pipeline.config import RunConfig, apply_overrides
from tonesplat.pipeline.data import load_dataset
from tonesplat.pipeline.synth import DatasetSpec, synth_dataset
from tonesplat.pipeline.train import Trainer


def main():
    p = argparse.ArgumentParser()
    p.add_argument("--preset", default="varying")
    p.add_argument("--data", default=None, help="dataset dir (default: runs/data_<preset>)")
    p.add_argument("--iterations", type=int, default=10000)
    p.add_argument("--methods", default="full,identity")
    p.add_argument("--every", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    args = p.parse_args()

    torch.set_num_threads(1)
    data = Path(args.data or f"runs/data_{args.preset}")
    if not (data / "transforms_train.json").exists():
        synth_dataset(DatasetSpec(preset=args.preset, seed=args.seed), data)
    ds = load_dataset(data)
    overrides = dict(kv.split("=", 1) for kv in args.set)
    for method in args.methods.split(","):
        cfg = apply_overrides(RunConfig(method=method, seed=args.seed, total_iterations=args.iterations), overrides)
        tr = Trainer(ds, cfg)
        start = time.perf_counter()
        for i in range(args.iterations):
            row = tr.step()
            if (i + 1) % args.every == 0 or i + 1 == args.iterations:
                m = held_out_metrics(tr.state.cloud.detach(), ds, cfg.background)
                print(f"{method:12s} it={i + 1:6d} psnr={m.psnr:6.2f} ssim={m.ssim:.4f} "
                      f"gaussians={tr.state.cloud.count:5d} l_total={row['l_total']:.4f} "
                      f"s/it={(time.perf_counter() - start) / (i + 1):.3f}", flush=True)


if __name__ == "__main__":
    main()
