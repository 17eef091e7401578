"""Distance of the learned curves from the identity ramp on undegraded data.

    python scripts/curve_drift.py --iterations 4500 --every 100

Trains the full method on a small dataset whose training views equal the
normal-light renders (unit exposure and gamma) and prints the mean absolute
deviation of the global curve and of the worst per-view composed curve.
"""

import argparse
import tempfile

import torch

from tonesplat import generators as gen
from tonesplat.pipeline.config import RunConfig
from tonesplat.pipeline.data import load_dataset
from tonesplat.pipeline.synth import DatasetSpec, synth_dataset
from tonesplat.pipeline.train import Trainer
from tonesplat.tonecurve import compose, identity_ramp


def main():
    p = argparse.ArgumentParser()
    p.add_argument("--iterations", type=int, default=4500)
    p.add_argument("--every", type=int, default=100)
    p.add_argument("--views", type=int, default=4)
    p.add_argument("--size", type=int, default=16)
    args = p.parse_args()

    torch.set_num_threads(1)
    root = tempfile.mkdtemp(prefix="unit_degradation_")
    synth_dataset(DatasetSpec(views=args.views, test_views=1, width=args.size, height=args.size,
                              gt_gaussians=120, seed=5, degradation=[(1.0, 1.0)] * args.views), root)
    ds = load_dataset(root)
    tr = Trainer(ds, RunConfig(total_iterations=args.iterations))
    ramp = identity_ramp()
    for i in range(args.iterations):
        tr.step()
        if (i + 1) % args.every == 0:
            with torch.no_grad():
                g = tr.state.global_curve.detach()
                per_view = [
                    float((compose(g, gen.gen_curve_bias(v.input_image, v.camera, tr.state.curve_gen).curve_bias)
                           - ramp).abs().mean())
                    for v in ds.train
                ]
            print(f"it={i + 1:6d} global={float((g - ramp).abs().mean()):.4f} worst_view={max(per_view):.4f}",
                  flush=True)


if __name__ == "__main__":
    main()
