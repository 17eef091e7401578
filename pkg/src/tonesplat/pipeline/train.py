"""Joint optimization of the Gaussian scene and the per-view enhancement path."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from .. import generators as gen
from .. import losses
from ..checkpoint import read_arrays, write_arrays
from ..colorspace import DET_GUARD, identity_matrix
from ..optim import AdamState, ParamGroup, adam_step, remap_state
from ..refine import GradAccumulator, refine_step
from ..scene import CLOUD_FIELDS, DTYPE, GaussianCloud, new_cloud_from_points, new_cloud_random, renormalize_quaternions
from ..splat_renderer import project, render
from ..tonecurve import compose, enhance, he_cdf_target, identity_ramp, prior_curve
from .config import RunConfig, apply_overrides
from .data import Dataset

log = logging.getLogger(__name__)

GEOMETRY = ("positions", "log_scales", "rotations", "opacity_logits")


class NumericFailure(FloatingPointError):
    pass


def _renorm_hook(params, before):
    renormalize_quaternions(params["rotations"])


def _det_guard_hook(params, before):
    for k, m in params.items():
        if abs(float(torch.linalg.det(m))) < DET_GUARD:
            log.warning("rolling back %s: determinant below guard", k)
            m.copy_(before[k])


@dataclass
class TrainState:
    cloud: GaussianCloud
    matrices: list[torch.Tensor]
    global_curve: torch.Tensor
    curve_gen: gen.GeneratorWeights
    param_gen: gen.GeneratorWeights
    adam: AdamState
    accum: GradAccumulator
    iteration: int = 0

    def leaves(self) -> list[torch.Tensor]:
        return (list(self.cloud.parameters().values()) + self.matrices + [self.global_curve]
                + list(self.curve_gen.tensors().values()) + list(self.param_gen.tensors().values()))


class Trainer:
    def __init__(self, dataset: Dataset, cfg: RunConfig, state: Optional[TrainState] = None):
        if len(dataset.train) < 2:
            raise ValueError("training needs at least two views")
        self.data = dataset
        self.cfg = cfg
        self.flags = cfg.flags
        self.extent = dataset.extent
        self.cdf_targets = [he_cdf_target(v.input_image) for v in dataset.train]
        self.state = state or self._fresh_state()
        for t in self.state.leaves():
            t.requires_grad_(True)

    def _fresh_state(self) -> TrainState:
        cfg = self.cfg
        if self.data.points is not None and cfg.init_from_points:
            cloud = new_cloud_from_points(self.data.points, cfg.seed)
        else:
            cloud = new_cloud_random(cfg.init_gaussians, self.data.bounds, cfg.seed)
        return TrainState(
            cloud=cloud,
            matrices=[identity_matrix() for _ in self.data.train],
            global_curve=identity_ramp().clone(),
            curve_gen=gen.init_weights("curve", seed=cfg.seed + 101),
            param_gen=gen.init_weights("params", seed=cfg.seed + 202),
            adam=AdamState(),
            accum=GradAccumulator(cloud.count),
        )

    # -- parameter groups -------------------------------------------------

    def groups(self) -> list[ParamGroup]:
        o, s, f = self.cfg.optim, self.state, self.flags
        c = s.cloud
        groups = [
            ParamGroup(
                "gaussian_geometry",
                {k: getattr(c, k) for k in GEOMETRY},
                lr=o.scale_lr,
                param_lr={
                    "positions": o.position_lr * self.extent,
                    "rotations": o.rotation_lr,
                    "opacity_logits": o.opacity_lr,
                },
                post_step=_renorm_hook,
            ),
            ParamGroup("gaussian_color", {"color_logits": c.color_logits}, lr=o.color_lr),
            ParamGroup(
                "color_adjust_ab",
                {"color_gains": c.color_gains, "color_offsets": c.color_offsets},
                lr=o.color_adjust_lr,
            ),
            ParamGroup(
                "view_matrices",
                {f"m{k}": m for k, m in enumerate(s.matrices)},
                lr=o.matrix_lr,
                weight_decay=o.matrix_decay,
                decay_anchor={f"m{k}": identity_matrix() for k in range(len(s.matrices))},
                post_step=_det_guard_hook,
                frozen=not (f["enhance"] and f["use_color_matrix"]),
            ),
            ParamGroup(
                "global_curve",
                {"values": s.global_curve},
                lr=o.curve_lr,
                weight_decay=o.curve_decay,
                decay_anchor={"values": identity_ramp()},
                frozen=not (f["enhance"] and f["use_global_curve"]),
            ),
        ]
        gparams = {}
        if f["enhance"]:
            if f["use_curve_bias"]:
                gparams.update({f"curve.{k}": v for k, v in s.curve_gen.tensors().items()})
            gparams.update({f"params.{k}": v for k, v in s.param_gen.tensors().items()})
        groups.append(ParamGroup(
            "generator_weights", gparams, lr=o.generator_lr,
            weight_decay=o.generator_decay, frozen=not gparams,
        ))
        return groups

    # -- one iteration ----------------------------------------------------

    def forward(self, k: int, iteration: int) -> dict:
        """Everything one iteration computes for view ``k`` (graph attached)."""
        s, f, lc = self.state, self.flags, self.cfg.loss
        view = self.data.train[k]
        c_in = view.input_image
        out = render(project(s.cloud, view.camera), view.camera, self.cfg.background)
        result = {"render": out}
        if not f["enhance"]:
            reg = losses.l_reg(out.image_in, c_in, out.image_out, c_in, lc)
            zero = torch.zeros((), dtype=DTYPE)
            result.update(c_out=c_in, curve=None, report=losses.l_total(reg, zero, zero, zero, lc))
            return result

        bias = gen.gen_curve_bias(c_in, view.camera, s.curve_gen).curve_bias if f["use_curve_bias"] else None
        prior = gen.gen_prior_params(c_in, view.camera, s.param_gen).prior
        curve = compose(s.global_curve, bias)
        matrix = s.matrices[k] if f["use_color_matrix"] else identity_matrix()
        c_out = enhance(c_in, matrix, curve)
        prior_vals = prior_curve(prior.gamma, prior.pivot, prior.exponent, self.cfg.compose_prior)

        reg = losses.l_reg(out.image_in, c_in, out.image_out, c_out, lc)
        spa = losses.l_spa(out.image_out, c_in, lc)
        lcurve = losses.l_curve(curve, self.cdf_targets[k], prior_vals, iteration, lc)
        tv = losses.l_tv(curve)
        view.cached_bias = bias.detach().clone() if bias is not None else torch.zeros(256, dtype=DTYPE)
        view.cached_prior = prior.as_tuple()
        result.update(c_out=c_out, curve=curve, prior=prior_vals, report=losses.l_total(reg, spa, lcurve, tv, lc))
        return result

    def step(self) -> dict:
        s, cfg = self.state, self.cfg
        it = s.iteration
        row = {"iteration": it, "pruned": 0, "cloned": 0}
        if cfg.refine.due(it):
            row.update(self._refine(it))
        k = it % len(self.data.train)
        res = self.forward(k, it)
        report = res["report"]
        if not math.isfinite(report.l_total):
            raise NumericFailure(f"non-finite loss at iteration {it}")

        groups = self.groups()
        for t in s.leaves():
            t.grad = None
        report.total_tensor.backward()
        grads = {}
        for g in groups:
            if g.frozen:
                continue
            gg = {}
            for name, p in g.params.items():
                if p.grad is None:
                    continue
                gg[name] = p.grad.detach()
            grads[g.name] = gg
            report.grad_norms[g.name] = float(torch.sqrt(sum((x**2).sum() for x in gg.values()))) if gg else 0.0
        s.accum.add(s.cloud.positions.grad)
        adam_step(groups, grads, s.adam)
        s.iteration += 1
        row.update(view=k, gaussians=s.cloud.count, **report.row())
        return row

    def _refine(self, it: int) -> dict:
        s = self.state
        res = refine_step(s.cloud, s.accum, self.cfg.refine, it, seed=self.cfg.seed)
        s.cloud = res.cloud.requires_grad_(True)
        index = res.moment_index()
        for group, names in (("gaussian_geometry", GEOMETRY), ("gaussian_color", ("color_logits",)),
                             ("color_adjust_ab", ("color_gains", "color_offsets"))):
            for name in names:
                remap_state(s.adam, group, name, index)
        return {"pruned": res.pruned, "cloned": res.cloned}

    # -- checkpoints ------------------------------------------------------

    def checkpoint_arrays(self) -> dict[str, np.ndarray]:
        s = self.state
        arrays = {k: v.detach().numpy() for k, v in s.cloud.parameters().items()}
        arrays["view_matrices"] = torch.stack([m.detach() for m in s.matrices]).numpy()
        arrays["global_curve"] = s.global_curve.detach().numpy()
        for prefix, w in (("gen_curve", s.curve_gen), ("gen_params", s.param_gen)):
            arrays.update({f"{prefix}.{k}": v.detach().numpy() for k, v in w.tensors().items()})
        for key in sorted(s.adam.exp_avg):
            arrays[f"adam.m.{key}"] = s.adam.exp_avg[key].numpy()
            arrays[f"adam.v.{key}"] = s.adam.exp_avg_sq[key].numpy()
        arrays["adam.step"] = np.array([s.adam.step], dtype=np.int64)
        arrays["iteration"] = np.array([s.iteration], dtype=np.int64)
        arrays["accum.total"] = s.accum.total.numpy()
        arrays["accum.hits"] = s.accum.hits.numpy()
        arrays["config"] = np.frombuffer(json.dumps(_config_pairs(self.cfg)).encode(), dtype=np.uint8)
        return arrays

    def save(self, path) -> None:
        write_arrays(path, self.checkpoint_arrays())


def _config_pairs(cfg: RunConfig) -> dict[str, str]:
    from .config import dump_config, parse_config_text

    return parse_config_text(dump_config(cfg))


def cloud_from_arrays(arrays: dict) -> GaussianCloud:
    return GaussianCloud(**{k: torch.as_tensor(arrays[k], dtype=DTYPE) for k in CLOUD_FIELDS})


def load_state(arrays: dict) -> TrainState:
    def weights(prefix):
        names = [k[len(prefix) + 1:] for k in arrays if k.startswith(prefix + ".")]
        return gen.GeneratorWeights(**{n: torch.as_tensor(arrays[f"{prefix}.{n}"]) for n in names})

    adam = AdamState(step=int(arrays["adam.step"][0]))
    for k, v in arrays.items():
        if k.startswith("adam.m."):
            adam.exp_avg[k[7:]] = torch.as_tensor(v)
        elif k.startswith("adam.v."):
            adam.exp_avg_sq[k[7:]] = torch.as_tensor(v)
    cloud = cloud_from_arrays(arrays)
    accum = GradAccumulator(cloud.count)
    accum.total = torch.as_tensor(arrays["accum.total"])
    accum.hits = torch.as_tensor(arrays["accum.hits"])
    return TrainState(
        cloud=cloud,
        matrices=[torch.as_tensor(m) for m in arrays["view_matrices"]],
        global_curve=torch.as_tensor(arrays["global_curve"]),
        curve_gen=weights("gen_curve"),
        param_gen=weights("gen_params"),
        adam=adam,
        accum=accum,
        iteration=int(arrays["iteration"][0]),
    )


def config_from_arrays(arrays: dict) -> RunConfig:
    pairs = json.loads(bytes(arrays["config"]).decode())
    return apply_overrides(RunConfig(), pairs)


LOG_FIELDS = ["iteration", "view", "gaussians", "pruned", "cloned",
              "l_reg", "l_spa", "l_curve", "l_tv", "l_total"]


def _fmt(v):
    return repr(v) if isinstance(v, float) else str(v)


def train(
    dataset: Dataset,
    cfg: RunConfig,
    out_dir,
    resume: Optional[str] = None,
    stop_at: Optional[int] = None,
) -> Trainer:
    """Run (or resume) training, writing ``log.csv`` and checkpoints to ``out_dir``.

    ``stop_at`` ends the run early at that iteration (checkpoint written), which
    is how interrupted runs are simulated.
    """
    torch.set_num_threads(cfg.threads)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    state = None
    if resume:
        state = load_state(read_arrays(resume))
    trainer = Trainer(dataset, cfg, state)
    group_cols = [f"grad_{g.name}" for g in trainer.groups()]
    fields = LOG_FIELDS + group_cols
    log_path = out / "log.csv"
    mode = "a" if resume and log_path.exists() else "w"
    if mode == "a":
        _truncate_log(log_path, trainer.state.iteration)
    end = cfg.total_iterations if stop_at is None else min(stop_at, cfg.total_iterations)
    with open(log_path, mode, newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields, extrasaction="ignore", lineterminator="\n")
        if mode == "w":
            writer.writeheader()
        while trainer.state.iteration < end:
            try:
                row = trainer.step()
            except (NumericFailure, FloatingPointError) as exc:
                fh.flush()
                raise NumericFailure(str(exc)) from exc
            writer.writerow({k: _fmt(row.get(k, 0.0)) for k in fields})
            done = trainer.state.iteration
            if done % cfg.checkpoint_every == 0 or done == end:
                fh.flush()
                trainer.save(out / f"ckpt_{done:05d}.bin")
                trainer.save(out / "final.bin" if done == cfg.total_iterations else out / "last.bin")
    return trainer


def _truncate_log(path: Path, iteration: int) -> None:
    lines = path.read_text().splitlines(keepends=True)
    kept = [lines[0]] + [ln for ln in lines[1:] if int(ln.split(",", 1)[0]) < iteration]
    path.write_text("".join(kept))
