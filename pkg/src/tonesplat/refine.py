"""Simplified density control: prune transparent Gaussians, clone busy ones.

Stands in for full 3DGS densification (no split-by-scale, no opacity reset).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

from .scene import DTYPE, GaussianCloud


@dataclass
class RefineConfig:
    interval: int = 500
    stop_iteration: int = 8000
    prune_opacity: float = 0.005
    clone_percentile: float = 95.0  # clone Gaussians at/above this gradient percentile
    clone_min_grad: float = 0.0
    max_gaussians: int = 2000
    jitter: float = 0.25  # clone offset, in units of the parent's mean std-dev

    def __post_init__(self):
        if self.interval < 1 or self.prune_opacity <= 0 or self.max_gaussians < 1:
            raise ValueError("refine thresholds must be positive")
        if not 0.0 < self.clone_percentile < 100.0:
            raise ValueError("clone_percentile must lie in (0, 100)")

    def due(self, iteration: int) -> bool:
        return 0 < iteration < self.stop_iteration and iteration % self.interval == 0


class GradAccumulator:
    """Running sum of per-Gaussian positional gradient norms."""

    def __init__(self, count: int):
        self.total = torch.zeros(count, dtype=DTYPE)
        self.hits = torch.zeros(count, dtype=DTYPE)

    def add(self, position_grad: torch.Tensor) -> None:
        norm = torch.linalg.norm(position_grad.detach(), dim=-1)
        self.total += norm
        self.hits += (norm > 0).to(DTYPE)

    def average(self) -> torch.Tensor:
        return self.total / self.hits.clamp_min(1.0)

    def reset(self, count: int) -> None:
        self.total = torch.zeros(count, dtype=DTYPE)
        self.hits = torch.zeros(count, dtype=DTYPE)


@dataclass
class RefineResult:
    cloud: GaussianCloud
    source_rows: torch.Tensor  # row of the old cloud each new row came from
    is_clone: torch.Tensor  # bool; clones get fresh optimizer moments
    pruned: int
    cloned: int

    def moment_index(self) -> torch.Tensor:
        return torch.where(self.is_clone, torch.full_like(self.source_rows, -1), self.source_rows)


def refine_step(
    cloud: GaussianCloud,
    accum: GradAccumulator,
    cfg: RefineConfig,
    iteration: int,
    seed: int = 0,
) -> RefineResult:
    if not cfg.due(iteration):
        raise ValueError(f"refinement not scheduled at iteration {iteration}")
    opac = cloud.opacities.detach()
    keep = opac >= cfg.prune_opacity
    if not bool(keep.any()):
        keep[int(torch.argmax(opac))] = True
    kept = torch.nonzero(keep).flatten()
    pruned = cloud.count - len(kept)

    avg = accum.average()[kept]
    room = max(cfg.max_gaussians - len(kept), 0)
    parents = torch.empty(0, dtype=torch.long)
    if room and bool((avg > 0).any()):
        thresh = float(np.percentile(avg.numpy(), cfg.clone_percentile))
        hot = torch.nonzero((avg >= thresh) & (avg > cfg.clone_min_grad) & (avg > 0)).flatten()
        # strongest first, deterministic tie-break by row
        order = np.lexsort((hot.numpy(), -avg[hot].numpy()))
        parents = kept[hot[torch.as_tensor(order, dtype=torch.long)][:room]]

    rows = torch.cat([kept, parents])
    new = cloud.select(rows)
    if len(parents):
        rng = np.random.default_rng([seed, iteration])
        n0 = len(kept)
        std = torch.exp(new.log_scales[n0:]).mean(dim=1, keepdim=True)
        noise = torch.as_tensor(rng.standard_normal((len(parents), 3)), dtype=DTYPE)
        new.positions[n0:] += cfg.jitter * std * noise
        new.log_scales[n0:] -= math.log(2.0)
    is_clone = torch.zeros(len(rows), dtype=torch.bool)
    is_clone[len(kept):] = True
    accum.reset(new.count)
    return RefineResult(new, rows, is_clone, pruned, len(parents))
