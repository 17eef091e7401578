"""Adam over named parameter groups, with decoupled decay toward anchors.

Also hosts the finite-difference gradient auditor used to validate every
analytic gradient path in the package.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import torch

log = logging.getLogger(__name__)

GROUP_NAMES = (
    "gaussian_geometry",
    "gaussian_color",
    "color_adjust_ab",
    "view_matrices",
    "global_curve",
    "generator_weights",
)


class NonFiniteGradientError(FloatingPointError):
    def __init__(self, group: str, param: str):
        super().__init__(f"non-finite gradient in group {group!r} (parameter {param!r})")
        self.group = group
        self.param = param


@dataclass
class OptimConfig:
    position_lr: float = 1.6e-4  # multiplied by the scene extent
    scale_lr: float = 5e-3
    rotation_lr: float = 1e-3
    opacity_lr: float = 5e-2
    color_lr: float = 2.5e-3
    color_adjust_lr: float = 2.5e-3
    matrix_lr: float = 2.5e-4
    matrix_decay: float = 1e-5
    curve_lr: float = 1e-3
    curve_decay: float = 1e-4
    generator_lr: float = 1e-5
    generator_decay: float = 1e-5


@dataclass
class ParamGroup:
    name: str
    params: dict[str, torch.Tensor]
    lr: float
    weight_decay: float = 0.0
    decay_anchor: Optional[dict[str, torch.Tensor]] = None
    param_lr: dict[str, float] = field(default_factory=dict)
    post_step: Optional[Callable[[dict, dict], None]] = None
    frozen: bool = False

    def __post_init__(self):
        if self.lr <= 0 or any(v <= 0 for v in self.param_lr.values()):
            raise ValueError(f"group {self.name}: learning rates must be positive")
        if self.weight_decay < 0:
            raise ValueError(f"group {self.name}: weight decay must be >= 0")

    def lr_for(self, key: str) -> float:
        return self.param_lr.get(key, self.lr)


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    exp_avg: dict[str, torch.Tensor] = field(default_factory=dict)
    exp_avg_sq: dict[str, torch.Tensor] = field(default_factory=dict)

    @staticmethod
    def key(group: str, param: str) -> str:
        return f"{group}/{param}"


def adam_step(groups: list[ParamGroup], grads: dict[str, dict[str, torch.Tensor]], state: AdamState) -> None:
    """One in-place Adam update of every non-frozen group.

    ``grads[group][param]`` holds the gradient; parameters without an entry
    are skipped entirely (no moment update, no decay).
    All gradients are validated before anything is modified.
    """
    active = [g for g in groups if not g.frozen]
    for g in active:
        for k, p in g.params.items():
            gr = grads.get(g.name, {}).get(k)
            if gr is not None and not bool(torch.isfinite(gr).all()):
                log.error("non-finite gradient in %s/%s", g.name, k)
                raise NonFiniteGradientError(g.name, k)

    state.step += 1
    bc1 = 1.0 - state.beta1**state.step
    bc2 = 1.0 - state.beta2**state.step
    with torch.no_grad():
        for g in active:
            before = {k: p.detach().clone() for k, p in g.params.items()} if g.post_step else {}
            for k, p in g.params.items():
                gr = grads.get(g.name, {}).get(k)
                if gr is None:
                    continue  # untouched this step (e.g. another view's matrix)
                sk = AdamState.key(g.name, k)
                m = state.exp_avg.setdefault(sk, torch.zeros_like(p))
                v = state.exp_avg_sq.setdefault(sk, torch.zeros_like(p))
                m.mul_(state.beta1).add_(gr, alpha=1 - state.beta1)
                v.mul_(state.beta2).addcmul_(gr, gr, value=1 - state.beta2)
                lr = g.lr_for(k)
                if g.weight_decay:
                    anchor = g.decay_anchor.get(k) if g.decay_anchor else None
                    delta = p - anchor if anchor is not None else p.clone()
                    p.sub_(lr * g.weight_decay * delta)
                p.sub_(lr * (m / bc1) / ((v / bc2).sqrt() + state.eps))
            if g.post_step:
                g.post_step(g.params, before)


def remap_state(state: AdamState, group: str, param: str, index: torch.Tensor) -> None:
    """Reindex moments of a row-structured parameter after prune/clone.

    Rows gathered from ``index``; entries of -1 become fresh zero moments.
    """
    sk = AdamState.key(group, param)
    for store in (state.exp_avg, state.exp_avg_sq):
        if sk not in store:
            continue
        old = store[sk]
        safe = index.clamp_min(0)
        new = old[safe].clone()
        new[index < 0] = 0.0
        store[sk] = new


@dataclass
class AuditEntry:
    group: str
    param: str
    index: tuple
    analytic: float
    numeric: float
    error: float


@dataclass
class AuditReport:
    entries: list[AuditEntry]
    tolerance: float
    floor: float

    @property
    def max_error(self) -> float:
        return max((e.error for e in self.entries), default=0.0)

    @property
    def worst(self) -> Optional[AuditEntry]:
        return max(self.entries, key=lambda e: e.error, default=None)

    @property
    def passed(self) -> bool:
        return self.max_error <= self.tolerance

    @property
    def groups(self) -> set[str]:
        return {e.group for e in self.entries}

    def failures(self) -> list[AuditEntry]:
        return [e for e in self.entries if e.error > self.tolerance]

    def __str__(self) -> str:
        w = self.worst
        status = "PASS" if self.passed else "FAIL"
        where = f" worst {w.group}/{w.param}{list(w.index)}" if w else ""
        return f"grad audit {status}: {len(self.entries)} samples, max rel err {self.max_error:.3g}{where}"


def audit_error(analytic: float, numeric: float, tol: float, floor: float) -> float:
    """Relative error with an absolute floor: <= tol iff |a-n| <= max(tol*scale, floor)."""
    scale = max(abs(analytic), abs(numeric), floor / tol)
    return abs(analytic - numeric) / scale


def grad_audit(
    loss_fn: Callable[[], torch.Tensor],
    groups: dict[str, dict[str, torch.Tensor]],
    sample_count: int,
    seed: int,
    step: float = 1e-4,
    tolerance: float = 1e-3,
    floor: float = 1e-5,
    gradient_fn: Optional[Callable[[], dict[str, dict[str, torch.Tensor]]]] = None,
) -> AuditReport:
    """Compare analytic gradients of ``loss_fn`` to central differences.

    ``groups`` maps group name -> {param name: leaf tensor}. Samples are spread
    round-robin over the groups so each group is visited. ``gradient_fn`` can
    override the analytic side (defaults to autograd on ``loss_fn``).
    """
    if gradient_fn is None:
        flat = [(g, k, t) for g, ps in groups.items() for k, t in ps.items()]
        for _, _, t in flat:
            t.requires_grad_(True)
        loss = loss_fn()
        gs = torch.autograd.grad(loss, [t for _, _, t in flat], allow_unused=True)
        analytic = {}
        for (g, k, t), gr in zip(flat, gs):
            analytic.setdefault(g, {})[k] = gr.detach() if gr is not None else torch.zeros_like(t)
    else:
        analytic = gradient_fn()

    rng = np.random.default_rng(seed)
    names = [g for g in groups if groups[g]]
    entries = []
    for i in range(sample_count):
        g = names[i % len(names)]
        keys = list(groups[g])
        sizes = np.array([groups[g][k].numel() for k in keys], dtype=np.float64)
        k = keys[rng.choice(len(keys), p=sizes / sizes.sum())]
        t = groups[g][k]
        flat_idx = int(rng.integers(t.numel()))
        idx = tuple(int(v) for v in np.unravel_index(flat_idx, tuple(t.shape)))
        with torch.no_grad():
            orig = t[idx].item()
            t[idx] = orig + step
            plus = float(loss_fn())
            t[idx] = orig - step
            minus = float(loss_fn())
            t[idx] = orig
        numeric = (plus - minus) / (2 * step)
        a = float(analytic[g][k][idx])
        entries.append(AuditEntry(g, k, idx, a, numeric, audit_error(a, numeric, tolerance, floor)))
    return AuditReport(entries, tolerance, floor)
