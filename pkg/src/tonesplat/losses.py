"""Training objectives: mixed L1/DSSIM, spatial consistency, curve and TV terms."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch
import torch.nn.functional as F

from .scene import DTYPE
from .tonecurve import LUMA

SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2


@dataclass
class LossConfig:
    lambda_dssim: float = 0.2
    omega_before: float = 1.0
    omega_after: float = 0.1
    omega_switch: int = 3000
    curve_weight: float = 10.0
    prior_weight: float = 0.5
    ssim_window: int = 11
    ssim_sigma: float = 1.5
    spa_region: int = 4
    spa_mean_floor: float = 0.05

    def __post_init__(self):
        if not 0.0 <= self.lambda_dssim <= 1.0:
            raise ValueError("lambda_dssim must lie in [0, 1]")
        if self.omega_switch < 0:
            raise ValueError("omega_switch must be >= 0")


def _check_shapes(*images):
    shape = images[0].shape
    for im in images[1:]:
        if im.shape != shape:
            raise ValueError(f"shape mismatch: {tuple(shape)} vs {tuple(im.shape)}")


def ssim(pred: torch.Tensor, target: torch.Tensor, window: int = 11, sigma: float = 1.5) -> torch.Tensor:
    """Mean SSIM of two (H, W, C) images, Gaussian window, zero padding."""
    _check_shapes(pred, target)
    c = pred.shape[2]
    x = pred.permute(2, 0, 1)
    y = target.permute(2, 0, 1)
    stack = torch.cat([x, y, x * x, y * y, x * y])[None]
    g = torch.exp(-((torch.arange(window, dtype=pred.dtype) - (window - 1) / 2) ** 2) / (2 * sigma**2))
    g = g / g.sum()
    n = stack.shape[1]
    # separable Gaussian filter, all five moment maps in one grouped conv per axis
    stack = F.conv2d(stack, g.expand(n, 1, 1, window), padding=(0, window // 2), groups=n)
    stack = F.conv2d(stack, g.reshape(window, 1).expand(n, 1, window, 1), padding=(window // 2, 0), groups=n)
    mu_x, mu_y, exx, eyy, exy = stack[0].split(c)
    sxx = exx - mu_x**2
    syy = eyy - mu_y**2
    sxy = exy - mu_x * mu_y
    num = (2 * mu_x * mu_y + SSIM_C1) * (2 * sxy + SSIM_C2)
    den = (mu_x**2 + mu_y**2 + SSIM_C1) * (sxx + syy + SSIM_C2)
    return (num / den).mean()


def l1(pred, target) -> torch.Tensor:
    return (pred - target).abs().mean()


def l_3dgs(pred, target, cfg: LossConfig = LossConfig()) -> torch.Tensor:
    _check_shapes(pred, target)
    dssim = (1.0 - ssim(pred, target, cfg.ssim_window, cfg.ssim_sigma)) / 2.0
    return cfg.lambda_dssim * dssim + (1.0 - cfg.lambda_dssim) * l1(pred, target)


def l_reg(pred_in, target_in, pred_out, target_out, cfg: LossConfig = LossConfig()) -> torch.Tensor:
    _check_shapes(pred_in, target_in, pred_out, target_out)
    return l_3dgs(pred_in, target_in, cfg) + l_3dgs(pred_out, target_out, cfg)


def _luma(image):
    return image[..., 0] * LUMA[0] + image[..., 1] * LUMA[1] + image[..., 2] * LUMA[2]


def l_spa(pred_out, input_image, cfg: LossConfig = LossConfig()) -> torch.Tensor:
    """Neighbor-difference consistency between pooled regions.

    The input's neighbor differences are rescaled by ``0.5 / mean(input)`` so
    the rendered image is asked to carry the contrast of a mid-gray exposure.
    """
    _check_shapes(pred_out, input_image)
    r = cfg.spa_region
    h, w = pred_out.shape[:2]
    if h < r or w < r:
        raise ValueError(f"image smaller than {r}x{r} region")
    y_in = _luma(input_image)
    coef = 0.5 / max(float(y_in.detach().mean()), cfg.spa_mean_floor)
    pool_p = F.avg_pool2d(_luma(pred_out)[None, None], r)[0, 0]
    pool_i = F.avg_pool2d(y_in[None, None], r)[0, 0]
    k = pool_p.numel()

    total = torch.zeros((), dtype=pred_out.dtype)
    for axis in (0, 1):
        dp = torch.diff(pool_p, dim=axis).abs()
        di = torch.diff(pool_i, dim=axis).abs()
        # each unordered neighbor pair appears in both regions' neighborhoods
        total = total + 2.0 * ((dp - coef * di) ** 2).sum()
    return total / k


def omega(iteration: int, cfg: LossConfig = LossConfig()) -> float:
    return cfg.omega_before if iteration < cfg.omega_switch else cfg.omega_after


def l_curve(curve, target_cdf, prior, iteration: int, cfg: LossConfig = LossConfig()) -> torch.Tensor:
    value_term = ((curve - target_cdf) ** 2).mean()
    shape_term = ((curve - prior) ** 2).mean()
    return omega(iteration, cfg) * value_term + cfg.prior_weight * shape_term


def l_tv(curve) -> torch.Tensor:
    return (torch.diff(curve) ** 2).sum() / 255.0


@dataclass
class LossReport:
    l_reg: float
    l_spa: float
    l_curve: float
    l_tv: float
    l_total: float
    grad_norms: dict = field(default_factory=dict)
    total_tensor: torch.Tensor | None = field(default=None, repr=False, compare=False)

    def row(self) -> dict:
        out = {"l_reg": self.l_reg, "l_spa": self.l_spa, "l_curve": self.l_curve,
               "l_tv": self.l_tv, "l_total": self.l_total}
        out.update({f"grad_{k}": v for k, v in self.grad_norms.items()})
        return out


def l_total(reg, spa, curve, tv, cfg: LossConfig = LossConfig()) -> LossReport:
    def t(x):
        return x if isinstance(x, torch.Tensor) else torch.tensor(float(x), dtype=DTYPE)

    reg, spa, curve, tv = t(reg), t(spa), t(curve), t(tv)
    total = reg + spa + tv + cfg.curve_weight * curve
    report = LossReport(
        l_reg=reg.item(), l_spa=spa.item(), l_curve=curve.item(), l_tv=tv.item(),
        l_total=total.item(), total_tensor=total,
    )
    if not all(math.isfinite(v) for v in (report.l_reg, report.l_spa, report.l_curve, report.l_tv)):
        raise FloatingPointError(f"non-finite loss component: {report}")
    return report
