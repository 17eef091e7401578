"""256-entry tone curves: LUT application, parametric priors, HE targets.

A curve is a length-256 tensor whose entry ``i`` is the output for input
intensity ``i / 255``. The per-view curve is the shared global curve plus a
per-view bias; it is applied to the color-matrix-mapped image and the result
is mapped back with the inverse matrix.
"""

from __future__ import annotations

import numpy as np
import torch

from . import instrument
from .colorspace import map_forward, map_inverse
from .scene import DTYPE, ViewRecord

LUT_SIZE = 256
POWER_EPS = 1e-4
CURVE_CLAMP = (0.0, 1.5)
LUMA = (0.299, 0.587, 0.114)


def intensity_grid() -> torch.Tensor:
    return torch.arange(LUT_SIZE, dtype=DTYPE) / (LUT_SIZE - 1)


def identity_ramp() -> torch.Tensor:
    return intensity_grid()


def compose(global_curve: torch.Tensor, bias: torch.Tensor | None) -> torch.Tensor:
    return global_curve if bias is None else global_curve + bias


def apply_curve(image: torch.Tensor, curve: torch.Tensor, clamp_curve: bool = True) -> torch.Tensor:
    """Look up every channel value in the LUT with linear interpolation.

    Inputs are clamped to [0, 1] (zero gradient outside); curve values are
    clamped to ``CURVE_CLAMP`` unless ``clamp_curve`` is off.
    """
    instrument.hit("curve")
    if clamp_curve:
        curve = curve.clamp(*CURVE_CLAMP)
    t = image.clamp(0.0, 1.0) * (LUT_SIZE - 1)
    lo = torch.floor(t).clamp(max=LUT_SIZE - 2)
    frac = t - lo
    idx = lo.long()
    return curve[idx] * (1.0 - frac) + curve[idx + 1] * frac


def _pow(base: torch.Tensor, exponent) -> torch.Tensor:
    # 0 ** B with a differentiable B: keep log(base) finite on the masked side
    positive = base > 0
    return torch.where(positive, base.clamp_min(1e-300) ** exponent, torch.zeros_like(base))


def eval_power(gamma, x: torch.Tensor | None = None) -> torch.Tensor:
    instrument.hit("curve")
    x = intensity_grid() if x is None else x
    return (x + POWER_EPS) ** torch.as_tensor(gamma, dtype=DTYPE)


def eval_scurve(pivot, exponent, x: torch.Tensor | None = None) -> torch.Tensor:
    instrument.hit("curve")
    x = intensity_grid() if x is None else x
    a = torch.as_tensor(pivot, dtype=DTYPE)
    b = torch.as_tensor(exponent, dtype=DTYPE)
    low = a - a * _pow((1.0 - x / a).clamp_min(0.0), b)
    high = a + (1.0 - a) * _pow(((x - a) / (1.0 - a)).clamp_min(0.0), b)
    return torch.where(x <= a, low, high)


def prior_curve(gamma, pivot, exponent, compose_curves: bool = False) -> torch.Tensor:
    """Shape prior: power curve times S-curve (or power of S-curve)."""
    s = eval_scurve(pivot, exponent)
    if compose_curves:
        return eval_power(gamma, s)
    return eval_power(gamma) * s


def luminance(image) -> np.ndarray | torch.Tensor:
    return image[..., 0] * LUMA[0] + image[..., 1] * LUMA[1] + image[..., 2] * LUMA[2]


def he_cdf_target(image) -> torch.Tensor:
    """Normalized cumulative luminance histogram (the HE transfer function)."""
    img = np.asarray(image.detach() if isinstance(image, torch.Tensor) else image, dtype=np.float64)
    if img.size == 0 or img.ndim != 3 or img.shape[2] != 3:
        raise ValueError("he_cdf_target needs a non-empty HxWx3 image")
    y = luminance(np.clip(img, 0.0, 1.0))
    bins = np.clip(np.floor(y * (LUT_SIZE - 1) + 0.5), 0, LUT_SIZE - 1).astype(np.int64)
    hist = np.bincount(bins.ravel(), minlength=LUT_SIZE)
    cdf = np.cumsum(hist) / bins.size
    return torch.as_tensor(cdf, dtype=DTYPE)


def enhance(image: torch.Tensor, matrix: torch.Tensor, curve: torch.Tensor, clamp_curve: bool = True) -> torch.Tensor:
    """Matrix-map, apply the curve, map back."""
    return map_inverse(apply_curve(map_forward(image, matrix), curve, clamp_curve), matrix)


def enhance_view(view: ViewRecord, curve: torch.Tensor) -> torch.Tensor:
    return enhance(view.input_image, view.color_matrix, curve)


def write_curve_table(path, curve) -> None:
    values = np.asarray(torch.as_tensor(curve).detach(), dtype=np.float64)
    with open(path, "w") as fh:
        for i, v in enumerate(values):
            fh.write(f"{i} {v:.9g}\n")
