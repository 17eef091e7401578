"""Differentiable splatting: EWA projection and front-to-back compositing.

Both the input-color image and the enhanced-color image are accumulated in
one pass over identical opacities. Pixel/Gaussian interactions are kept as a
sparse pair list (pixel-major, depth order within a pixel) so per-pixel
transmittance becomes a segmented cumulative sum of ``log(1 - alpha)``.
Gradients come from torch autograd over that graph.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import torch

from .scene import DTYPE, Camera, GaussianCloud, transformed_colors

NEAR_PLANE = 0.01
BLUR_FLOOR = 0.3  # px^2 added to the projected covariance diagonal
SIGMA_CUTOFF = 3.0
MIN_TRANSMITTANCE = 1e-4


class RenderError(RuntimeError):
    pass


@dataclass
class ProjectedGaussians:
    """Screen-space splats; one row per surviving Gaussian."""

    mean2d: torch.Tensor  # (M, 2) pixels
    cov2d: torch.Tensor  # (M, 2, 2) pixels^2
    depth: torch.Tensor  # (M,)
    color: torch.Tensor  # (M, 3)
    color_out: torch.Tensor  # (M, 3)
    opacity: torch.Tensor  # (M,)
    source_index: np.ndarray  # (M,) row in the source cloud
    leaves: Optional[dict] = None  # cloud parameters the tensors depend on

    def __len__(self) -> int:
        return int(self.source_index.shape[0])

    def __getitem__(self, idx) -> "ProjectedGaussians":
        idx = np.asarray(idx)
        t = torch.as_tensor(idx, dtype=torch.long)
        return ProjectedGaussians(
            self.mean2d[t], self.cov2d[t], self.depth[t], self.color[t],
            self.color_out[t], self.opacity[t], self.source_index[idx], self.leaves,
        )


@dataclass
class RenderOutput:
    image_in: torch.Tensor  # (H, W, 3)
    image_out: torch.Tensor  # (H, W, 3)
    depth_map: torch.Tensor  # (H, W)
    final_transmittance: torch.Tensor  # (H, W)
    # contributor lists: pair i touches pixel pair_pixel[i] (row-major) with
    # splat pair_splat[i] (index into the depth-sorted projected list)
    pair_pixel: np.ndarray
    pair_splat: np.ndarray
    pair_weight: torch.Tensor
    sorted_source_index: np.ndarray
    leaves: Optional[dict] = None


def project(cloud: GaussianCloud, camera: Camera, blur_floor: float = BLUR_FLOOR) -> ProjectedGaussians:
    rot = torch.as_tensor(camera.rotation, dtype=DTYPE)
    trans = torch.as_tensor(camera.translation, dtype=DTYPE)
    p_cam = cloud.positions @ rot.T + trans
    keep = np.nonzero(p_cam[:, 2].detach().numpy() > NEAR_PLANE)[0]
    kt = torch.as_tensor(keep, dtype=torch.long)

    p = p_cam[kt]
    x, y, z = p.unbind(-1)
    zeros = torch.zeros_like(z)
    jac = torch.stack(
        [
            torch.stack([camera.fx / z, zeros, -camera.fx * x / z**2], -1),
            torch.stack([zeros, camera.fy / z, -camera.fy * y / z**2], -1),
        ],
        dim=1,
    )
    cov3d = cloud.covariances()[kt]
    t = jac @ rot
    cov2d = t @ cov3d @ t.transpose(1, 2) + blur_floor * torch.eye(2, dtype=DTYPE)
    mean2d = torch.stack([camera.fx * x / z + camera.cx, camera.fy * y / z + camera.cy], -1)
    return ProjectedGaussians(
        mean2d=mean2d,
        cov2d=cov2d,
        depth=z,
        color=cloud.base_colors[kt],
        color_out=transformed_colors(cloud)[kt],
        opacity=cloud.opacities[kt],
        source_index=keep.astype(np.int64),
        leaves=cloud.parameters(),
    )


def _pairs(mean2d: np.ndarray, cov2d: np.ndarray, conic: np.ndarray, width: int, height: int):
    """Candidate (splat, pixel) pairs inside each splat's 3-sigma ellipse."""
    a, b, c = cov2d[:, 0, 0], cov2d[:, 0, 1], cov2d[:, 1, 1]
    mid = 0.5 * (a + c)
    lam = mid + np.sqrt(np.maximum(mid * mid - (a * c - b * b), 0.0))
    radius = SIGMA_CUTOFF * np.sqrt(lam)
    # pixel u has its center at u + 0.5
    x0 = np.clip(np.ceil(mean2d[:, 0] - radius - 0.5), 0, width).astype(np.int64)
    x1 = np.clip(np.floor(mean2d[:, 0] + radius - 0.5) + 1, 0, width).astype(np.int64)
    y0 = np.clip(np.ceil(mean2d[:, 1] - radius - 0.5), 0, height).astype(np.int64)
    y1 = np.clip(np.floor(mean2d[:, 1] + radius - 0.5) + 1, 0, height).astype(np.int64)
    wx = np.maximum(x1 - x0, 0)
    wy = np.maximum(y1 - y0, 0)
    counts = wx * wy
    total = int(counts.sum())
    splat = np.repeat(np.arange(len(counts)), counts)
    local = np.arange(total) - np.repeat(np.cumsum(counts) - counts, counts)
    ux = x0[splat] + local % np.maximum(wx[splat], 1)
    uy = y0[splat] + local // np.maximum(wx[splat], 1)
    dx = ux + 0.5 - mean2d[splat, 0]
    dy = uy + 0.5 - mean2d[splat, 1]
    q = conic[splat, 0] * dx * dx + 2 * conic[splat, 1] * dx * dy + conic[splat, 2] * dy * dy
    inside = q <= SIGMA_CUTOFF**2
    return splat[inside], (uy * width + ux)[inside]


def render(projected: ProjectedGaussians, camera: Camera, background=(0.0, 0.0, 0.0)) -> RenderOutput:
    h, w = camera.height, camera.width
    n_pix = h * w
    bg = torch.as_tensor(np.asarray(background, dtype=np.float64), dtype=DTYPE)

    depth_np = projected.depth.detach().numpy()
    order = np.lexsort((projected.source_index, depth_np))
    ot = torch.as_tensor(order, dtype=torch.long)
    mean2d, cov2d = projected.mean2d[ot], projected.cov2d[ot]
    a, b, c = cov2d[:, 0, 0], cov2d[:, 0, 1], cov2d[:, 1, 1]
    det = a * c - b * b
    det_np, a_np = det.detach().numpy(), a.detach().numpy()
    if np.any(det_np <= 0) or np.any(a_np <= 0):
        raise RenderError("projected covariance is not positive definite")
    conic = torch.stack([c / det, -b / det, a / det], -1)

    splat, pixel = _pairs(
        mean2d.detach().numpy(), cov2d.detach().numpy(), conic.detach().numpy(), w, h
    )
    # pixel-major; generation order is already depth order within a pixel
    pix_order = np.argsort(pixel, kind="stable")
    splat, pixel = splat[pix_order], pixel[pix_order]
    st, pt = torch.as_tensor(splat, dtype=torch.long), torch.as_tensor(pixel, dtype=torch.long)

    px = torch.as_tensor((pixel % w).astype(np.float64) + 0.5, dtype=DTYPE)
    py = torch.as_tensor((pixel // w).astype(np.float64) + 0.5, dtype=DTYPE)
    dx = px - mean2d[st, 0]
    dy = py - mean2d[st, 1]
    cn = conic[st]
    q = cn[:, 0] * dx * dx + 2 * cn[:, 1] * dx * dy + cn[:, 2] * dy * dy
    alpha = projected.opacity[ot][st] * torch.exp(-0.5 * q)
    log1m = torch.log1p(-alpha)

    if len(pixel):
        seg_first = np.ones(len(pixel), dtype=bool)
        seg_first[1:] = pixel[1:] != pixel[:-1]
        seg_start = np.maximum.accumulate(np.where(seg_first, np.arange(len(pixel)), 0))
        cs = torch.cumsum(log1m, 0)
        sst = torch.as_tensor(seg_start, dtype=torch.long)
        log_t = cs - log1m - (cs[sst] - log1m[sst])
        trans = torch.exp(log_t)
        live = torch.as_tensor(trans.detach().numpy() >= MIN_TRANSMITTANCE)
        weight = torch.where(live, alpha * trans, torch.zeros_like(alpha))
        log1m_live = torch.where(live, log1m, torch.zeros_like(log1m))
    else:
        weight = alpha
        log1m_live = log1m

    def accumulate(values: torch.Tensor) -> torch.Tensor:
        out = torch.zeros(n_pix, values.shape[1], dtype=DTYPE)
        return out.index_add(0, pt, weight[:, None] * values)

    final_t = torch.exp(torch.zeros(n_pix, dtype=DTYPE).index_add(0, pt, log1m_live))
    image_in = accumulate(projected.color[ot][st]) + final_t[:, None] * bg
    image_out = accumulate(projected.color_out[ot][st]) + final_t[:, None] * bg
    wsum = torch.zeros(n_pix, dtype=DTYPE).index_add(0, pt, weight)
    wz = torch.zeros(n_pix, dtype=DTYPE).index_add(0, pt, weight * projected.depth[ot][st])
    depth_map = torch.where(wsum > 0, wz / torch.where(wsum > 0, wsum, torch.ones_like(wsum)), torch.zeros_like(wsum))

    return RenderOutput(
        image_in=image_in.reshape(h, w, 3),
        image_out=image_out.reshape(h, w, 3),
        depth_map=depth_map.reshape(h, w),
        final_transmittance=final_t.reshape(h, w),
        pair_pixel=pixel,
        pair_splat=splat,
        pair_weight=weight,
        sorted_source_index=projected.source_index[order],
        leaves=projected.leaves,
    )


def render_cloud(cloud: GaussianCloud, camera: Camera, background=(0.0, 0.0, 0.0)) -> RenderOutput:
    return render(project(cloud, camera), camera, background)


def render_backward(
    output: RenderOutput,
    grad_image_in: torch.Tensor,
    grad_image_out: torch.Tensor,
    wrt: Optional[Sequence[str]] = None,
) -> dict[str, torch.Tensor]:
    """Vector-Jacobian product of both rendered images w.r.t. cloud parameters."""
    grad_image_in = torch.as_tensor(grad_image_in, dtype=DTYPE)
    grad_image_out = torch.as_tensor(grad_image_out, dtype=DTYPE)
    shape = tuple(output.image_in.shape)
    if tuple(grad_image_in.shape) != shape or tuple(grad_image_out.shape) != shape:
        raise ValueError(f"upstream gradients must have shape {shape}")
    if output.leaves is None or not output.image_in.requires_grad:
        raise RuntimeError("render output carries no autograd graph; render with grad enabled")
    names = list(wrt) if wrt is not None else list(output.leaves)
    tensors = [output.leaves[n] for n in names]
    grads = torch.autograd.grad(
        [output.image_in, output.image_out],
        tensors,
        grad_outputs=[grad_image_in, grad_image_out],
        retain_graph=True,
        allow_unused=True,
    )
    return {
        n: (g if g is not None else torch.zeros_like(t))
        for n, t, g in zip(names, tensors, grads)
    }
