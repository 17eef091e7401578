"""Synthetic multi-view benchmark with per-view exposure/gamma degradation."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from ..scene import Camera, GaussianCloud, logit
from ..splat_renderer import render_cloud
from ..tonecurve import LUMA
from .data import write_png, write_transforms

PRESETS = {
    "lowlight": {"exposure": (0.15, 0.25), "gamma": (1.8, 2.4)},
    "overexposure": {"exposure": (2.0, 3.0), "gamma": (0.45, 0.6)},
    "varying": {"exposure": (0.3, 1.4), "gamma": (0.8, 1.25)},
}


@dataclass
class DatasetSpec:
    preset: str = "varying"
    views: int = 16
    test_views: int = 4
    width: int = 64
    height: int = 64
    seed: int = 0
    gt_gaussians: int = 600
    equalize_passes: int = 3
    radius: float = 3.0  # camera ring radius
    elevation: float = 20.0  # degrees
    look_at: tuple = (0.0, 0.0, 0.0)
    fov_x: float = 36.0  # degrees
    object_radius: float = 1.5
    point_fraction: float = 0.5  # share of splat centers exported as init points
    point_noise: float = 0.03
    # explicit per-view (exposure, gamma); overrides the preset draw
    degradation: Optional[list] = None

    def __post_init__(self):
        if self.preset not in PRESETS and self.degradation is None:
            raise ValueError(f"unknown preset {self.preset!r}")
        if self.views < 2:
            raise ValueError("need at least two training views")
        if self.degradation is not None:
            if len(self.degradation) != self.views:
                raise ValueError("one (exposure, gamma) pair per training view")
            if any(s <= 0 or g <= 0 for s, g in self.degradation):
                raise ValueError("exposure and gamma must be positive")


def degrade(image, exposure: float, gamma: float) -> torch.Tensor:
    image = torch.as_tensor(image)
    return torch.clamp(exposure * image, 0.0, None).pow(gamma).clamp(0.0, 1.0)


def ground_truth_scene(spec: DatasetSpec, cameras: Optional[list[Camera]] = None) -> GaussianCloud:
    """Flat textured splats tiling a sphere.

    Gray levels start evenly spread over [0.05, 0.95]. When ``cameras`` are
    given, splat luminances are then remapped (``spec.equalize_passes`` times)
    through the pooled luminance CDF of the rendered views, so well-exposed
    views have a roughly flat luminance histogram.
    """
    rng = np.random.default_rng([spec.seed, 17])
    n = spec.gt_gaussians
    # Fibonacci sphere for even coverage
    k = np.arange(n) + 0.5
    phi = np.arccos(1 - 2 * k / n)
    theta = math.pi * (1 + 5**0.5) * k
    normals = np.stack([np.cos(theta) * np.sin(phi), np.sin(theta) * np.sin(phi), np.cos(phi)], 1)
    positions = normals * spec.object_radius + rng.normal(scale=0.02, size=(n, 3))
    spacing = spec.object_radius * math.sqrt(4 * math.pi / n)
    scales = np.column_stack([np.full((n, 2), 0.44 * spacing), np.full(n, 0.08 * spacing)])
    scales[:, :2] *= rng.uniform(0.8, 1.25, size=(n, 2))
    rotations = np.array([_quat_z_to(v) for v in normals])
    gray = rng.permutation(np.linspace(0.05, 0.95, n))
    tint = rng.normal(scale=0.08, size=(n, 3))
    colors = np.clip(gray[:, None] + tint - tint.mean(1, keepdims=True), 0.02, 0.98)
    cloud = GaussianCloud.from_values(positions, scales, colors, np.full(n, 0.95), rotations)
    for _ in range(spec.equalize_passes if cameras else 0):
        cloud = _equalize_colors(cloud, cameras)
    return cloud


def _equalize_colors(cloud: GaussianCloud, cameras: list[Camera]) -> GaussianCloud:
    luma = np.array(LUMA)
    with torch.no_grad():
        pooled = np.sort(np.concatenate([
            (render_cloud(cloud, c).image_in.clamp(0.0, 1.0).numpy() @ luma).ravel() for c in cameras
        ]))
    colors = cloud.base_colors.detach().numpy()
    lum = colors @ luma
    target = np.clip(np.searchsorted(pooled, lum) / len(pooled), 0.02, 0.98)
    colors = np.clip(colors * (target / lum)[:, None], 0.01, 0.99)
    cloud.color_logits = logit(torch.as_tensor(colors))
    return cloud


def _quat_z_to(v) -> np.ndarray:
    """Quaternion (w, x, y, z) rotating +z onto unit vector ``v``."""
    z = np.array([0.0, 0.0, 1.0])
    axis = np.cross(z, v)
    s = np.linalg.norm(axis)
    c = float(np.dot(z, v))
    if s < 1e-12:
        return np.array([1.0, 0.0, 0.0, 0.0]) if c > 0 else np.array([0.0, 1.0, 0.0, 0.0])
    angle = math.atan2(s, c)
    axis = axis / s
    return np.concatenate([[math.cos(angle / 2)], math.sin(angle / 2) * axis])


def ring_cameras(spec: DatasetSpec, count: int, phase: float) -> list[Camera]:
    cams = []
    elev = math.radians(spec.elevation)
    target = np.asarray(spec.look_at, dtype=np.float64)
    for i in range(count):
        az = 2 * math.pi * (i + phase) / count
        eye = target + spec.radius * np.array(
            [math.cos(az) * math.cos(elev), math.sin(az) * math.cos(elev), math.sin(elev)]
        )
        cams.append(Camera.look_at(eye, target, spec.width, spec.height, math.radians(spec.fov_x)))
    return cams


def draw_degradation(spec: DatasetSpec) -> list[tuple[float, float]]:
    if spec.degradation is not None:
        return [(float(s), float(g)) for s, g in spec.degradation]
    rng = np.random.default_rng([spec.seed, 29])
    p = PRESETS[spec.preset]
    s = rng.uniform(*p["exposure"], size=spec.views)
    g = rng.uniform(*p["gamma"], size=spec.views)
    return [(float(a), float(b)) for a, b in zip(s, g)]


def synth_dataset(spec: DatasetSpec, out_dir) -> Path:
    """Render the benchmark into ``out_dir``.

    Writes degraded training views, their normal-light counterparts
    (``train_gt/``, evaluation only), normal-light held-out test views, the
    transforms files, jittered init points (``points3d.txt``) and
    ``degradation.json`` (never read by training).
    """
    out = Path(out_dir)
    for sub in ("train", "train_gt", "test"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    train_cams = ring_cameras(spec, spec.views, 0.0)
    test_cams = ring_cameras(spec, spec.test_views, 0.37)
    scene = ground_truth_scene(spec, train_cams + test_cams)
    degr = draw_degradation(spec)

    train_files = []
    with torch.no_grad():
        for i, (cam, (s, g)) in enumerate(zip(train_cams, degr)):
            clean = render_cloud(scene, cam).image_in.clamp(0.0, 1.0)
            write_png(out / "train_gt" / f"r_{i:03d}.png", clean)
            write_png(out / "train" / f"r_{i:03d}.png", degrade(clean, s, g))
            train_files.append(f"train/r_{i:03d}")
        test_files = []
        for i, cam in enumerate(test_cams):
            clean = render_cloud(scene, cam).image_in.clamp(0.0, 1.0)
            write_png(out / "test" / f"r_{i:03d}.png", clean)
            test_files.append(f"test/r_{i:03d}")

    r = spec.object_radius * 1.1
    aabb = [[-r, -r, -r], [r, r, r]]
    write_transforms(out / "transforms_train.json", train_cams, train_files, {"aabb": aabb})
    write_transforms(out / "transforms_test.json", test_cams, test_files)
    write_transforms(
        out / "transforms_train_gt.json", train_cams, [f.replace("train/", "train_gt/") for f in train_files]
    )
    # sparse "structure-from-motion" points: jittered splat centers, no colors
    rng = np.random.default_rng([spec.seed, 41])
    pts = scene.positions.detach().numpy()
    pts = pts[rng.permutation(len(pts))[: max(4, int(len(pts) * spec.point_fraction))]]
    pts = pts + rng.normal(scale=spec.point_noise, size=pts.shape)
    np.savetxt(out / "points3d.txt", pts, fmt="%.9f")
    sidecar = {
        "preset": spec.preset,
        "seed": spec.seed,
        "views": [{"view": i, "exposure": s, "gamma": g} for i, (s, g) in enumerate(degr)],
    }
    (out / "degradation.json").write_text(json.dumps(sidecar, indent=2) + "\n")
    return out
