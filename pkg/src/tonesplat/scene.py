"""Explicit Gaussian scene, pinhole cameras and per-view training records."""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from typing import Optional

import numpy as np
import torch

DTYPE = torch.float64

# Checkpoint/serialization order of the cloud fields.
CLOUD_FIELDS = (
    "positions",
    "log_scales",
    "rotations",
    "opacity_logits",
    "color_logits",
    "color_gains",
    "color_offsets",
)


def logit(p):
    p = torch.as_tensor(p, dtype=DTYPE)
    return torch.log(p) - torch.log1p(-p)


@dataclass
class GaussianCloud:
    """Per-Gaussian parameters, all stored unconstrained.

    Opacities and base colors live behind a sigmoid. ``color_gains`` and
    ``color_offsets`` are the affine color adjustment turning base colors into
    the enhanced colors used at test time.
    """

    positions: torch.Tensor  # (N, 3)
    log_scales: torch.Tensor  # (N, 3)
    rotations: torch.Tensor  # (N, 4) quaternion (w, x, y, z)
    opacity_logits: torch.Tensor  # (N,)
    color_logits: torch.Tensor  # (N, 3)
    color_gains: torch.Tensor  # (N, 3)
    color_offsets: torch.Tensor  # (N, 3)

    def __post_init__(self):
        n = self.positions.shape[0]
        for f in fields(self):
            t = getattr(self, f.name)
            if t.shape[0] != n:
                raise ValueError(f"{f.name} has {t.shape[0]} rows, expected {n}")

    @property
    def count(self) -> int:
        return int(self.positions.shape[0])

    @property
    def opacities(self) -> torch.Tensor:
        return torch.sigmoid(self.opacity_logits)

    @property
    def base_colors(self) -> torch.Tensor:
        return torch.sigmoid(self.color_logits)

    def parameters(self) -> dict[str, torch.Tensor]:
        return {name: getattr(self, name) for name in CLOUD_FIELDS}

    def requires_grad_(self, flag: bool = True) -> "GaussianCloud":
        for t in self.parameters().values():
            t.requires_grad_(flag)
        return self

    def detach(self) -> "GaussianCloud":
        return GaussianCloud(**{k: v.detach().clone() for k, v in self.parameters().items()})

    def select(self, index) -> "GaussianCloud":
        index = torch.as_tensor(index, dtype=torch.long)
        return GaussianCloud(**{k: v.detach()[index].clone() for k, v in self.parameters().items()})

    def rotation_matrices(self) -> torch.Tensor:
        return quaternion_to_matrix(self.rotations)

    def covariances(self) -> torch.Tensor:
        r = self.rotation_matrices()
        s = torch.exp(self.log_scales)
        rs = r * s[:, None, :]
        return rs @ rs.transpose(1, 2)

    @classmethod
    def from_values(
        cls,
        positions,
        scales,
        colors,
        opacities,
        rotations=None,
        gains=None,
        offsets=None,
    ) -> "GaussianCloud":
        """Build a cloud from constrained values (std-devs, colors, opacities)."""
        positions = torch.as_tensor(np.asarray(positions, dtype=np.float64)).reshape(-1, 3)
        n = positions.shape[0]
        scales = torch.as_tensor(np.broadcast_to(np.asarray(scales, dtype=np.float64), (n, 3)).copy())
        if rotations is None:
            rotations = torch.zeros(n, 4, dtype=DTYPE)
            rotations[:, 0] = 1.0
        else:
            rotations = torch.as_tensor(np.asarray(rotations, dtype=np.float64)).reshape(n, 4)
        colors = torch.as_tensor(np.asarray(colors, dtype=np.float64)).reshape(n, 3)
        opacities = torch.broadcast_to(torch.as_tensor(np.asarray(opacities, dtype=np.float64)), (n,))
        gains = torch.ones(n, 3, dtype=DTYPE) if gains is None else torch.as_tensor(np.asarray(gains, dtype=np.float64)).reshape(n, 3)
        offsets = torch.zeros(n, 3, dtype=DTYPE) if offsets is None else torch.as_tensor(np.asarray(offsets, dtype=np.float64)).reshape(n, 3)
        return cls(
            positions=positions.clone(),
            log_scales=torch.log(scales).clone(),
            rotations=rotations.clone(),
            opacity_logits=logit(opacities).clone(),
            color_logits=logit(colors).clone(),
            color_gains=gains.clone(),
            color_offsets=offsets.clone(),
        )


def quaternion_to_matrix(q: torch.Tensor) -> torch.Tensor:
    """Rotation matrices for (w, x, y, z) quaternions; normalizes first."""
    q = q / torch.linalg.norm(q, dim=-1, keepdim=True)
    w, x, y, z = q.unbind(-1)
    return torch.stack(
        [
            1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
            2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
            2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y),
        ],
        dim=-1,
    ).reshape(q.shape[:-1] + (3, 3))


def renormalize_quaternions(q: torch.Tensor) -> None:
    """In-place unit renormalization (post optimizer step)."""
    with torch.no_grad():
        q.div_(torch.linalg.norm(q, dim=-1, keepdim=True).clamp_min(1e-12))


def new_cloud_random(count: int, bounds, seed: int) -> GaussianCloud:
    """Random initial cloud inside an axis-aligned box ``((x0,y0,z0), (x1,y1,z1))``."""
    if count < 1:
        raise ValueError("count must be >= 1")
    lo, hi = (np.asarray(b, dtype=np.float64) for b in bounds)
    if lo.shape != (3,) or hi.shape != (3,) or np.any(hi <= lo):
        raise ValueError(f"degenerate bounds {bounds!r}")
    rng = np.random.default_rng(seed)
    positions = lo + rng.random((count, 3)) * (hi - lo)
    std = np.linalg.norm(hi - lo) / count ** (1.0 / 3.0) * 0.5
    colors = rng.uniform(0.2, 0.8, size=(count, 3))
    return GaussianCloud.from_values(
        positions, np.full((count, 3), std), colors, np.full(count, 0.1)
    )


def new_cloud_from_points(points, seed: int, scale_factor: float = 0.5) -> GaussianCloud:
    """Initial cloud centered on known 3D points (SfM-style initialization).

    Std-dev per point is ``scale_factor`` times the RMS distance to its three
    nearest neighbors; colors and opacities follow ``new_cloud_random``.
    """
    from scipy.spatial import cKDTree

    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(points) < 4:
        raise ValueError("need at least four points")
    dist, _ = cKDTree(points).query(points, k=4)
    std = scale_factor * np.sqrt(np.mean(dist[:, 1:] ** 2, axis=1))
    rng = np.random.default_rng(seed)
    colors = rng.uniform(0.2, 0.8, size=(len(points), 3))
    return GaussianCloud.from_values(
        points, np.repeat(std[:, None], 3, axis=1), colors, np.full(len(points), 0.1)
    )


def transformed_colors(cloud: GaussianCloud) -> torch.Tensor:
    """Enhanced per-Gaussian colors ``gain * color + offset`` (no clamping)."""
    return cloud.color_gains * cloud.base_colors + cloud.color_offsets


@dataclass
class Camera:
    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float
    world_to_camera: np.ndarray  # 4x4, OpenCV axes (x right, y down, z forward)

    def __post_init__(self):
        self.world_to_camera = np.asarray(self.world_to_camera, dtype=np.float64)
        if self.world_to_camera.shape != (4, 4):
            raise ValueError("world_to_camera must be 4x4")
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if self.width < 1 or self.height < 1:
            raise ValueError("image size must be positive")
        r = self.world_to_camera[:3, :3]
        if not np.allclose(r @ r.T, np.eye(3), atol=1e-6) or np.linalg.det(r) < 0:
            raise ValueError("world_to_camera rotation is not a proper rotation")

    @property
    def rotation(self) -> np.ndarray:
        return self.world_to_camera[:3, :3]

    @property
    def translation(self) -> np.ndarray:
        return self.world_to_camera[:3, 3]

    def query_vector(self) -> torch.Tensor:
        """Flattened row-major world-to-camera matrix (generator query input)."""
        return torch.as_tensor(self.world_to_camera.reshape(16).copy(), dtype=DTYPE)

    @classmethod
    def look_at(cls, eye, target, width, height, fov_x, up=(0.0, 0.0, 1.0)) -> "Camera":
        eye, target, up = (np.asarray(v, dtype=np.float64) for v in (eye, target, up))
        forward = target - eye
        forward /= np.linalg.norm(forward)
        right = np.cross(forward, up)
        right /= np.linalg.norm(right)
        down = np.cross(forward, right)
        rot = np.stack([right, down, forward])  # rows: camera axes in world coords
        w2c = np.eye(4)
        w2c[:3, :3] = rot
        w2c[:3, 3] = -rot @ eye
        focal = 0.5 * width / np.tan(0.5 * fov_x)
        return cls(width, height, focal, focal, width / 2.0, height / 2.0, w2c)


@dataclass
class ViewRecord:
    view_id: int
    input_image: torch.Tensor  # (H, W, 3) in [0, 1]
    camera: Camera
    color_matrix: torch.Tensor = field(default_factory=lambda: torch.eye(3, dtype=DTYPE))
    cached_bias: torch.Tensor = field(default_factory=lambda: torch.zeros(256, dtype=DTYPE))
    cached_prior: Optional[tuple[float, float, float]] = None

    def __post_init__(self):
        self.input_image = torch.as_tensor(self.input_image, dtype=DTYPE)
        h, w = self.input_image.shape[:2]
        if (h, w) != (self.camera.height, self.camera.width) or self.input_image.shape[2] != 3:
            raise ValueError(
                f"view {self.view_id}: image {tuple(self.input_image.shape)} does not match "
                f"camera {self.camera.width}x{self.camera.height}"
            )
