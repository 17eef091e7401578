"""Image I/O and the transforms-JSON dataset layout.

A dataset directory holds ``transforms_train.json`` / ``transforms_test.json``
(``camera_angle_x`` plus per-frame camera-to-world matrices in the OpenGL
convention used by synthetic NVS datasets) and 8-bit PNG images.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import torch
from PIL import Image

from ..scene import DTYPE, Camera, ViewRecord

_GL_FLIP = np.diag([1.0, -1.0, -1.0, 1.0])


class DataError(ValueError):
    pass


def to_uint8(image) -> np.ndarray:
    arr = np.asarray(torch.as_tensor(image).detach(), dtype=np.float64)
    return np.clip(np.floor(np.clip(arr, 0.0, 1.0) * 255.0 + 0.5), 0, 255).astype(np.uint8)


def write_png(path, image) -> None:
    Image.fromarray(to_uint8(image), mode="RGB").save(path, format="PNG")


def read_png(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0


def write_pfm(path, image) -> None:
    arr = np.asarray(torch.as_tensor(image).detach(), dtype="<f4")
    h, w = arr.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"PF\n{w} {h}\n-1.0\n".encode())
        fh.write(np.ascontiguousarray(arr[::-1]).tobytes())


def read_pfm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        if fh.readline().strip() != b"PF":
            raise DataError(f"{path}: not a color PFM")
        w, h = (int(v) for v in fh.readline().split())
        scale = float(fh.readline())
        dt = "<f4" if scale < 0 else ">f4"
        arr = np.frombuffer(fh.read(), dtype=dt).reshape(h, w, 3)
    return arr[::-1].astype(np.float64)


def camera_to_frame(camera: Camera) -> list:
    c2w_gl = np.linalg.inv(camera.world_to_camera) @ _GL_FLIP
    return c2w_gl.tolist()


def frame_to_camera(matrix, width: int, height: int, meta: dict) -> Camera:
    c2w = np.asarray(matrix, dtype=np.float64)
    if c2w.shape == (3, 4):
        c2w = np.vstack([c2w, [0.0, 0.0, 0.0, 1.0]])
    if c2w.shape != (4, 4):
        raise DataError("transform_matrix must be 4x4")
    w2c = np.linalg.inv(c2w @ _GL_FLIP)
    # re-orthonormalize against JSON round-off
    u, _, vt = np.linalg.svd(w2c[:3, :3])
    w2c[:3, :3] = u @ vt
    if "fl_x" in meta:
        fx = float(meta["fl_x"])
        fy = float(meta.get("fl_y", fx))
    else:
        fx = fy = 0.5 * width / np.tan(0.5 * float(meta["camera_angle_x"]))
    cx = float(meta.get("cx", width / 2.0))
    cy = float(meta.get("cy", height / 2.0))
    return Camera(width, height, fx, fy, cx, cy, w2c)


def write_transforms(path, cameras: list[Camera], files: list[str], extra: Optional[dict] = None) -> None:
    cam0 = cameras[0]
    doc = {
        "camera_angle_x": float(2.0 * np.arctan(0.5 * cam0.width / cam0.fx)),
        "w": cam0.width,
        "h": cam0.height,
        "fl_x": cam0.fx,
        "fl_y": cam0.fy,
        "cx": cam0.cx,
        "cy": cam0.cy,
    }
    if extra:
        doc.update(extra)
    doc["frames"] = [
        {"file_path": f, "transform_matrix": camera_to_frame(c)} for f, c in zip(files, cameras)
    ]
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def read_transforms(path) -> tuple[dict, list[tuple[str, Camera]]]:
    """Parse a transforms file into (metadata, [(file_path, camera), ...])."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
        width, height = int(doc["w"]), int(doc["h"])
        frames = doc["frames"]
        out = [
            (str(fr["file_path"]), frame_to_camera(fr["transform_matrix"], width, height, doc))
            for fr in frames
        ]
    except FileNotFoundError:
        raise
    except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: malformed transforms file ({exc})") from exc
    return doc, out


@dataclass
class TestView:
    view_id: int
    camera: Camera
    image: torch.Tensor
    name: str


@dataclass
class Dataset:
    root: Path
    train: list[ViewRecord]
    test: list[TestView] = field(default_factory=list)
    bounds: Optional[tuple] = None
    points: Optional[np.ndarray] = None  # optional init points, (P, 3)

    @property
    def extent(self) -> float:
        lo, hi = (np.asarray(b) for b in self.bounds)
        return float(np.linalg.norm(hi - lo) / 2.0)


def _image_path(root: Path, file_path: str) -> Path:
    p = root / file_path
    return p if p.suffix else p.with_suffix(".png")


def _load_split(root: Path, name: str, required: bool):
    tf = root / f"transforms_{name}.json"
    if not tf.exists():
        if required:
            raise DataError(f"{root}: missing {tf.name}")
        return None, []
    meta, frames = read_transforms(tf)
    items = []
    for vid, (fp, cam) in enumerate(frames):
        ip = _image_path(root, fp)
        if not ip.exists():
            raise DataError(f"{name} view {vid}: missing image {ip}")
        img = read_png(ip)
        if img.shape[:2] != (cam.height, cam.width):
            raise DataError(
                f"{name} view {vid}: image {img.shape[1]}x{img.shape[0]} does not match "
                f"camera {cam.width}x{cam.height}"
            )
        items.append((vid, cam, img, Path(fp).stem))
    return meta, items


def load_dataset(path) -> Dataset:
    root = Path(path)
    if not root.is_dir():
        raise DataError(f"{root}: not a directory")
    meta, train_items = _load_split(root, "train", required=True)
    if len(train_items) < 1:
        raise DataError(f"{root}: no training frames")
    train = [ViewRecord(vid, torch.as_tensor(img, dtype=DTYPE), cam) for vid, cam, img, _ in train_items]
    _, test_items = _load_split(root, "test", required=False)
    test = [TestView(vid, cam, torch.as_tensor(img, dtype=DTYPE), nm) for vid, cam, img, nm in test_items]
    if "aabb" in meta:
        bounds = tuple(tuple(float(v) for v in b) for b in meta["aabb"])
    else:
        centers = np.stack([np.linalg.inv(v.camera.world_to_camera)[:3, 3] for v in train])
        r = float(np.linalg.norm(centers, axis=1).mean()) / 2.0
        bounds = ((-r, -r, -r), (r, r, r))
    points = None
    if (root / "points3d.txt").exists():
        points = np.loadtxt(root / "points3d.txt", dtype=np.float64, ndmin=2)
        if points.shape[1] != 3:
            raise DataError(f"{root}/points3d.txt: expected 3 columns")
    return Dataset(root, train, test, bounds, points)
