import sys
from pathlib import Path

import numpy as np
import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent))

from tonesplat.scene import Camera, GaussianCloud  # noqa: E402

torch.set_num_threads(1)


def toy_camera(width=16, height=16, fov_deg=50.0, eye=(0.0, -4.0, 0.5)) -> Camera:
    return Camera.look_at(eye, (0.0, 0.0, 0.0), width, height, np.deg2rad(fov_deg))


def camera_dict(cam: Camera) -> dict:
    return dict(width=cam.width, height=cam.height, fx=cam.fx, fy=cam.fy, cx=cam.cx, cy=cam.cy,
                w2c=cam.world_to_camera)


def random_cloud(n: int, seed: int, spread=1.0, scale=(0.05, 0.4), opacity=(0.2, 0.95)) -> GaussianCloud:
    rng = np.random.default_rng(seed)
    q = rng.normal(size=(n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    return GaussianCloud.from_values(
        positions=rng.uniform(-spread, spread, size=(n, 3)),
        scales=rng.uniform(*scale, size=(n, 3)),
        colors=rng.uniform(0.05, 0.95, size=(n, 3)),
        opacities=rng.uniform(*opacity, size=n),
        rotations=q,
        gains=rng.uniform(0.8, 1.3, size=(n, 3)),
        offsets=rng.uniform(-0.1, 0.1, size=(n, 3)),
    )


@pytest.fixture
def camera():
    return toy_camera()


@pytest.fixture(scope="session")
def tiny_dataset_dir(tmp_path_factory):
    from tonesplat.pipeline.synth import DatasetSpec, synth_dataset

    out = tmp_path_factory.mktemp("tiny")
    synth_dataset(DatasetSpec(preset="varying", views=4, test_views=2, width=16, height=16,
                              gt_gaussians=120, seed=5), out)
    return out


# -- acceptance reporting ---------------------------------------------------------

ACCEPTANCE_LINES: list[str] = []


def report_criterion(number: int, title: str, passed: bool, detail: str) -> bool:
    """Print (and remember for the terminal summary) one pass/fail line."""
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {title} | {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
