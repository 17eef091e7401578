import json

import numpy as np
import pytest
import torch

from tonesplat.pipeline.data import DataError, load_dataset, read_pfm, read_png, write_pfm, write_png
from tonesplat.pipeline.synth import DatasetSpec, degrade, ground_truth_scene, ring_cameras, synth_dataset
from tonesplat.splat_renderer import render_cloud
from tonesplat.tonecurve import luminance


def _small(**kw):
    base = dict(views=3, test_views=1, width=12, height=12, gt_gaussians=60, seed=2)
    base.update(kw)
    return DatasetSpec(**base)


def test_png_and_pfm_round_trip(tmp_path):
    img = np.random.default_rng(0).uniform(size=(5, 7, 3))
    write_png(tmp_path / "a.png", img)
    assert np.abs(read_png(tmp_path / "a.png") - img).max() <= 0.5 / 255 + 1e-12
    write_pfm(tmp_path / "a.pfm", img)
    assert np.abs(read_pfm(tmp_path / "a.pfm") - img).max() < 1e-6


def test_synth_load_round_trip(tiny_dataset_dir):
    ds = load_dataset(tiny_dataset_dir)
    assert len(ds.train) == 4 and len(ds.test) == 2
    assert ds.points is not None and ds.points.shape[1] == 3
    spec = DatasetSpec(preset="varying", views=4, test_views=2, width=16, height=16, gt_gaussians=120, seed=5)
    cams = ring_cameras(spec, 4, 0.0)
    for view, cam in zip(ds.train, cams):
        assert np.allclose(view.camera.world_to_camera, cam.world_to_camera, atol=1e-9)
        assert view.camera.fx == pytest.approx(cam.fx)
    # the training image reproduces the degraded render within one 8-bit step
    scene = ground_truth_scene(spec, cams + ring_cameras(spec, 2, 0.37))
    sidecar = json.loads((tiny_dataset_dir / "degradation.json").read_text())
    v0 = sidecar["views"][0]
    with torch.no_grad():
        clean = render_cloud(scene, cams[0]).image_in.clamp(0, 1)
    expected = degrade(clean, v0["exposure"], v0["gamma"]).numpy()
    assert np.abs(ds.train[0].input_image.numpy() - expected).max() <= 1 / 255 + 1e-9


def test_missing_image_names_view(tmp_path):
    synth_dataset(_small(), tmp_path)
    (tmp_path / "train" / "r_001.png").unlink()
    with pytest.raises(DataError, match="view 1"):
        load_dataset(tmp_path)


def test_empty_or_missing_directory(tmp_path):
    with pytest.raises(DataError):
        load_dataset(tmp_path)
    with pytest.raises(DataError):
        load_dataset(tmp_path / "nope")


def test_size_mismatch(tmp_path):
    synth_dataset(_small(), tmp_path)
    write_png(tmp_path / "train" / "r_000.png", np.zeros((4, 4, 3)))
    with pytest.raises(DataError, match="does not match"):
        load_dataset(tmp_path)


def test_lowlight_is_darker(tmp_path):
    synth_dataset(_small(preset="lowlight"), tmp_path / "low")
    low = load_dataset(tmp_path / "low")
    for view, gt in zip(low.train, sorted((tmp_path / "low" / "train_gt").glob("*.png"))):
        assert float(luminance(view.input_image).mean()) < float(luminance(torch.as_tensor(read_png(gt))).mean())


def test_unit_degradation_is_identity(tmp_path):
    synth_dataset(_small(degradation=[(1.0, 1.0)] * 3), tmp_path)
    for a, b in zip(sorted((tmp_path / "train").glob("*.png")), sorted((tmp_path / "train_gt").glob("*.png"))):
        assert a.read_bytes() == b.read_bytes()


def test_byte_identical_determinism(tmp_path):
    synth_dataset(_small(), tmp_path / "a")
    synth_dataset(_small(), tmp_path / "b")
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    assert files
    for f in files:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_spec_validation():
    with pytest.raises(ValueError):
        DatasetSpec(preset="nope")
    with pytest.raises(ValueError):
        DatasetSpec(views=1)
    with pytest.raises(ValueError):
        DatasetSpec(views=2, degradation=[(1.0, 1.0)])
