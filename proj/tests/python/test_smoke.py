import math

import numpy as np
import pytest

import lidarsplat as ls


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("plane")
    ls.synth(root, preset="plane", seed=3)
    return root, ls.load_dataset(root)


def test_camera_round_trip():
    cam = ls.Camera()
    cam.width, cam.height = 64, 48
    cam.fx = cam.fy = 50.0
    cam.cx, cam.cy = 32.0, 24.0
    cam.k1, cam.k2 = 0.05, 0.005
    cam.radial_units = ls.RadialUnits.NORMALIZED
    uv = np.array([10.25, 40.5])
    assert np.allclose(ls.distort(cam, ls.undistort(cam, uv)), uv, atol=1e-9)
    px = ls.project(cam, np.array([[0.0, 0.0, 5.0], [0.0, 0.0, -1.0]]))
    assert np.allclose(px[0], [32.0, 24.0])
    assert np.isnan(px[1]).all()


def test_dataset_and_render(dataset):
    root, d = dataset
    assert len(d.cameras) == len(d.images) == 4
    assert sorted(d.split["train"] + d.split["val"] + d.split["test"]) == [0, 1, 2, 3]
    init = ls.init_from_lidar(d.cloud)
    assert len(init) == len(d.cloud)
    assert ls.lidar_rmse(init, d.cloud) == 0.0
    out = ls.render(init, d.cameras[0])
    assert out["color"].shape == (48, 64, 3)
    assert out["depth"].shape == (48, 64)
    assert out["valid"].dtype == bool
    maps = ls.lidar_maps(d.cloud, d.cameras[0])
    assert maps["valid"].sum() > 0
    assert math.isinf(ls.psnr(d.images[0], d.images[0]))
    assert ls.ssim(d.images[0], d.images[0]) == pytest.approx(1.0)


def test_align_and_train(dataset, tmp_path):
    root, d = dataset
    initial = ls.load_dataset(root, "cameras_init")
    rows = ls.align(initial.cloud, initial.cameras, initial.features)
    assert all(r["ok"] for r in rows)
    assert all(r["rms_after"] <= r["rms_before"] + 1e-9 for r in rows)

    init = ls.init_from_lidar(d.cloud)
    before = np.mean([ls.psnr(np.clip(ls.render(init, d.cameras[i])["color"], 0, 1), d.images[i]) for i in range(4)])
    trained, log = ls.train(init, d.cloud, d.cameras, d.images, train=[0, 1, 2, 3], iterations=60, tau_pos=0.5,
                            alpha=0.0, beta=0.0, gamma=0.0)
    assert len(log) == 60
    after = np.mean([ls.psnr(np.clip(ls.render(trained, d.cameras[i])["color"], 0, 1), d.images[i]) for i in range(4)])
    assert after > before
    ls.save_gaussians(trained, tmp_path / "model.ply")
    back = ls.load_gaussians(tmp_path / "model.ply")
    assert len(back) == len(trained)
    assert np.allclose(back.positions, trained.positions, atol=1e-5)


def test_errors(tmp_path):
    with pytest.raises(ls.Error):
        ls.load_dataset(tmp_path / "missing")
    with pytest.raises(ls.ParseError):
        (tmp_path / "bad.ply").write_text("not a ply\n")
        ls.load_gaussians(tmp_path / "bad.ply")
    with pytest.raises(ls.Error):
        ls.synth(tmp_path / "x", preset="nope")
