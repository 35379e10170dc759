import numpy as np
import pytest

from idscaling.manifolds import (
    CloudFormatError,
    PointCloud,
    load_cloud,
    sample_hypercube,
    sample_torus,
    save_cloud,
)
from idscaling.id_estimation import estimate_id_knn


def test_hypercube_smallest_case():
    cloud = sample_hypercube(1, 2, seed=0)
    assert cloud.points.shape == (2, 1)
    assert np.all((cloud.points >= 0) & (cloud.points <= 1))


def test_hypercube_shape_and_range():
    cloud = sample_hypercube(3, 500, seed=1)
    assert cloud.n == 500 and cloud.ambient_dim == 3
    assert np.all((cloud.points >= 0) & (cloud.points < 1))


def test_hypercube_determinism():
    a = sample_hypercube(4, 1000, seed=123)
    b = sample_hypercube(4, 1000, seed=123)
    assert np.array_equal(a.points, b.points)
    c = sample_hypercube(4, 1000, seed=124)
    assert not np.array_equal(a.points, c.points)


def test_hypercube_uniformity_5_sigma():
    n = 20000
    cloud = sample_hypercube(3, n, seed=7)
    bound = 5.0 / np.sqrt(12.0 * n)
    assert np.all(np.abs(cloud.points.mean(axis=0) - 0.5) < bound)


def test_hypercube_rejects_bad_args():
    with pytest.raises(ValueError):
        sample_hypercube(0, 10, seed=0)
    with pytest.raises(ValueError):
        sample_hypercube(2, 1, seed=0)


def test_torus_unit_norm_per_circle():
    cloud = sample_torus(3, 400, seed=5)
    assert cloud.ambient_dim == 6
    sq = cloud.points[:, 0::2] ** 2 + cloud.points[:, 1::2] ** 2
    assert np.all(np.abs(sq - 1.0) < 1e-12)


def test_torus_smallest_case():
    cloud = sample_torus(1, 3, seed=2)
    assert cloud.points.shape == (3, 2)
    assert np.allclose(np.linalg.norm(cloud.points, axis=1), 1.0, atol=1e-12)


def test_torus_rejects_bad_args():
    with pytest.raises(ValueError):
        sample_torus(0, 10, seed=0)
    with pytest.raises(ValueError):
        sample_torus(1, 1, seed=0)


def test_cloud_needs_two_points():
    with pytest.raises(ValueError):
        PointCloud(np.zeros((1, 3)))


def test_roundtrip_identity(tmp_path):
    cloud = PointCloud(np.array([[0.1, -2.5e-17], [np.pi, 1e300], [3.0, -0.0]]))
    path = tmp_path / "c.csv"
    save_cloud(cloud, path)
    back = load_cloud(path)
    assert np.array_equal(back.points, cloud.points)


def test_roundtrip_random(tmp_path):
    cloud = sample_torus(2, 50, seed=9)
    path = tmp_path / "t.csv"
    save_cloud(cloud, path)
    assert np.array_equal(load_cloud(path).points, cloud.points)


def test_load_rejects_ragged_rows(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("1.0,2.0\n3.0\n")
    with pytest.raises(CloudFormatError, match="row 2"):
        load_cloud(path)


def test_load_rejects_nonfinite(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("1.0,2.0\nnan,0.0\n")
    with pytest.raises(CloudFormatError, match="row 2"):
        load_cloud(path)


def test_load_rejects_empty(tmp_path):
    path = tmp_path / "empty.csv"
    path.write_text("")
    with pytest.raises(CloudFormatError, match="fewer than 2"):
        load_cloud(path)


def test_hypercube_d2_twonn_near_2():
    cloud = sample_hypercube(2, 10000, seed=21)
    est = estimate_id_knn(cloud, k=2)
    assert abs(est.d_hat - 2.0) < 0.2


def test_hypercube_d64_underestimates():
    cloud = sample_hypercube(64, 10000, seed=22)
    est = estimate_id_knn(cloud, k=2)
    assert est.d_hat < 64.0
