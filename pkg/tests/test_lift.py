import numpy as np
import pytest

import oracles
from massing.errors import EmptyPartError
from massing.lift import (
    LiftParams,
    PointCloud,
    estimate_normals,
    lift_zone,
    remove_ground,
    remove_outliers,
    write_xyz,
)
from massing.raster import GrayRaster


def grid_cloud(n=10, spacing=1.0, z=0.0):
    xs, ys = np.meshgrid(np.arange(n) * spacing, np.arange(n) * spacing)
    pts = np.column_stack([xs.ravel(), ys.ravel(), np.full(n * n, z)])
    return PointCloud(pts)


class TestLiftZone:
    def test_direct_mapping(self):
        data = np.zeros((32, 32), dtype=np.uint8)
        data[20, 10] = 100
        pc = lift_zone(GrayRaster(data), np.array([[10, 20]]), LiftParams(z_scale=0.1))
        assert pc.points.shape == (1, 3)
        assert tuple(pc.points[0]) == (10.0, 20.0, pytest.approx(10.0))

    def test_point_per_pixel(self):
        data = np.full((16, 16), 55, dtype=np.uint8)
        pixels = np.array([(x, y) for x in range(4, 9) for y in range(3, 7)])
        pc = lift_zone(GrayRaster(data), pixels)
        assert len(pc) == len(pixels)
        # XY lattice preserved exactly
        assert {tuple(p) for p in pc.xy} == {(float(x), float(y)) for x, y in pixels}

    def test_constant_zone_constant_z(self):
        data = np.full((8, 8), 200, dtype=np.uint8)
        pixels = np.array([(x, y) for x in range(8) for y in range(8)])
        pc = lift_zone(GrayRaster(data), pixels)
        assert np.all(pc.z == pc.z[0])

    def test_empty_zone_rejected(self):
        with pytest.raises(EmptyPartError):
            lift_zone(GrayRaster(np.zeros((4, 4), dtype=np.uint8)), np.zeros((0, 2)))


class TestRemoveOutliers:
    def test_uniform_grid_untouched(self):
        pc = grid_cloud(8)
        out = remove_outliers(pc, k=8, mult=2.0)
        assert len(out) == len(pc)

    def test_single_far_point_removed(self):
        pc = grid_cloud(8)
        pts = np.vstack([pc.points, [[100.0, 100.0, 0.0]]])
        mean_knn = oracles.knn_mean_distances(pts, 8)
        cutoff = mean_knn.mean() + 2.0 * mean_knn.std()
        assert (mean_knn > cutoff).sum() == 1  # oracle: exactly the far point
        out = remove_outliers(PointCloud(pts), k=8, mult=2.0)
        assert len(out) == len(pts) - 1
        assert not np.any(np.all(out.points == [100.0, 100.0, 0.0], axis=1))

    def test_two_clusters_both_kept(self):
        a = grid_cloud(6).points
        b = grid_cloud(6).points + [50.0, 0.0, 0.0]
        pts = np.vstack([a, b])
        out = remove_outliers(PointCloud(pts), k=8, mult=2.0)
        assert len(out) == len(pts)

    def test_too_few_points_flagged(self):
        pc = PointCloud(np.zeros((3, 3)))
        out = remove_outliers(pc, k=8)
        assert len(out) == 3
        assert any("too few" in w for w in out.warnings)

    def test_idempotent_on_reference_clouds(self):
        pc = grid_cloud(8)
        pts = np.vstack([pc.points, [[100.0, 100.0, 0.0]]])
        once = remove_outliers(PointCloud(pts), k=8, mult=2.0)
        twice = remove_outliers(once, k=8, mult=2.0)
        assert np.array_equal(once.points, twice.points)


class TestRemoveGround:
    def test_zero_threshold_identity(self):
        pc = grid_cloud(4, z=1.0)
        assert len(remove_ground(pc, 0.0)) == len(pc)

    def test_threshold_removes_low_points(self):
        pts = np.array([[0, 0, 0.5], [1, 0, 5.0], [2, 0, 9.0]], dtype=float)
        out = remove_ground(PointCloud(pts), 1.0)
        assert len(out) == 2
        assert out.z.min() == 5.0

    def test_all_below_gives_empty(self):
        pts = np.array([[0, 0, 0.1], [1, 0, 0.2]], dtype=float)
        out = remove_ground(PointCloud(pts), 1.0)
        assert len(out) == 0

    def test_idempotent(self):
        pts = np.random.default_rng(0).uniform(0, 10, (50, 3))
        once = remove_ground(PointCloud(pts), 3.0)
        twice = remove_ground(once, 3.0)
        assert np.array_equal(once.points, twice.points)


class TestEstimateNormals:
    def test_horizontal_plane(self):
        pc = estimate_normals(grid_cloud(8, z=5.0), k=8)
        assert np.allclose(pc.normals, [0.0, 0.0, 1.0], atol=1e-6)

    def test_shed_plane_z_equals_x(self):
        xs, ys = np.meshgrid(np.arange(10, dtype=float), np.arange(10, dtype=float))
        pts = np.column_stack([xs.ravel(), ys.ravel(), xs.ravel()])
        pc = estimate_normals(PointCloud(pts), k=8)
        expected = np.array([-1.0, 0.0, 1.0]) / np.sqrt(2)
        assert np.allclose(pc.normals, expected, atol=1e-6)

    def test_gable_two_populations_all_up(self):
        xs, ys = np.meshgrid(np.arange(20, dtype=float), np.arange(10, dtype=float))
        zs = 10.0 - np.abs(xs - 9.5)
        pc = estimate_normals(PointCloud(np.column_stack([xs.ravel(), ys.ravel(), zs.ravel()])), k=6)
        assert np.all(pc.normals[:, 2] > 0)
        slopes = np.sign(pc.normals[:, 0])
        assert (slopes > 0).any() and (slopes < 0).any()

    def test_unit_norm_and_up_orientation(self):
        rng = np.random.default_rng(4)
        pts = rng.uniform(0, 20, (200, 2))
        z = 0.3 * pts[:, 0] + 0.1 * pts[:, 1]
        pc = estimate_normals(PointCloud(np.column_stack([pts, z])), k=12)
        norms = np.linalg.norm(pc.normals, axis=1)
        assert np.allclose(norms, 1.0, atol=1e-6)
        assert np.all(pc.normals[:, 2] > 0)

    def test_collinear_fallback_flagged(self):
        pts = np.column_stack([np.arange(10, dtype=float), np.zeros(10), np.zeros(10)])
        pc = estimate_normals(PointCloud(pts), k=4)
        assert np.allclose(pc.normals, [0.0, 0.0, 1.0])
        assert any("degenerate" in w for w in pc.warnings)


def test_write_xyz_roundtrip(tmp_path):
    pc = estimate_normals(grid_cloud(4, z=2.0), k=4)
    path = tmp_path / "cloud.xyz"
    write_xyz(pc, path)
    rows = [line.split() for line in path.read_text().strip().splitlines()]
    assert len(rows) == len(pc)
    assert all(len(r) == 6 for r in rows)
