import numpy as np
import pytest

from medpnet.errors import OverlapInfeasible
from medpnet.geometry import PointCloud, apply_transform, compose, invert, point_rmse
from medpnet.synth import (
    PairSpec,
    Plate,
    ShapeSpec,
    add_gaussian_noise,
    crop_overlap,
    denormalize,
    make_pair,
    normalize_unit_sphere,
    random_shape,
    sample_rigid_transform,
    sample_surface,
    transform_from_normalized,
    transform_to_normalized,
)

from conftest import random_transform


class TestSampleSurface:
    def test_unit_cube_face_counts_multinomial(self):
        k = 800
        spec = ShapeSpec(seed=0, primitives=(Plate((0.0, 0.0, 0.0), (1.0, 1.0, 1.0)),))
        cloud = sample_surface(spec, 6 * k, seed=5)
        pts = cloud.points
        sigma = np.sqrt(6 * k * (1 / 6) * (5 / 6))
        for axis in range(3):
            for sign in (-0.5, 0.5):
                count = np.sum(np.abs(pts[:, axis] - sign) < 1e-12)
                assert abs(count - k) < 3 * sigma

    def test_deterministic_in_seed(self):
        spec = random_shape(3)
        a = sample_surface(spec, 500, seed=7)
        b = sample_surface(spec, 500, seed=7)
        assert np.array_equal(a.points, b.points)
        c = sample_surface(spec, 500, seed=8)
        assert not np.array_equal(a.points, c.points)

    def test_default_count_4096(self):
        cloud = sample_surface(random_shape(1), 4096)
        assert len(cloud) == 4096
        assert cloud.unit == "millimeters"

    def test_extent_within_bounds(self):
        for seed in range(5):
            cloud = sample_surface(random_shape(seed), 1000)
            extent = cloud.points.max(axis=0) - cloud.points.min(axis=0)
            assert np.all(extent <= 800.0) and np.max(extent) >= 100.0

    def test_holes_remove_face_points(self):
        from medpnet.synth import Hole

        spec = ShapeSpec(
            seed=0,
            primitives=(
                Plate((0.0, 0.0, 0.0), (100.0, 100.0, 10.0)),
                Hole((0.0, 0.0, 0.0), (0.0, 0.0, 1.0), 20.0, 10.0),
            ),
        )
        cloud = sample_surface(spec, 4000, seed=1)
        pts = cloud.points
        top = pts[np.abs(pts[:, 2] - 5.0) < 1e-9]
        radial = np.linalg.norm(top[:, :2], axis=1)
        assert np.all(radial >= 20.0 - 1e-6)
        # bore wall exists
        wall = np.abs(np.linalg.norm(pts[:, :2], axis=1) - 20.0) < 1e-9
        assert wall.sum() > 0


class TestNormalization:
    def test_two_point_cloud(self):
        c = PointCloud(np.array([[0.0, 0.0, 0.0], [2.0, 0.0, 0.0]]))
        out, centroid, scale = normalize_unit_sphere(c)
        assert np.allclose(centroid, [1.0, 0.0, 0.0])
        assert scale == pytest.approx(1.0)
        assert np.allclose(np.sort(out.points[:, 0]), [-1.0, 1.0])

    def test_already_normalized(self, rng):
        pts = rng.normal(size=(50, 3))
        pts -= pts.mean(axis=0)
        pts /= np.max(np.linalg.norm(pts, axis=1))
        # Recenter exactly so centroid is zero after the division.
        pts -= pts.mean(axis=0)
        pts /= max(1.0, np.max(np.linalg.norm(pts, axis=1)))
        out, centroid, scale = normalize_unit_sphere(PointCloud(pts, unit="normalized"))
        assert np.allclose(centroid, 0.0, atol=1e-12)
        assert scale == pytest.approx(1.0, abs=1e-9)

    def test_invariants_and_round_trip(self, rng):
        cloud = sample_surface(random_shape(2), 600)
        out, centroid, scale = normalize_unit_sphere(cloud)
        assert np.max(np.abs(out.points.mean(axis=0))) < 1e-12
        assert np.max(np.linalg.norm(out.points, axis=1)) == pytest.approx(1.0, abs=1e-12)
        back = denormalize(out, centroid, scale)
        assert np.max(np.abs(back.points - cloud.points)) < 1e-9

    def test_transform_frame_round_trip(self, rng):
        T = random_transform(rng, max_translation=50.0)
        c_src = rng.normal(size=3) * 10
        c_dst = rng.normal(size=3) * 10
        s = 123.4
        T_n = transform_to_normalized(T, c_src, c_dst, s)
        T_back = transform_from_normalized(T_n, c_src, c_dst, s)
        assert np.max(np.abs(T_back.R - T.R)) < 1e-12
        assert np.max(np.abs(T_back.t - T.t)) < 1e-9

    def test_frame_conversion_maps_points_consistently(self, rng):
        T = random_transform(rng, max_translation=30.0)
        x = rng.normal(size=(20, 3)) * 40
        y = x @ T.R.T + T.t
        c_src, c_dst, s = x.mean(axis=0), y.mean(axis=0), 77.0
        T_n = transform_to_normalized(T, c_src, c_dst, s)
        xn = (x - c_src) / s
        yn = (y - c_dst) / s
        assert np.max(np.abs(xn @ T_n.R.T + T_n.t - yn)) < 1e-12


class TestNoiseAndCrop:
    def test_zero_sigma_identity(self, rng):
        cloud = sample_surface(random_shape(4), 200)
        out = add_gaussian_noise(cloud, 0.0, seed=3)
        assert out is cloud

    def test_sigma_estimator(self):
        cloud = sample_surface(random_shape(4), 4096)
        out = add_gaussian_noise(cloud, 0.1, seed=3)
        disp = out.points - cloud.points
        for axis in range(3):
            assert np.std(disp[:, axis]) == pytest.approx(0.1, rel=0.05)

    def test_noise_deterministic(self):
        cloud = sample_surface(random_shape(4), 500)
        a = add_gaussian_noise(cloud, 0.5, seed=9)
        b = add_gaussian_noise(cloud, 0.5, seed=9)
        assert np.array_equal(a.points, b.points)

    def test_crop_keep_all(self):
        cloud = sample_surface(random_shape(5), 300)
        assert crop_overlap(cloud, 1.0, seed=1) is cloud

    def test_crop_count_and_contiguity(self):
        cloud = sample_surface(random_shape(5), 4096)
        out = crop_overlap(cloud, 0.9, seed=2)
        assert abs(len(out) - 3686) <= 1
        # Removed ids form a ball: some removed point (the patch center) is
        # closer to every removed point than to any kept point.
        removed = np.setdiff1d(cloud.provenance, out.provenance)
        kept_pts = out.points
        removed_pts = cloud.points[np.isin(cloud.provenance, removed)]
        found_center = False
        for center in removed_pts:
            r_max = np.max(np.linalg.norm(removed_pts - center, axis=1))
            k_min = np.min(np.linalg.norm(kept_pts - center, axis=1))
            if r_max <= k_min:
                found_center = True
                break
        assert found_center

    def test_crop_reproducible(self):
        cloud = sample_surface(random_shape(5), 1000)
        a = crop_overlap(cloud, 0.8, seed=11)
        b = crop_overlap(cloud, 0.8, seed=11)
        assert np.array_equal(a.points, b.points)


class TestMakePair:
    def test_identity_spec_gives_equal_clouds(self):
        cloud = sample_surface(random_shape(6), 400)
        spec = PairSpec(
            seed=1,
            rotation_range_deg=(0.0, 0.0),
            translation_range_mm=(0.0, 0.0),
            scale_range=(1.0, 1.0),
            overlap_ratio=1.0,
        )
        X, Y, T_gt, (ix, iy) = make_pair(cloud, spec)
        assert np.max(np.abs(T_gt.as_matrix() - np.eye(4))) < 1e-12
        assert np.array_equal(X.points, Y.points)
        assert len(ix) == len(X)

    def test_rotation_statistics_match_uniform(self):
        from medpnet.geometry import geodesic_angle

        angles = []
        rng_master = np.random.default_rng(0)
        for seed in range(1000):
            rng = np.random.default_rng(seed)
            T = sample_rigid_transform(rng, (0.0, 60.0), (0.0, 0.0))
            angles.append(np.rad2deg(geodesic_angle(T.R, np.eye(3))))
        angles = np.array(angles)
        assert angles.max() <= 60.0
        # Quantiles of U[0, 60]: allow generous sampling slack.
        for q, expected in ((0.25, 15.0), (0.5, 30.0), (0.75, 45.0)):
            assert abs(np.quantile(angles, q) - expected) < 3.0

    def test_overlap_ratio_met(self):
        cloud = sample_surface(random_shape(7), 2000)
        for seed in range(5):
            spec = PairSpec(seed=seed, overlap_ratio=0.85)
            X, Y, T_gt, (ix, iy) = make_pair(cloud, spec)
            assert len(ix) / len(X) >= 0.85

    def test_ground_truth_consistency(self):
        cloud = sample_surface(random_shape(8), 1500)
        spec = PairSpec(seed=3, overlap_ratio=0.9)
        X, Y, T_gt, (ix, iy) = make_pair(cloud, spec)
        moved = apply_transform(T_gt, PointCloud(X.points[ix], unit=X.unit))
        assert point_rmse(moved.points, Y.points[iy]) < 1e-9

    def test_magnitudes_within_ranges(self):
        from medpnet.geometry import geodesic_angle

        cloud = sample_surface(random_shape(9), 800)
        for seed in range(10):
            spec = PairSpec(seed=seed, rotation_range_deg=(0, 45), translation_range_mm=(0, 100))
            _, _, T_gt, _ = make_pair(cloud, spec)
            assert np.rad2deg(geodesic_angle(T_gt.R, np.eye(3))) <= 45.0 + 1e-9
            assert np.linalg.norm(T_gt.t) <= 100.0 + 1e-9

    def test_deterministic(self):
        cloud = sample_surface(random_shape(10), 600)
        spec = PairSpec(seed=5)
        X1, Y1, T1, _ = make_pair(cloud, spec)
        X2, Y2, T2, _ = make_pair(cloud, spec)
        assert np.array_equal(X1.points, X2.points)
        assert np.array_equal(Y1.points, Y2.points)
        assert np.array_equal(T1.as_matrix(), T2.as_matrix())

    def test_infeasible_overlap_raises(self):
        # Full overlap demanded while erasure keeps deleting different
        # regions from each side: cannot be satisfied.
        cloud = sample_surface(random_shape(11), 400)
        spec = PairSpec(seed=1, overlap_ratio=1.0, erase_patches=2, erase_radius_mm=60.0)
        with pytest.raises(OverlapInfeasible):
            make_pair(cloud, spec)
