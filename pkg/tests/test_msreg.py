import numpy as np
import pytest

from medpnet.errors import AllPointsOutsideGrid, NoCorrespondences, NoValidCells
from medpnet.geometry import (
    PointCloud,
    RigidTransform,
    apply_transform,
    compose,
    geodesic_angle,
    invert,
    point_rmse,
)
from medpnet.msreg import (
    IcpConfig,
    NdtConfig,
    PyramidConfig,
    build_ndt_grid,
    build_pyramid,
    icp,
    multiscale_icp,
    multiscale_ndt,
    ndt,
    ndt_gradient,
    ndt_score,
    voxel_downsample,
)
from medpnet.synth import normalize_unit_sphere, random_shape, sample_rigid_transform, sample_surface

from conftest import random_transform


def part_cloud(seed, n=1000):
    # Unit-scale coordinates, but tagged millimeters: rigid motions push
    # points outside the unit ball, which the "normalized" tag forbids.
    cloud, _, _ = normalize_unit_sphere(sample_surface(random_shape(seed), n))
    return PointCloud(cloud.points, unit="millimeters", provenance=cloud.provenance)


class TestPyramid:
    def test_single_level_is_original(self):
        c = part_cloud(0, 400)
        pyr = build_pyramid(c, PyramidConfig(levels=1, voxel_fractions=(0.1,)))
        assert len(pyr) == 1 and pyr[0] is c

    def test_sizes_nondecreasing_and_finest_original(self):
        c = part_cloud(1, 1500)
        pyr = build_pyramid(c, PyramidConfig())
        sizes = [len(p) for p in pyr]
        assert sizes == sorted(sizes)
        assert pyr[-1] is c

    def test_huge_voxel_gives_single_centroid(self):
        c = part_cloud(2, 300)
        down = voxel_downsample(c, voxel_size=100.0)
        assert len(down) == 1
        assert np.allclose(down.points[0], c.points.mean(axis=0))

    def test_voxel_centroids_match_brute_force(self, rng):
        pts = rng.uniform(0, 1, size=(500, 3))
        c = PointCloud(pts)
        v = 0.23
        down = voxel_downsample(c, v)
        origin = pts.min(axis=0)
        keys = np.floor((pts - origin) / v).astype(int)
        uniq = np.unique(keys, axis=0)
        assert len(down) == len(uniq)
        for key in uniq:
            members = pts[np.all(keys == key, axis=1)]
            centroid = members.mean(axis=0)
            d = np.linalg.norm(down.points - centroid, axis=1)
            assert d.min() < 1e-12

    def test_pyramid_deterministic(self):
        c = part_cloud(3, 800)
        a = build_pyramid(c, PyramidConfig())
        b = build_pyramid(c, PyramidConfig())
        for pa, pb in zip(a, b):
            assert np.array_equal(pa.points, pb.points)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            PyramidConfig(levels=2, voxel_fractions=(0.05, 0.1))
        with pytest.raises(ValueError):
            PyramidConfig(levels=2, voxel_fractions=(0.1,))


class TestIcp:
    def test_identity_on_equal_clouds(self):
        c = part_cloud(4, 500)
        res = icp(c, c)
        assert res.rmse < 1e-12
        assert res.iterations <= 2
        assert np.max(np.abs(res.transform.as_matrix() - np.eye(4))) < 1e-9

    def test_recovers_transform_from_close_init(self, rng):
        for seed in range(5):
            c = part_cloud(10 + seed, 800)
            T = sample_rigid_transform(np.random.default_rng(seed), (0.0, 10.0), (0.0, 0.05))
            Y = apply_transform(T, c)
            res = icp(c, Y)
            moved = apply_transform(res.transform, c)
            assert point_rmse(moved, Y) < 1e-6

    def test_no_overlap_raises(self):
        c = part_cloud(5, 300)
        far = PointCloud(c.points + 100.0)
        with pytest.raises(NoCorrespondences):
            icp(c, far, cfg=IcpConfig(rejection_distance=0.01))

    def test_trace_monotone_nonincreasing(self, rng):
        c = part_cloud(6, 600)
        T = sample_rigid_transform(rng, (0.0, 15.0), (0.0, 0.1))
        res = icp(c, apply_transform(T, c))
        assert all(b <= a + 1e-15 for a, b in zip(res.trace, res.trace[1:]))

    def test_returns_valid_transform(self, rng):
        c = part_cloud(7, 500)
        T = sample_rigid_transform(rng, (0.0, 10.0), (0.0, 0.05))
        res = icp(c, apply_transform(T, c))
        R = res.transform.R
        assert np.max(np.abs(R.T @ R - np.eye(3))) < 1e-9


class TestNdtGrid:
    def test_five_identical_points(self):
        pts = np.tile([[0.3, 0.4, 0.5]], (5, 1))
        grid = build_ndt_grid(PointCloud(pts), cell_size=1.0)
        assert len(grid) == 1
        assert np.allclose(grid.means[0], [0.3, 0.4, 0.5])
        lam = np.linalg.eigvalsh(grid.covariances[0])
        assert lam[0] > 0
        assert np.allclose(lam, lam[0])  # isotropic floor

    def test_known_gaussian_statistics(self, rng):
        pts = rng.normal(loc=[0.5, 0.5, 0.5], scale=0.05, size=(100, 3))
        grid = build_ndt_grid(PointCloud(pts), cell_size=10.0)
        assert len(grid) == 1
        assert np.allclose(grid.means[0], pts.mean(axis=0), atol=1e-12)
        assert np.allclose(grid.covariances[0], np.cov(pts.T, ddof=1), atol=1e-12)

    def test_too_few_points_raises(self):
        pts = np.eye(4, 3) * 100.0  # 4 points, scattered cells
        with pytest.raises(NoValidCells):
            build_ndt_grid(PointCloud(pts), cell_size=0.5)

    def test_covariances_spd_with_floor(self):
        c = part_cloud(8, 2000)
        grid = build_ndt_grid(c, cell_size=0.15)
        lam = np.linalg.eigvalsh(grid.covariances)
        assert np.all(lam[:, 0] > 0)
        assert np.all(lam[:, 0] >= 0.01 * lam[:, -1] - 1e-15)

    def test_locate_matches_floor_formula(self):
        c = part_cloud(9, 1500)
        grid = build_ndt_grid(c, cell_size=0.2)
        rows = grid.locate(c.points)
        inside = rows >= 0
        keys = np.floor((c.points[inside] - grid.origin) / grid.cell_size).astype(np.int64)
        assert np.array_equal(grid.keys[rows[inside]], keys)


class TestNdt:
    def test_score_zero_at_grid_means(self):
        c = part_cloud(11, 2000)
        grid = build_ndt_grid(c, cell_size=0.2)
        X = PointCloud(grid.means)
        res = ndt(X, grid)
        assert res.score < 1e-18
        assert res.iterations == 1
        g = ndt_gradient(X, grid, RigidTransform.identity())
        assert np.linalg.norm(g) < 1e-10

    def test_recovers_transform(self, rng):
        ok = 0
        for seed in range(5):
            c = part_cloud(20 + seed, 2000)
            T = sample_rigid_transform(np.random.default_rng(seed), (0.0, 8.0), (0.0, 0.05))
            Y = apply_transform(T, c)
            grid = build_ndt_grid(Y, cell_size=0.12)
            res = ndt(c, grid, cfg=NdtConfig(max_iterations=60))
            moved = apply_transform(res.transform, c)
            if point_rmse(moved, Y) < 1e-3:
                ok += 1
        assert ok >= 4

    def test_analytic_gradient_matches_finite_differences(self, rng):
        # FD oracle on the smooth branch: cell assignments frozen at the
        # expansion point (the true score is piecewise-smooth and jumps
        # when a point crosses a cell boundary, e.g. at the grid origin).
        from scipy.spatial.transform import Rotation

        c = part_cloud(12, 1200)
        grid = build_ndt_grid(c, cell_size=0.25)
        h = 1e-7

        def frozen_score(T, ci, valid):
            P = c.points @ T.R.T + T.t
            r = P[valid] - grid.means[ci]
            Q = grid.inv_covariances[ci]
            return 0.5 * float(np.einsum("ni,nij,nj->", r, Q, r))

        for trial in range(5):
            T = sample_rigid_transform(np.random.default_rng(trial), (0.0, 5.0), (0.0, 0.03))
            rows = grid.locate(c.points @ T.R.T + T.t)
            valid = rows >= 0
            ci = rows[valid]
            g = ndt_gradient(c, grid, T)
            num = np.zeros(6)
            for j in range(6):
                vals = []
                for sign in (+1, -1):
                    delta = np.zeros(6)
                    delta[j] = sign * h
                    R2 = Rotation.from_rotvec(delta[3:]).as_matrix() @ T.R
                    vals.append(frozen_score(RigidTransform(R2, T.t + delta[:3]), ci, valid))
                num[j] = (vals[0] - vals[1]) / (2 * h)
            rel = np.abs(num - g) / np.maximum(1.0, np.abs(g))
            assert rel.max() < 1e-5

    def test_score_trace_monotone(self, rng):
        c = part_cloud(13, 1500)
        T = sample_rigid_transform(rng, (0.0, 10.0), (0.0, 0.05))
        Y = apply_transform(T, c)
        grid = build_ndt_grid(Y, cell_size=0.15)
        res = ndt(c, grid)
        assert all(b <= a + 1e-12 for a, b in zip(res.trace, res.trace[1:]))

    def test_all_points_outside(self):
        c = part_cloud(14, 500)
        grid = build_ndt_grid(c, cell_size=0.2)
        far = PointCloud(c.points + 50.0)
        with pytest.raises(AllPointsOutsideGrid):
            ndt(far, grid)


class TestMultiscale:
    def test_levels_1_equals_plain_icp(self, rng):
        c = part_cloud(15, 700)
        T = sample_rigid_transform(rng, (0.0, 10.0), (0.0, 0.05))
        Y = apply_transform(T, c)
        pyr = PyramidConfig(levels=1, voxel_fractions=(0.05,))
        ms = multiscale_icp(c, Y, pyr=pyr)
        plain = icp(c, Y)
        assert np.array_equal(ms.transform.as_matrix(), plain.transform.as_matrix())
        assert ms.final_value == plain.rmse

    def test_levels_1_equals_plain_ndt(self, rng):
        c = part_cloud(16, 1500)
        T = sample_rigid_transform(rng, (0.0, 8.0), (0.0, 0.04))
        Y = apply_transform(T, c)
        pyr = PyramidConfig(levels=1, voxel_fractions=(0.06,))
        ms = multiscale_ndt(c, Y, pyr=pyr)
        from medpnet.msreg import bbox_diagonal

        grid = build_ndt_grid(Y, 0.06 * bbox_diagonal(Y.points))
        plain = ndt(c, grid)
        assert np.array_equal(ms.transform.as_matrix(), plain.transform.as_matrix())

    def test_multiscale_icp_converges_from_30_degrees(self):
        ok = 0
        for seed in range(6):
            c = part_cloud(30 + seed, 1200)
            T = sample_rigid_transform(np.random.default_rng(seed), (30.0, 30.0), (0.0, 0.1))
            Y = apply_transform(T, c)
            res = multiscale_icp(c, Y)
            if point_rmse(apply_transform(res.transform, c), Y) < 1e-2:
                ok += 1
        assert ok >= 3  # the acceptance suite asserts the >= single-scale trend

    def test_per_level_rmse_nonincreasing_on_convergent_run(self):
        # Compared at full resolution: per-level accepted rmse floors are
        # discretization artifacts and not comparable across levels.
        for seed in range(4):
            c = part_cloud(40 + seed, 1000)
            T = sample_rigid_transform(np.random.default_rng(seed), (0.0, 10.0), (0.0, 0.05))
            Y = apply_transform(T, c)
            res = multiscale_icp(c, Y)
            finals = [tr.nn_rmse for tr in res.levels if tr.flag is None]
            assert all(b <= a + 1e-9 for a, b in zip(finals, finals[1:]))

    def test_failed_level_passes_init_and_flags(self):
        c = part_cloud(18, 400)
        Y = PointCloud(c.points + 1000.0)
        res = multiscale_icp(c, Y, cfg=IcpConfig(rejection_distance=0.001))
        assert all(tr.flag == "NoCorrespondences" for tr in res.levels)
        assert np.array_equal(res.transform.as_matrix(), np.eye(4))

    def test_deterministic(self, rng):
        c = part_cloud(19, 900)
        T = sample_rigid_transform(rng, (0.0, 20.0), (0.0, 0.1))
        Y = apply_transform(T, c)
        a = multiscale_ndt(c, Y)
        b = multiscale_ndt(c, Y)
        assert np.array_equal(a.transform.as_matrix(), b.transform.as_matrix())

    def test_trace_csv_export(self, rng, tmp_path):
        import csv

        from medpnet.msreg import write_trace_csv

        c = part_cloud(21, 800)
        T = sample_rigid_transform(rng, (0.0, 15.0), (0.0, 0.05))
        res = multiscale_icp(c, apply_transform(T, c))
        path = tmp_path / "trace.csv"
        write_trace_csv(path, res)
        with open(path) as f:
            rows = list(csv.DictReader(f))
        assert set(rows[0]) == {"level", "iteration", "value", "flag"}
        total_iters = sum(len(tr.values) for tr in res.levels)
        assert len([r for r in rows if r["value"]]) == total_iters
