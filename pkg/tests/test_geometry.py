import numpy as np
import pytest

from medpnet.errors import DegenerateConfiguration, GimbalLockWarning, LogNearBranchCut, SizeMismatch
from medpnet.geometry import (
    KdTree,
    PointCloud,
    RigidTransform,
    Twist,
    apply_to_points,
    apply_transform,
    compose,
    geodesic_angle,
    invert,
    k_nearest,
    kabsch,
    nearest_neighbor,
    point_rmse,
    rot_z,
    rotation_errors,
    se3_exp,
    se3_log,
    translation_errors,
)

from conftest import random_cloud, random_transform


class TestTypes:
    def test_pointcloud_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            PointCloud(np.array([[0.0, 0.0, np.inf]]))

    def test_pointcloud_rejects_empty(self):
        with pytest.raises(ValueError):
            PointCloud(np.zeros((0, 3)))

    def test_normalized_unit_enforces_sphere(self):
        with pytest.raises(ValueError):
            PointCloud(np.array([[2.0, 0.0, 0.0]]), unit="normalized")
        PointCloud(np.array([[1.0, 0.0, 0.0]]), unit="normalized")

    def test_rigid_transform_rejects_reflection(self):
        M = np.diag([1.0, 1.0, -1.0])
        with pytest.raises(ValueError):
            RigidTransform(M, np.zeros(3))

    def test_rigid_transform_rejects_skewed(self):
        M = np.eye(3)
        M[0, 1] = 1e-6
        with pytest.raises(ValueError):
            RigidTransform(M, np.zeros(3))

    def test_twist_branch_limit(self):
        with pytest.raises(ValueError):
            Twist(np.zeros(3), np.array([np.pi, 0.0, 0.0]))

    def test_flat_round_trip(self, rng):
        T = random_transform(rng)
        T2 = RigidTransform.from_flat(T.as_flat())
        assert np.allclose(T2.R, T.R) and np.allclose(T2.t, T.t)


class TestTransformOps:
    def test_identity_apply(self, rng):
        c = random_cloud(rng, 10)
        out = apply_transform(RigidTransform.identity(), c)
        assert np.allclose(out.points, c.points)

    def test_rot_z_90_on_x_axis(self):
        T = RigidTransform(rot_z(90.0), np.zeros(3))
        out = apply_to_points(T, np.array([[1.0, 0.0, 0.0]]))
        assert np.allclose(out, [[0.0, 1.0, 0.0]], atol=1e-15)

    def test_apply_then_inverse_round_trip(self, rng):
        c = random_cloud(rng, 100)
        T = random_transform(rng)
        back = apply_transform(invert(T), apply_transform(T, c))
        assert np.max(np.abs(back.points - c.points)) < 1e-12

    def test_compose_identity(self, rng):
        T = random_transform(rng)
        out = compose(RigidTransform.identity(), T)
        assert np.allclose(out.R, T.R) and np.allclose(out.t, T.t)

    def test_invert_composes_to_identity(self):
        T = RigidTransform(rot_z(30.0), np.array([1.0, 0.0, 0.0]))
        I = compose(T, invert(T))
        assert np.max(np.abs(I.R - np.eye(3))) < 1e-9
        assert np.max(np.abs(I.t)) < 1e-9

    def test_compose_matches_homogeneous_product(self, rng):
        # Oracle: 4x4 homogeneous matrix multiplication.
        for _ in range(20):
            A = random_transform(rng)
            B = random_transform(rng)
            C = compose(A, B)
            M = A.as_matrix() @ B.as_matrix()
            assert np.max(np.abs(C.as_matrix() - M)) < 1e-12

    def test_apply_preserves_pairwise_distances(self, rng):
        c = random_cloud(rng, 50)
        T = random_transform(rng)
        out = apply_transform(T, c)
        d0 = np.linalg.norm(c.points[:, None] - c.points[None, :], axis=-1)
        d1 = np.linalg.norm(out.points[:, None] - out.points[None, :], axis=-1)
        assert np.max(np.abs(d0 - d1)) < 1e-9

    def test_provenance_preserved(self, rng):
        c = PointCloud(rng.normal(size=(5, 3)), provenance=np.arange(5) + 7)
        out = apply_transform(random_transform(rng), c)
        assert np.array_equal(out.provenance, c.provenance)


class TestSe3:
    def test_log_identity_is_zero(self):
        v = se3_log(RigidTransform.identity())
        assert np.allclose(v.as_vector(), 0.0)

    def test_pure_translation(self):
        T = RigidTransform(np.eye(3), np.array([1.0, -2.0, 3.0]))
        v = se3_log(T)
        assert np.allclose(v.rho, T.t) and np.allclose(v.theta, 0.0)

    def test_round_trip_500_random_twists(self, rng):
        for _ in range(500):
            theta = rng.normal(size=3)
            n = np.linalg.norm(theta)
            if n >= np.pi - 1e-3:
                theta *= (np.pi - 1e-3) / n * rng.uniform(0.1, 0.999)
            v = Twist(rng.normal(size=3), theta)
            w = se3_log(se3_exp(v))
            assert np.max(np.abs(w.as_vector() - v.as_vector())) < 1e-9

    def test_exp_log_transform_round_trip(self, rng):
        for _ in range(100):
            T = random_transform(rng, max_angle_deg=170.0)
            T2 = se3_exp(se3_log(T))
            assert np.max(np.abs(T2.R - T.R)) < 1e-9
            assert np.max(np.abs(T2.t - T.t)) < 1e-9

    def test_branch_cut_raises(self):
        T = RigidTransform(rot_z(180.0), np.zeros(3))
        with pytest.raises(LogNearBranchCut):
            se3_log(T)


class TestKabsch:
    def test_identity_on_equal_clouds(self, rng):
        c = random_cloud(rng, 20)
        T = kabsch(c, c)
        assert np.max(np.abs(T.R - np.eye(3))) < 1e-12
        assert np.max(np.abs(T.t)) < 1e-12

    def test_recovers_known_transform(self, rng):
        for _ in range(100):
            c = random_cloud(rng, 30)
            T = random_transform(rng)
            d = apply_transform(T, c)
            T_hat = kabsch(c, d)
            assert geodesic_angle(T_hat.R, T.R) < 1e-9
            assert np.linalg.norm(T_hat.t - T.t) < 1e-9

    def test_weighted_ignores_zero_weight_outlier(self, rng):
        c = random_cloud(rng, 20)
        T = random_transform(rng)
        d = apply_transform(T, c).points.copy()
        d[0] += 100.0
        w = np.ones(20)
        w[0] = 0.0
        T_hat = kabsch(c.points, d, w)
        assert geodesic_angle(T_hat.R, T.R) < 1e-9

    def test_collinear_degenerate(self):
        pts = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]])
        with pytest.raises(DegenerateConfiguration):
            kabsch(pts, pts)

    def test_too_few_points(self):
        pts = np.array([[0.0, 0.0, 0.0], [1.0, 1.0, 0.0]])
        with pytest.raises(DegenerateConfiguration):
            kabsch(pts, pts)

    def test_exact_residual_on_noiseless_pairs(self, rng):
        for _ in range(100):
            c = random_cloud(rng, 25)
            T = random_transform(rng)
            d = apply_transform(T, c)
            T_hat = kabsch(c, d)
            assert point_rmse(apply_transform(T_hat, c), d) < 1e-9


class TestKdTree:
    def test_query_stored_point(self, rng):
        c = random_cloud(rng, 50)
        tree = KdTree(c)
        idx, dist = nearest_neighbor(tree, c.points[17])
        assert idx == 17 and dist == 0.0

    def test_collinear_forced_neighbor(self):
        pts = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]])
        tree = KdTree(pts)
        idx, dist = nearest_neighbor(tree, pts[0] + np.array([1e-12, 0, 0]))
        assert idx == 0
        i, d = k_nearest(tree, pts[0], 2)
        assert list(i) == [0, 1] and d[1] == pytest.approx(1.0)

    def test_tie_broken_by_smaller_index(self):
        # Points 1 and 2 are both at distance 1 from the query.
        pts = np.array([[5.0, 5.0, 5.0], [1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]])
        tree = KdTree(pts)
        idx, _ = nearest_neighbor(tree, np.zeros(3))
        assert idx == 1

    @pytest.mark.parametrize("n", [50, 400, 2000])
    def test_matches_brute_force(self, rng, n):
        pts = rng.uniform(-1, 1, size=(n, 3))
        tree = KdTree(pts)
        queries = rng.uniform(-1, 1, size=(100, 3))
        for q in queries:
            d2 = np.linalg.norm(pts - q, axis=1)
            order = np.lexsort((np.arange(len(pts)), d2))[:5]
            i, d = k_nearest(tree, q, 5)
            assert np.array_equal(i, order)
            assert np.allclose(d, d2[order])

    def test_brute_force_on_grid_with_many_ties(self):
        # Integer grid gives exact distance ties; ordering must match brute force.
        g = np.stack(np.meshgrid(*[np.arange(4.0)] * 3, indexing="ij"), axis=-1).reshape(-1, 3)
        tree = KdTree(g)
        q = np.array([1.5, 1.5, 1.5])
        d2 = np.linalg.norm(g - q, axis=1)
        order = np.lexsort((np.arange(len(g)), d2))[:10]
        i, _ = k_nearest(tree, q, 10)
        assert np.array_equal(i, order)


class TestMetrics:
    def test_zero_errors_for_equal_rotations(self, rng):
        T = random_transform(rng)
        e = rotation_errors(T.R, T.R)
        assert e.mse == 0.0 and e.rmse == 0.0 and e.mae == 0.0

    def test_rot_z_10_degrees(self):
        e = rotation_errors(rot_z(10.0), np.eye(3))
        assert e.mae == pytest.approx(10.0 / 3.0, abs=1e-9)
        assert e.rmse == pytest.approx(10.0 / np.sqrt(3.0), abs=1e-9)

    def test_translation_example(self):
        e = translation_errors(np.array([3.0, 4.0, 0.0]), np.zeros(3))
        assert e.mse == pytest.approx(25.0 / 3.0, abs=1e-12)

    def test_rmse_is_sqrt_mse(self, rng):
        for _ in range(20):
            A = random_transform(rng)
            B = random_transform(rng)
            e = rotation_errors(A.R, B.R)
            assert e.rmse == pytest.approx(np.sqrt(e.mse), abs=1e-12)

    def test_gimbal_warning(self):
        from medpnet.geometry import rotation_about_axis

        R = rotation_about_axis([0.0, 1.0, 0.0], 90.0)
        with pytest.warns(GimbalLockWarning):
            rotation_errors(R, np.eye(3))

    def test_point_rmse_cases(self, rng):
        c = random_cloud(rng, 10)
        assert point_rmse(c, c) == 0.0
        a = np.zeros((1, 3))
        b = np.array([[5.0, 0.0, 0.0]])
        assert point_rmse(a, b) == pytest.approx(5.0)
        a2 = np.zeros((2, 3))
        b2 = np.array([[3.0, 0.0, 0.0], [0.0, 4.0, 0.0]])
        assert point_rmse(a2, b2) == pytest.approx(np.sqrt(12.5), abs=1e-12)

    def test_point_rmse_size_mismatch(self):
        with pytest.raises(SizeMismatch):
            point_rmse(np.zeros((2, 3)), np.zeros((3, 3)))
