"""SE(3) geometry, nearest-neighbor search, closed-form alignment, and error metrics.

Everything in this module is exact, pure, and immutable after construction:
clouds, transforms, and trees can be shared freely across workers.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.transform import Rotation

from .errors import (
    DegenerateConfiguration,
    GimbalLockWarning,
    LogNearBranchCut,
    SizeMismatch,
)

UNIT_MILLIMETERS = "millimeters"
UNIT_NORMALIZED = "normalized"
_UNITS = (UNIT_MILLIMETERS, UNIT_NORMALIZED)


def _readonly(a: np.ndarray) -> np.ndarray:
    out = np.ascontiguousarray(a, dtype=np.float64)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class PointCloud:
    """Ordered set of 3-D points with a unit tag.

    Parameters
    ----------
    points : (N, 3) float array
        Coordinates, all finite, N >= 1.
    unit : str
        Either ``"millimeters"`` or ``"normalized"``. Normalized clouds must
        fit inside the unit sphere (max norm <= 1 + 1e-9).
    provenance : (N,) int array, optional
        Original sample ids, kept through cropping/transforming so that
        ground-truth correspondences survive augmentation.
    """

    points: np.ndarray
    unit: str = UNIT_MILLIMETERS
    provenance: np.ndarray | None = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] < 1:
            raise ValueError(f"points must be (N, 3) with N >= 1, got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ValueError("points contain non-finite coordinates")
        if self.unit not in _UNITS:
            raise ValueError(f"unit must be one of {_UNITS}, got {self.unit!r}")
        if self.unit == UNIT_NORMALIZED:
            max_norm = float(np.max(np.linalg.norm(pts, axis=1)))
            if max_norm > 1.0 + 1e-9:
                raise ValueError(f"normalized cloud has max norm {max_norm}")
        object.__setattr__(self, "points", _readonly(pts))
        if self.provenance is not None:
            prov = np.ascontiguousarray(self.provenance, dtype=np.int64)
            if prov.shape != (pts.shape[0],):
                raise ValueError("provenance must be one id per point")
            prov.setflags(write=False)
            object.__setattr__(self, "provenance", prov)

    def __len__(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True)
class RigidTransform:
    """Rotation + translation pair; R must be a proper rotation.

    Construction enforces the SO(3) invariants (R^T R = I and det R = 1,
    both within 1e-9), so any value of this type is a valid rigid motion.
    """

    R: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.R, dtype=np.float64)
        t = np.asarray(self.t, dtype=np.float64).reshape(3)
        if R.shape != (3, 3):
            raise ValueError(f"R must be 3x3, got {R.shape}")
        if not (np.all(np.isfinite(R)) and np.all(np.isfinite(t))):
            raise ValueError("non-finite transform")
        if np.max(np.abs(R.T @ R - np.eye(3))) > 1e-9:
            raise ValueError("R is not orthonormal within 1e-9")
        if abs(np.linalg.det(R) - 1.0) > 1e-9:
            raise ValueError("det(R) != 1 within 1e-9")
        object.__setattr__(self, "R", _readonly(R))
        object.__setattr__(self, "t", _readonly(t))

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, M: np.ndarray) -> "RigidTransform":
        M = np.asarray(M, dtype=np.float64)
        return cls(M[:3, :3], M[:3, 3])

    @classmethod
    def from_flat(cls, values: Sequence[float]) -> "RigidTransform":
        """Build from the 12-number row-major encoding [r00..r22, t0, t1, t2]."""
        v = np.asarray(values, dtype=np.float64).reshape(12)
        return cls(v[:9].reshape(3, 3), v[9:])

    def as_matrix(self) -> np.ndarray:
        M = np.eye(4)
        M[:3, :3] = self.R
        M[:3, 3] = self.t
        return M

    def as_flat(self) -> list[float]:
        return [*self.R.reshape(9).tolist(), *self.t.tolist()]


@dataclass(frozen=True)
class Twist:
    """se(3) tangent coordinate: translation part rho, axis-angle part theta."""

    rho: np.ndarray
    theta: np.ndarray

    def __post_init__(self):
        rho = np.asarray(self.rho, dtype=np.float64).reshape(3)
        theta = np.asarray(self.theta, dtype=np.float64).reshape(3)
        if not (np.all(np.isfinite(rho)) and np.all(np.isfinite(theta))):
            raise ValueError("non-finite twist")
        if np.linalg.norm(theta) >= np.pi:
            raise ValueError("rotation part must stay inside the principal branch")
        object.__setattr__(self, "rho", _readonly(rho))
        object.__setattr__(self, "theta", _readonly(theta))

    @classmethod
    def zero(cls) -> "Twist":
        return cls(np.zeros(3), np.zeros(3))

    @classmethod
    def from_vector(cls, v: np.ndarray) -> "Twist":
        v = np.asarray(v, dtype=np.float64).reshape(6)
        return cls(v[:3], v[3:])

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.rho, self.theta])


# ---------------------------------------------------------------------------
# Transform algebra
# ---------------------------------------------------------------------------

def apply_transform(T: RigidTransform, cloud: PointCloud) -> PointCloud:
    """Map every point to R x + t; unit and provenance are preserved."""
    pts = cloud.points @ T.R.T + T.t
    return PointCloud(pts, unit=cloud.unit, provenance=cloud.provenance)


def apply_to_points(T: RigidTransform, points: np.ndarray) -> np.ndarray:
    """Same map as :func:`apply_transform` on a bare (N, 3) array."""
    return np.asarray(points, dtype=np.float64) @ T.R.T + T.t


def compose(A: RigidTransform, B: RigidTransform) -> RigidTransform:
    """Transform equal to applying B first, then A."""
    return RigidTransform(A.R @ B.R, A.R @ B.t + A.t)


def invert(T: RigidTransform) -> RigidTransform:
    return RigidTransform(T.R.T, -(T.R.T @ T.t))


def skew(v: np.ndarray) -> np.ndarray:
    """Skew-symmetric matrix [v]_x with [v]_x p = v x p."""
    x, y, z = np.asarray(v, dtype=np.float64).reshape(3)
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def _v_matrix(theta: np.ndarray) -> np.ndarray:
    # V couples the translation twist to the rotation: t = V rho.
    angle = float(np.linalg.norm(theta))
    K = skew(theta)
    if angle < 1e-4:
        a2 = angle * angle
        A = 0.5 - a2 / 24.0 + a2 * a2 / 720.0
        B = 1.0 / 6.0 - a2 / 120.0 + a2 * a2 / 5040.0
    else:
        A = (1.0 - np.cos(angle)) / (angle * angle)
        B = (angle - np.sin(angle)) / (angle * angle * angle)
    return np.eye(3) + A * K + B * (K @ K)


def _v_matrix_inv(theta: np.ndarray) -> np.ndarray:
    angle = float(np.linalg.norm(theta))
    K = skew(theta)
    if angle < 1e-4:
        a2 = angle * angle
        C = 1.0 / 12.0 + a2 / 720.0 + a2 * a2 / 30240.0
    else:
        C = (1.0 - 0.5 * angle * np.sin(angle) / (1.0 - np.cos(angle))) / (angle * angle)
    return np.eye(3) - 0.5 * K + C * (K @ K)


def se3_exp(v: Twist) -> RigidTransform:
    """Exponential map from twist coordinates to a rigid transform."""
    R = Rotation.from_rotvec(np.array(v.theta)).as_matrix()
    t = _v_matrix(v.theta) @ v.rho
    return RigidTransform(R, t)


def se3_log(T: RigidTransform) -> Twist:
    """Principal-branch logarithm; rejects rotations within 1e-6 of pi."""
    theta = Rotation.from_matrix(np.array(T.R)).as_rotvec()
    angle = float(np.linalg.norm(theta))
    if angle >= np.pi - 1e-6:
        raise LogNearBranchCut(f"rotation angle {angle:.9f} rad is too close to pi")
    rho = _v_matrix_inv(theta) @ T.t
    return Twist(rho, theta)


def rotation_about_axis(axis: np.ndarray, angle_deg: float) -> np.ndarray:
    """Rotation matrix about an arbitrary (unnormalized) axis, angle in degrees."""
    axis = np.asarray(axis, dtype=np.float64).reshape(3)
    n = np.linalg.norm(axis)
    if n == 0.0:
        raise ValueError("axis must be nonzero")
    return Rotation.from_rotvec(axis / n * np.deg2rad(angle_deg)).as_matrix()


def rot_z(angle_deg: float) -> np.ndarray:
    return rotation_about_axis([0.0, 0.0, 1.0], angle_deg)


def geodesic_angle(R_a: np.ndarray, R_b: np.ndarray) -> float:
    """Relative rotation angle in radians between two rotation matrices.

    Computed through the quaternion magnitude, which stays accurate for
    tiny angles where the trace formula bottoms out near 1e-8.
    """
    rel = np.array(np.asarray(R_a).T @ np.asarray(R_b))
    return float(Rotation.from_matrix(rel).magnitude())


# ---------------------------------------------------------------------------
# Closed-form alignment
# ---------------------------------------------------------------------------

def kabsch(
    src: PointCloud | np.ndarray,
    dst: PointCloud | np.ndarray,
    weights: np.ndarray | None = None,
) -> RigidTransform:
    """Weighted least-squares rigid motion mapping src onto dst.

    Reflection is corrected by flipping the sign of the last singular
    vector whenever the candidate determinant is negative, so the result
    is always a proper rotation.

    Raises
    ------
    DegenerateConfiguration
        Fewer than 3 points, or the weighted covariance has rank < 2
        (e.g. all points collinear).
    """
    a = src.points if isinstance(src, PointCloud) else np.asarray(src, dtype=np.float64)
    b = dst.points if isinstance(dst, PointCloud) else np.asarray(dst, dtype=np.float64)
    if a.shape != b.shape:
        raise SizeMismatch(f"src {a.shape} vs dst {b.shape}")
    n = a.shape[0]
    if n < 3:
        raise DegenerateConfiguration(f"need at least 3 point pairs, got {n}")
    if weights is None:
        w = np.full(n, 1.0 / n)
    else:
        w = np.asarray(weights, dtype=np.float64).reshape(n)
        if np.any(w < 0.0):
            raise ValueError("weights must be nonnegative")
        total = w.sum()
        if total <= 0.0:
            raise ValueError("weights must not all be zero")
        w = w / total

    mu_a = w @ a
    mu_b = w @ b
    A = a - mu_a
    B = b - mu_b
    C = (A * w[:, None]).T @ B
    U, S, Vt = np.linalg.svd(C)
    if S[1] <= 1e-9 * max(S[0], np.finfo(float).tiny):
        raise DegenerateConfiguration("weighted covariance has rank < 2")
    d = np.sign(np.linalg.det(Vt.T @ U.T))
    R = Vt.T @ np.diag([1.0, 1.0, d]) @ U.T
    t = mu_b - R @ mu_a
    return RigidTransform(R, t)


# ---------------------------------------------------------------------------
# Nearest-neighbor search
# ---------------------------------------------------------------------------

class KdTree:
    """Immutable spatial index with deterministic tie-breaking.

    Queries match brute force exactly: neighbors come back sorted by
    ascending distance, equal distances broken by ascending point index.
    """

    def __init__(self, cloud: PointCloud | np.ndarray):
        pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=np.float64)
        self._points = _readonly(pts)
        self._tree = cKDTree(self._points)

    @property
    def size(self) -> int:
        return self._points.shape[0]

    @property
    def points(self) -> np.ndarray:
        return self._points

    def query_points(self, queries: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Batch 1-NN lookup (indices, distances); no tie repair (hot path)."""
        d, i = self._tree.query(np.asarray(queries, dtype=np.float64), k=1)
        return np.asarray(i, dtype=np.int64).reshape(-1), np.asarray(d).reshape(-1)


def k_nearest(tree: KdTree, query: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """k exact nearest neighbors of one query point.

    Returns (indices, distances) sorted by (distance, index). k must not
    exceed the tree size.
    """
    if k < 1 or k > tree.size:
        raise ValueError(f"k must be in [1, {tree.size}], got {k}")
    q = np.asarray(query, dtype=np.float64).reshape(3)
    probe = min(tree.size, k + 16)
    while True:
        d, i = tree._tree.query(q, k=probe)
        d = np.atleast_1d(np.asarray(d, dtype=np.float64))
        i = np.atleast_1d(np.asarray(i, dtype=np.int64))
        # Escalate if the k-th distance still ties with dropped candidates.
        if probe < tree.size and d[k - 1] == d[-1]:
            probe = min(tree.size, probe * 2)
            continue
        order = np.lexsort((i, d))[:k]
        return i[order], d[order]


def nearest_neighbor(tree: KdTree, query: np.ndarray) -> tuple[int, float]:
    idx, dist = k_nearest(tree, query, 1)
    return int(idx[0]), float(dist[0])


# ---------------------------------------------------------------------------
# Error metrics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ErrorStats:
    """mse / rmse / mae triple over residual components."""

    mse: float
    rmse: float
    mae: float


@dataclass(frozen=True)
class RegistrationMetrics:
    mse_r: float
    rmse_r: float
    mae_r: float
    mse_t: float
    rmse_t: float
    mae_t: float
    point_rmse: float
    elapsed_seconds: float


def euler_zyx_degrees(R: np.ndarray) -> np.ndarray:
    """Intrinsic Z-Y-X Euler angles in degrees, as [yaw, pitch, roll]."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")  # scipy's own gimbal warning; we flag below
        return Rotation.from_matrix(np.array(R, dtype=np.float64)).as_euler("ZYX", degrees=True)


def _wrap_degrees(d: np.ndarray) -> np.ndarray:
    # Wrap to (-180, 180], mapping the -180 edge up to +180.
    w = (np.asarray(d) + 180.0) % 360.0 - 180.0
    return np.where(w == -180.0, 180.0, w)


def rotation_errors(R_pred: np.ndarray, R_gt: np.ndarray) -> ErrorStats:
    """Per-component Euler-angle residual statistics in degrees.

    Residuals are differences of intrinsic Z-Y-X angles wrapped to
    (-180, 180], averaged over the three components. Emits
    GimbalLockWarning when either pitch passes 89.9 degrees; the value is
    still returned.
    """
    e_pred = euler_zyx_degrees(R_pred)
    e_gt = euler_zyx_degrees(R_gt)
    if abs(e_pred[1]) > 89.9 or abs(e_gt[1]) > 89.9:
        warnings.warn("pitch near +/-90 deg; Euler residuals ill-conditioned", GimbalLockWarning)
    res = _wrap_degrees(e_pred - e_gt)
    mse = float(np.mean(res**2))
    return ErrorStats(mse=mse, rmse=float(np.sqrt(mse)), mae=float(np.mean(np.abs(res))))


def translation_errors(t_pred: np.ndarray, t_gt: np.ndarray) -> ErrorStats:
    """Per-component translation residual statistics, in the cloud's unit."""
    res = np.asarray(t_pred, dtype=np.float64).reshape(3) - np.asarray(t_gt, dtype=np.float64).reshape(3)
    mse = float(np.mean(res**2))
    return ErrorStats(mse=mse, rmse=float(np.sqrt(mse)), mae=float(np.mean(np.abs(res))))


def point_rmse(a: PointCloud | np.ndarray, b: PointCloud | np.ndarray) -> float:
    """Root mean squared pairwise distance between index-paired clouds."""
    pa = a.points if isinstance(a, PointCloud) else np.asarray(a, dtype=np.float64)
    pb = b.points if isinstance(b, PointCloud) else np.asarray(b, dtype=np.float64)
    if pa.shape != pb.shape:
        raise SizeMismatch(f"paired clouds differ: {pa.shape} vs {pb.shape}")
    return float(np.sqrt(np.mean(np.sum((pa - pb) ** 2, axis=1))))


def registration_metrics(
    T_pred: RigidTransform,
    T_gt: RigidTransform,
    points: np.ndarray,
    elapsed_seconds: float = 0.0,
) -> RegistrationMetrics:
    """Bundle rotation/translation/point residual metrics for one pair."""
    rot = rotation_errors(T_pred.R, T_gt.R)
    tra = translation_errors(T_pred.t, T_gt.t)
    prm = point_rmse(apply_to_points(T_pred, points), apply_to_points(T_gt, points))
    return RegistrationMetrics(
        mse_r=rot.mse,
        rmse_r=rot.rmse,
        mae_r=rot.mae,
        mse_t=tra.mse,
        rmse_t=tra.rmse,
        mae_t=tra.mae,
        point_rmse=prm,
        elapsed_seconds=elapsed_seconds,
    )
