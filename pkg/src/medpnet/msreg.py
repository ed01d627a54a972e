"""Classical fine registration: ICP and NDT, single-scale and coarse-to-fine.

Both channels are pure functions; pyramids, trees, and grids are immutable
and can be shared across workers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import (
    AllPointsOutsideGrid,
    DegenerateConfiguration,
    NoCorrespondences,
    NoValidCells,
)
from .geometry import KdTree, PointCloud, RigidTransform, apply_to_points, compose, geodesic_angle, kabsch


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PyramidConfig:
    """Coarse-to-fine schedule, voxel sizes as fractions of the bbox diagonal."""

    levels: int = 3
    voxel_fractions: tuple[float, ...] = (0.10, 0.05, 0.025)

    def __post_init__(self):
        if self.levels < 1:
            raise ValueError("levels must be >= 1")
        if len(self.voxel_fractions) != self.levels:
            raise ValueError("need one voxel fraction per level")
        fr = self.voxel_fractions
        if any(b >= a for a, b in zip(fr, fr[1:])) or any(f <= 0 for f in fr):
            raise ValueError("voxel fractions must be positive and strictly decreasing")


@dataclass(frozen=True)
class IcpConfig:
    """Per-level ICP settings.

    rejection_distance None means auto: 2x the median nearest-neighbor
    spacing of the target at that level.
    """

    max_iterations: int = 50
    rejection_distance: float | None = None
    tol_step: float = 1e-9
    tol_rmse: float = 1e-8

    def __post_init__(self):
        if self.max_iterations < 1 or self.tol_step <= 0 or self.tol_rmse <= 0:
            raise ValueError("ICP config values must be positive")
        if self.rejection_distance is not None and self.rejection_distance <= 0:
            raise ValueError("rejection_distance must be positive")


@dataclass(frozen=True)
class NdtConfig:
    """Damped Gauss-Newton settings for the NDT channel."""

    max_iterations: int = 30
    lambda0: float = 1e-6
    backoff: float = 10.0
    tol_step: float = 1e-9
    tol_score: float = 1e-8  # relative score decrease

    def __post_init__(self):
        if min(self.max_iterations, self.lambda0, self.backoff, self.tol_step, self.tol_score) <= 0:
            raise ValueError("NDT config values must be positive")


# ---------------------------------------------------------------------------
# Pyramid
# ---------------------------------------------------------------------------

def bbox_diagonal(points: np.ndarray) -> float:
    pts = np.asarray(points, dtype=np.float64)
    return float(np.linalg.norm(pts.max(axis=0) - pts.min(axis=0)))


def voxel_downsample(cloud: PointCloud, voxel_size: float) -> PointCloud:
    """Centroid per occupied voxel, voxels ordered lexicographically."""
    if voxel_size <= 0:
        raise ValueError("voxel_size must be positive")
    pts = cloud.points
    origin = pts.min(axis=0)
    keys = np.floor((pts - origin) / voxel_size).astype(np.int64)
    uniq, inverse = np.unique(keys, axis=0, return_inverse=True)
    sums = np.zeros((len(uniq), 3))
    np.add.at(sums, inverse, pts)
    counts = np.bincount(inverse, minlength=len(uniq)).astype(np.float64)
    return PointCloud(sums / counts[:, None], unit=cloud.unit)


def build_pyramid(cloud: PointCloud, cfg: PyramidConfig) -> list[PointCloud]:
    """Clouds coarse to fine; the finest level is the original cloud."""
    diag = bbox_diagonal(cloud.points)
    out = []
    for frac in cfg.voxel_fractions[:-1]:
        out.append(voxel_downsample(cloud, frac * diag))
    out.append(cloud)
    return out


# ---------------------------------------------------------------------------
# ICP
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class IcpResult:
    transform: RigidTransform
    rmse: float
    iterations: int
    trace: tuple[float, ...]
    converged: bool


def median_nn_spacing(points: np.ndarray) -> float:
    tree = KdTree(points)
    d, _ = tree._tree.query(points, k=2)
    return float(np.median(d[:, 1]))


def icp(
    X: PointCloud,
    Y: PointCloud,
    init: RigidTransform | None = None,
    cfg: IcpConfig = IcpConfig(),
) -> IcpResult:
    """Point-to-point ICP with distance rejection.

    Alternates nearest-neighbor matching of the transformed source into a
    KD-tree on the target with a closed-form update on the accepted pairs.
    The reported accepted-pair RMSE trace is monotone nonincreasing: an
    iteration that fails to improve reverts to the incumbent and stops.
    """
    if len(X) < 3 or len(Y) < 3:
        raise DegenerateConfiguration("need at least 3 points on each side")
    T = RigidTransform.identity() if init is None else init
    tree = KdTree(Y)
    reject = cfg.rejection_distance
    if reject is None:
        reject = 2.0 * median_nn_spacing(Y.points)

    trace: list[float] = []
    best = (np.inf, T)
    converged = False
    it = 0
    for it in range(1, cfg.max_iterations + 1):
        P = apply_to_points(T, X.points)
        idx, dist = tree.query_points(P)
        acc = dist <= reject
        if acc.sum() < 3:
            raise NoCorrespondences(
                f"{int(acc.sum())} of {len(X)} pairs inside rejection radius {reject:.6g}"
            )
        dst = Y.points[idx[acc]]
        delta = kabsch(P[acc], dst)
        T_new = compose(delta, T)
        res = apply_to_points(T_new, X.points[acc]) - dst
        rmse = float(np.sqrt(np.mean(np.sum(res**2, axis=1))))
        if rmse > best[0]:
            converged = True
            break
        trace.append(rmse)
        improvement = best[0] - rmse
        best = (rmse, T_new)
        T = T_new
        step = geodesic_angle(delta.R, np.eye(3)) + float(np.linalg.norm(delta.t))
        if step < cfg.tol_step or improvement < cfg.tol_rmse:
            converged = True
            break
    rmse_out, T_out = best
    return IcpResult(T_out, rmse_out, it, tuple(trace), converged)


# ---------------------------------------------------------------------------
# NDT
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NdtGrid:
    """Per-voxel Gaussian statistics of a reference cloud."""

    cell_size: float
    origin: np.ndarray
    keys: np.ndarray        # (C, 3) int voxel coordinates
    counts: np.ndarray      # (C,)
    means: np.ndarray       # (C, 3)
    covariances: np.ndarray  # (C, 3, 3), SPD after regularization
    inv_covariances: np.ndarray  # (C, 3, 3)
    _flat_sorted: np.ndarray = field(repr=False, default=None)
    _row_of_flat: np.ndarray = field(repr=False, default=None)
    _spans: tuple = field(repr=False, default=None)

    def __len__(self):
        return len(self.keys)

    def locate(self, points: np.ndarray) -> np.ndarray:
        """Row index of the cell containing each point, -1 when outside."""
        keys = np.floor((points - self.origin) / self.cell_size).astype(np.int64)
        kmin, kspan = self._spans
        rel = keys - kmin
        inside = np.all((rel >= 0) & (rel < kspan), axis=1)
        flat = (rel[:, 0] * kspan[1] + rel[:, 1]) * kspan[2] + rel[:, 2]
        flat[~inside] = -1
        pos = np.searchsorted(self._flat_sorted, flat)
        pos_c = np.clip(pos, 0, len(self._flat_sorted) - 1)
        hit = inside & (self._flat_sorted[pos_c] == flat)
        rows = np.where(hit, self._row_of_flat[pos_c], -1)
        return rows


def build_ndt_grid(Y: PointCloud, cell_size: float, min_points: int = 5) -> NdtGrid:
    """Voxelize the target into Gaussian cells.

    Cells with fewer than ``min_points`` samples are dropped; covariance
    eigenvalues are floored at 0.01 of the largest (with a small absolute
    floor so coincident points still yield an SPD matrix).
    """
    if cell_size <= 0:
        raise ValueError("cell_size must be positive")
    pts = Y.points
    origin = pts.min(axis=0)
    keys = np.floor((pts - origin) / cell_size).astype(np.int64)
    uniq, inverse = np.unique(keys, axis=0, return_inverse=True)
    counts = np.bincount(inverse, minlength=len(uniq))
    valid = counts >= min_points
    if not valid.any():
        raise NoValidCells(f"no voxel holds >= {min_points} points at cell size {cell_size:.6g}")

    rows = np.flatnonzero(valid)
    means = np.zeros((len(rows), 3))
    covs = np.zeros((len(rows), 3, 3))
    for out_i, cell_i in enumerate(rows):
        sel = pts[inverse == cell_i]
        means[out_i] = sel.mean(axis=0)
        covs[out_i] = np.cov(sel.T, ddof=1)

    lam, vec = np.linalg.eigh(covs)
    floor = np.maximum(0.01 * lam[:, -1], (1e-3 * cell_size) ** 2)
    lam = np.maximum(lam, floor[:, None])
    covs = np.einsum("cij,cj,ckj->cik", vec, lam, vec)
    inv_covs = np.einsum("cij,cj,ckj->cik", vec, 1.0 / lam, vec)

    kept_keys = uniq[rows]
    kmin = kept_keys.min(axis=0)
    kspan = kept_keys.max(axis=0) - kmin + 1
    rel = kept_keys - kmin
    flat = (rel[:, 0] * kspan[1] + rel[:, 1]) * kspan[2] + rel[:, 2]
    order = np.argsort(flat)

    return NdtGrid(
        cell_size=float(cell_size),
        origin=origin,
        keys=kept_keys,
        counts=counts[rows],
        means=means,
        covariances=covs,
        inv_covariances=inv_covs,
        _flat_sorted=flat[order],
        _row_of_flat=order.astype(np.int64),
        _spans=(kmin, kspan),
    )


@dataclass(frozen=True)
class NdtResult:
    transform: RigidTransform
    score: float
    iterations: int
    trace: tuple[float, ...]
    converged: bool


def _ndt_score(grid: NdtGrid, P: np.ndarray):
    rows = grid.locate(P)
    valid = rows >= 0
    if not valid.any():
        raise AllPointsOutsideGrid("no transformed point falls in a populated cell")
    ci = rows[valid]
    r = P[valid] - grid.means[ci]
    Q = grid.inv_covariances[ci]
    Qr = np.einsum("nij,nj->ni", Q, r)
    score = 0.5 * float(np.einsum("ni,ni->", r, Qr))
    return score, valid, ci, r, Q, Qr


def ndt_score(X: PointCloud, grid: NdtGrid, T: RigidTransform) -> float:
    """Mahalanobis objective of the transformed source against the grid."""
    P = apply_to_points(T, X.points)
    return _ndt_score(grid, P)[0]


def ndt(
    X: PointCloud,
    grid: NdtGrid,
    init: RigidTransform | None = None,
    cfg: NdtConfig = NdtConfig(),
) -> NdtResult:
    """Damped Gauss-Newton over the 6-parameter update.

    Per point the residual is (R x + t) - mu_cell with Jacobian
    [I | -[Rx]_x]; the rotation is updated by left-multiplication with the
    exponential of the angular step, so intermediate transforms stay in
    SE(3). The score trace is monotone nonincreasing across accepted steps.
    """
    T0 = RigidTransform.identity() if init is None else init
    R = np.array(T0.R)
    t = np.array(T0.t)
    lam = cfg.lambda0
    trace: list[float] = []
    converged = False

    P = X.points @ R.T + t
    score, valid, ci, r, Q, Qr = _ndt_score(grid, P)
    trace.append(score)

    it = 0
    for it in range(1, cfg.max_iterations + 1):
        q = (X.points @ R.T)[valid]  # rotated, untranslated
        g_t = Qr.sum(axis=0)
        g_r = np.cross(q, Qr).sum(axis=0)
        g = np.concatenate([g_t, g_r])
        if np.linalg.norm(g) < 1e-14:
            converged = True
            break

        S = np.zeros((len(q), 3, 3))
        S[:, 0, 1] = -q[:, 2]
        S[:, 0, 2] = q[:, 1]
        S[:, 1, 0] = q[:, 2]
        S[:, 1, 2] = -q[:, 0]
        S[:, 2, 0] = -q[:, 1]
        S[:, 2, 1] = q[:, 0]
        QS = np.einsum("nij,njk->nik", Q, S)
        H = np.zeros((6, 6))
        H[:3, :3] = Q.sum(axis=0)
        H_tr = -QS.sum(axis=0)
        H[:3, 3:] = H_tr
        H[3:, :3] = H_tr.T
        H[3:, 3:] = -np.einsum("nij,njk->nik", S, QS).sum(axis=0)

        accepted = False
        for _ in range(12):
            try:
                delta = np.linalg.solve(H + lam * np.eye(6), -g)
            except np.linalg.LinAlgError:
                lam *= cfg.backoff
                continue
            R_new = Rotation.from_rotvec(delta[3:]).as_matrix() @ R
            t_new = t + delta[:3]
            P_new = X.points @ R_new.T + t_new
            try:
                cand = _ndt_score(grid, P_new)
            except AllPointsOutsideGrid:
                lam *= cfg.backoff
                continue
            if cand[0] <= score:
                accepted = True
                break
            lam *= cfg.backoff
        if not accepted:
            converged = True
            break

        improvement = score - cand[0]
        R, t = R_new, t_new
        score, valid, ci, r, Q, Qr = cand
        trace.append(score)
        lam = max(cfg.lambda0, lam / cfg.backoff)
        if np.linalg.norm(delta) < cfg.tol_step or improvement < cfg.tol_score * max(1.0, trace[-2]):
            converged = True
            break

    return NdtResult(RigidTransform(R, t), score, it, tuple(trace), converged)


def ndt_gradient(X: PointCloud, grid: NdtGrid, T: RigidTransform) -> np.ndarray:
    """Analytic gradient of the score at T, ordered (translation, rotation)."""
    P = apply_to_points(T, X.points)
    _, valid, _, _, _, Qr = _ndt_score(grid, P)
    q = (X.points @ T.R.T)[valid]
    return np.concatenate([Qr.sum(axis=0), np.cross(q, Qr).sum(axis=0)])


# ---------------------------------------------------------------------------
# Multiscale wrappers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LevelTrace:
    level: int
    voxel_size: float
    values: tuple[float, ...]
    nn_rmse: float = np.inf  # full-resolution NN rmse under the level's output
    flag: str | None = None


@dataclass(frozen=True)
class MultiscaleResult:
    transform: RigidTransform
    levels: tuple[LevelTrace, ...]
    final_value: float  # the finest successful level's own rmse/score
    nn_rmse: float = np.inf


def nn_point_rmse(X: PointCloud, Y: PointCloud | KdTree, T: RigidTransform) -> float:
    """RMS nearest-neighbor distance of the transformed source into the target."""
    tree = Y if isinstance(Y, KdTree) else KdTree(Y)
    _, d = tree.query_points(apply_to_points(T, X.points))
    return float(np.sqrt(np.mean(d**2)))


def write_trace_csv(path, result: "MultiscaleResult"):
    """Export per-level per-iteration values as (level, iteration, value, flag)."""
    import csv

    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["level", "iteration", "value", "flag"])
        for tr in result.levels:
            if not tr.values:
                w.writerow([tr.level, 0, "", tr.flag or ""])
            for it, v in enumerate(tr.values):
                w.writerow([tr.level, it, repr(float(v)), tr.flag or ""])


def multiscale_icp(
    X: PointCloud,
    Y: PointCloud,
    pyr: PyramidConfig = PyramidConfig(),
    cfg: IcpConfig = IcpConfig(),
    init: RigidTransform | None = None,
) -> MultiscaleResult:
    """Run ICP coarse to fine, each level seeded by the previous result.

    A level that fails (no correspondences / degenerate set) passes its
    initialization through and is flagged in the trace.
    """
    T = RigidTransform.identity() if init is None else init
    diag = bbox_diagonal(Y.points)
    xs = build_pyramid(X, pyr)
    ys = build_pyramid(Y, pyr)
    full_tree = KdTree(Y)
    traces = []
    final = np.inf
    for level, (xl, yl) in enumerate(zip(xs, ys)):
        voxel = pyr.voxel_fractions[level] * diag
        try:
            res = icp(xl, yl, init=T, cfg=cfg)
        except (NoCorrespondences, DegenerateConfiguration) as e:
            traces.append(LevelTrace(level, voxel, (), nn_rmse=nn_point_rmse(X, full_tree, T), flag=type(e).__name__))
            continue
        T = res.transform
        final = res.rmse
        traces.append(LevelTrace(level, voxel, res.trace, nn_rmse=nn_point_rmse(X, full_tree, T)))
    return MultiscaleResult(T, tuple(traces), final, nn_rmse=traces[-1].nn_rmse)


def multiscale_ndt(
    X: PointCloud,
    Y: PointCloud,
    pyr: PyramidConfig = PyramidConfig(),
    cfg: NdtConfig = NdtConfig(),
    init: RigidTransform | None = None,
) -> MultiscaleResult:
    """Run NDT coarse to fine.

    The moving cloud comes from the pyramid; the Gaussian grid at each
    level is built from the full-resolution target at that level's cell
    size (downsampled targets would leave every cell under-populated).
    """
    T = RigidTransform.identity() if init is None else init
    diag = bbox_diagonal(Y.points)
    xs = build_pyramid(X, pyr)
    full_tree = KdTree(Y)
    traces = []
    final = np.inf
    for level, xl in enumerate(xs):
        cell = pyr.voxel_fractions[level] * diag
        try:
            grid = build_ndt_grid(Y, cell)
            # Skip levels whose surviving cells describe too little of the
            # target: the sparse objective has spurious minima and can drift.
            described = grid.locate(Y.points) >= 0
            if float(described.mean()) < 0.5:
                traces.append(LevelTrace(level, cell, (), nn_rmse=nn_point_rmse(X, full_tree, T), flag="LowCoverage"))
                continue
            res = ndt(xl, grid, init=T, cfg=cfg)
        except (NoValidCells, AllPointsOutsideGrid, DegenerateConfiguration) as e:
            traces.append(LevelTrace(level, cell, (), nn_rmse=nn_point_rmse(X, full_tree, T), flag=type(e).__name__))
            continue
        T = res.transform
        final = res.score
        traces.append(LevelTrace(level, cell, res.trace, nn_rmse=nn_point_rmse(X, full_tree, T)))
    return MultiscaleResult(T, tuple(traces), final, nn_rmse=traces[-1].nn_rmse)
