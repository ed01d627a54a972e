"""Deterministic synthetic die-cast-like clouds and registration pairs.

Parts are CSG-like unions of plates, pipes, bosses, and through-holes;
surfaces are sampled area-uniformly with rejection against subtracted
regions. Every generator is a pure function of (spec, seed).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptySurface, OverlapInfeasible
from .geometry import (
    UNIT_MILLIMETERS,
    UNIT_NORMALIZED,
    PointCloud,
    RigidTransform,
    apply_transform,
)


def _rng(seed, *stream) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, stream)]))


def _unit_vector(rng) -> np.ndarray:
    v = rng.normal(size=3)
    return v / np.linalg.norm(v)


def _orthonormal_frame(axis: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a = axis / np.linalg.norm(axis)
    helper = np.array([1.0, 0.0, 0.0]) if abs(a[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    u = np.cross(a, helper)
    u /= np.linalg.norm(u)
    return u, np.cross(a, u)


# ---------------------------------------------------------------------------
# Primitives
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Plate:
    """Axis-aligned rectangular slab."""

    center: tuple[float, float, float]
    size: tuple[float, float, float]


@dataclass(frozen=True)
class Pipe:
    """Hollow tube: outer wall, bore wall, and two annular end faces."""

    center: tuple[float, float, float]
    axis: tuple[float, float, float]
    outer_radius: float
    inner_radius: float
    length: float


@dataclass(frozen=True)
class Boss:
    """Solid cylinder raised from a host surface."""

    base_center: tuple[float, float, float]
    axis: tuple[float, float, float]
    radius: float
    height: float


@dataclass(frozen=True)
class Hole:
    """Cylindrical bore subtracted from the union; adds its wall surface."""

    center: tuple[float, float, float]
    axis: tuple[float, float, float]
    radius: float
    depth: float


@dataclass(frozen=True)
class ShapeSpec:
    """Seeded list of primitives forming one synthetic part (millimeters)."""

    seed: int
    primitives: tuple = ()

    def __post_init__(self):
        if not self.primitives:
            raise ValueError("at least one primitive required")
        for p in self.primitives:
            dims = []
            if isinstance(p, Plate):
                dims = list(p.size)
            elif isinstance(p, Pipe):
                dims = [p.outer_radius - p.inner_radius, p.inner_radius, p.length]
            elif isinstance(p, Boss):
                dims = [p.radius, p.height]
            elif isinstance(p, Hole):
                dims = [p.radius, p.depth]
            if any(d <= 0.0 for d in dims):
                raise ValueError(f"non-positive dimension in {p}")


def random_shape(seed: int) -> ShapeSpec:
    """Random die-cast-like part: base plate plus pipes, bosses, and holes."""
    rng = _rng(seed, 0xD1E)
    lx = rng.uniform(220.0, 520.0)
    ly = rng.uniform(180.0, 420.0)
    lz = rng.uniform(20.0, 60.0)
    prims: list = [Plate((0.0, 0.0, 0.0), (lx, ly, lz))]
    top = lz / 2.0

    sites = [
        (sx * lx / 3.2, sy * ly / 4.0)
        for sx in (-1.0, 0.0, 1.0)
        for sy in (-1.0, 1.0)
    ]
    rng.shuffle(sites)
    site_iter = iter(sites)

    for _ in range(int(rng.integers(1, 3))):
        x, y = next(site_iter)
        outer = rng.uniform(18.0, 35.0)
        inner = outer * rng.uniform(0.5, 0.75)
        length = rng.uniform(50.0, 130.0)
        prims.append(Pipe((x, y, top + length / 2.0), (0.0, 0.0, 1.0), outer, inner, length))
    for _ in range(int(rng.integers(1, 3))):
        x, y = next(site_iter)
        prims.append(Boss((x, y, top), (0.0, 0.0, 1.0), rng.uniform(12.0, 30.0), rng.uniform(15.0, 45.0)))
    for _ in range(int(rng.integers(1, 3))):
        x, y = next(site_iter)
        prims.append(Hole((x, y, 0.0), (0.0, 0.0, 1.0), rng.uniform(8.0, 16.0), lz))
    return ShapeSpec(seed=seed, primitives=tuple(prims))


# ---------------------------------------------------------------------------
# Surface sampling
# ---------------------------------------------------------------------------

def _plate_patches(p: Plate):
    c = np.asarray(p.center)
    sx, sy, sz = p.size
    patches = []
    for axis, (a, b) in ((0, (sy, sz)), (1, (sx, sz)), (2, (sx, sy))):
        for sign in (-1.0, 1.0):
            offset = np.zeros(3)
            offset[axis] = sign * p.size[axis] / 2.0
            u = np.zeros(3)
            v = np.zeros(3)
            u[(axis + 1) % 3] = 1.0
            v[(axis + 2) % 3] = 1.0
            du = p.size[(axis + 1) % 3]
            dv = p.size[(axis + 2) % 3]

            def sampler(rng, count, c=c, offset=offset, u=u, v=v, du=du, dv=dv):
                su = rng.uniform(-du / 2.0, du / 2.0, size=count)
                sv = rng.uniform(-dv / 2.0, dv / 2.0, size=count)
                return c + offset + su[:, None] * u + sv[:, None] * v

            patches.append((a * b, sampler))
    return patches


def _cylinder_wall(center, axis, radius, length):
    c = np.asarray(center, dtype=np.float64)
    a = np.asarray(axis, dtype=np.float64)
    a = a / np.linalg.norm(a)
    u, v = _orthonormal_frame(a)

    def sampler(rng, count):
        theta = rng.uniform(0.0, 2.0 * np.pi, size=count)
        z = rng.uniform(-length / 2.0, length / 2.0, size=count)
        ring = radius * (np.cos(theta)[:, None] * u + np.sin(theta)[:, None] * v)
        return c + ring + z[:, None] * a

    return 2.0 * np.pi * radius * length, sampler


def _annulus(center, axis, r_in, r_out):
    c = np.asarray(center, dtype=np.float64)
    a = np.asarray(axis, dtype=np.float64)
    a = a / np.linalg.norm(a)
    u, v = _orthonormal_frame(a)

    def sampler(rng, count):
        r = np.sqrt(rng.uniform(r_in**2, r_out**2, size=count))
        theta = rng.uniform(0.0, 2.0 * np.pi, size=count)
        return c + r[:, None] * (np.cos(theta)[:, None] * u + np.sin(theta)[:, None] * v)

    return np.pi * (r_out**2 - r_in**2), sampler


def _patches_and_occluders(spec: ShapeSpec):
    patches = []
    occluders = []
    for p in spec.primitives:
        if isinstance(p, Plate):
            patches.extend(_plate_patches(p))
        elif isinstance(p, Pipe):
            c = np.asarray(p.center)
            a = np.asarray(p.axis, dtype=np.float64)
            a = a / np.linalg.norm(a)
            patches.append(_cylinder_wall(c, a, p.outer_radius, p.length))
            patches.append(_cylinder_wall(c, a, p.inner_radius, p.length))
            for sign in (-1.0, 1.0):
                patches.append(_annulus(c + sign * a * p.length / 2.0, a, p.inner_radius, p.outer_radius))
        elif isinstance(p, Boss):
            base = np.asarray(p.base_center)
            a = np.asarray(p.axis, dtype=np.float64)
            a = a / np.linalg.norm(a)
            patches.append(_cylinder_wall(base + a * p.height / 2.0, a, p.radius, p.height))
            patches.append(_annulus(base + a * p.height, a, 0.0, p.radius))
            occluders.append(_cylinder_occluder(base + a * p.height / 2.0, a, p.radius, p.height))
        elif isinstance(p, Hole):
            c = np.asarray(p.center)
            a = np.asarray(p.axis, dtype=np.float64)
            a = a / np.linalg.norm(a)
            patches.append(_cylinder_wall(c, a, p.radius, p.depth))
            occluders.append(_cylinder_occluder(c, a, p.radius, p.depth))
        else:
            raise TypeError(f"unknown primitive {type(p).__name__}")
    return patches, occluders


def _cylinder_occluder(center, axis, radius, length, eps=1e-9):
    c = np.asarray(center, dtype=np.float64)
    a = np.asarray(axis, dtype=np.float64)
    a = a / np.linalg.norm(a)

    def inside(pts):
        q = pts - c
        z = q @ a
        radial = np.linalg.norm(q - z[:, None] * a, axis=1)
        return (radial < radius - eps) & (np.abs(z) <= length / 2.0 + eps)

    return inside


def sample_surface(spec: ShapeSpec, n: int, seed: int | None = None) -> PointCloud:
    """Area-weighted uniform sample of the part surface, n points exactly."""
    if n < 1:
        raise ValueError("n must be >= 1")
    patches, occluders = _patches_and_occluders(spec)
    areas = np.array([a for a, _ in patches])
    if len(patches) == 0 or areas.sum() <= 0.0:
        raise EmptySurface("shape has no surface area")
    probs = areas / areas.sum()
    rng = _rng(spec.seed if seed is None else seed, 0x5A17)

    accepted = []
    total = 0
    for _ in range(1000):
        batch = max(256, n - total)
        counts = rng.multinomial(batch, probs)
        pts = np.concatenate(
            [patches[i][1](rng, c) for i, c in enumerate(counts) if c > 0], axis=0
        )
        keep = np.ones(len(pts), dtype=bool)
        for occ in occluders:
            keep &= ~occ(pts)
        pts = pts[keep]
        if len(pts):
            accepted.append(pts)
            total += len(pts)
        if total >= n:
            break
    else:
        raise EmptySurface("rejection sampling starved; occluders cover the surface")
    out = np.concatenate(accepted, axis=0)[:n]
    return PointCloud(out, unit=UNIT_MILLIMETERS, provenance=np.arange(n))


# ---------------------------------------------------------------------------
# Normalization
# ---------------------------------------------------------------------------

def normalize_unit_sphere(cloud: PointCloud) -> tuple[PointCloud, np.ndarray, float]:
    """Center at the origin and scale the farthest point onto the unit sphere.

    Returns (normalized cloud, centroid, scale); the original cloud is
    centroid + scale * normalized.
    """
    centroid = cloud.points.mean(axis=0)
    centered = cloud.points - centroid
    scale = float(np.max(np.linalg.norm(centered, axis=1)))
    if scale == 0.0:
        scale = 1.0
    return (
        PointCloud(centered / scale, unit=UNIT_NORMALIZED, provenance=cloud.provenance),
        centroid,
        scale,
    )


def denormalize(cloud: PointCloud, centroid: np.ndarray, scale: float) -> PointCloud:
    return PointCloud(cloud.points * scale + centroid, unit=UNIT_MILLIMETERS, provenance=cloud.provenance)


def transform_to_normalized(
    T: RigidTransform, src_centroid, dst_centroid, scale: float
) -> RigidTransform:
    """Re-express y = R x + t in frames x' = (x - c_src)/s, y' = (y - c_dst)/s."""
    c_src = np.asarray(src_centroid, dtype=np.float64)
    c_dst = np.asarray(dst_centroid, dtype=np.float64)
    return RigidTransform(T.R, (T.R @ c_src + T.t - c_dst) / scale)


def transform_from_normalized(
    T: RigidTransform, src_centroid, dst_centroid, scale: float
) -> RigidTransform:
    """Inverse of :func:`transform_to_normalized`."""
    c_src = np.asarray(src_centroid, dtype=np.float64)
    c_dst = np.asarray(dst_centroid, dtype=np.float64)
    return RigidTransform(T.R, scale * T.t + c_dst - T.R @ c_src)


# ---------------------------------------------------------------------------
# Pair construction
# ---------------------------------------------------------------------------

def _as_range(value, name) -> tuple[float, float]:
    if np.isscalar(value):
        lo, hi = 0.0, float(value)
    else:
        lo, hi = float(value[0]), float(value[1])
    if lo < 0.0 or hi < lo:
        raise ValueError(f"{name} must satisfy 0 <= lo <= hi, got ({lo}, {hi})")
    return lo, hi


@dataclass(frozen=True)
class PairSpec:
    """Augmentation protocol for one registration pair."""

    seed: int
    n_points: int = 4096
    rotation_range_deg: tuple[float, float] = (0.0, 60.0)
    translation_range_mm: tuple[float, float] = (0.0, 150.0)
    scale_range: tuple[float, float] = (0.95, 1.05)
    overlap_ratio: float = 0.85
    noise_sigma_mm: float = 0.0
    erase_patches: int = 0
    erase_radius_mm: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "rotation_range_deg", _as_range(self.rotation_range_deg, "rotation_range_deg"))
        object.__setattr__(self, "translation_range_mm", _as_range(self.translation_range_mm, "translation_range_mm"))
        if not (0.0 < self.overlap_ratio <= 1.0):
            raise ValueError("overlap_ratio must be in (0, 1]")
        lo, hi = self.scale_range
        if not (0.0 < lo <= hi < 2.0):
            raise ValueError("scale_range must lie inside (0, 2)")
        if self.n_points < 16:
            raise ValueError("n_points must be >= 16")
        if self.noise_sigma_mm < 0.0:
            raise ValueError("noise_sigma_mm must be >= 0")


def sample_rigid_transform(rng, rotation_range_deg, translation_range) -> RigidTransform:
    """Random motion: uniform axis and angle, uniform direction and distance."""
    from scipy.spatial.transform import Rotation

    lo_r, hi_r = _as_range(rotation_range_deg, "rotation_range_deg")
    lo_t, hi_t = _as_range(translation_range, "translation_range")
    angle = np.deg2rad(rng.uniform(lo_r, hi_r))
    R = Rotation.from_rotvec(_unit_vector(rng) * angle).as_matrix()
    t = _unit_vector(rng) * rng.uniform(lo_t, hi_t)
    return RigidTransform(R, t)


def add_gaussian_noise(
    cloud: PointCloud, sigma_mm: float, seed: int, mm_per_unit: float = 1.0
) -> PointCloud:
    """Independent zero-mean Gaussian per coordinate, sigma given in mm."""
    if sigma_mm < 0.0:
        raise ValueError("sigma must be >= 0")
    if sigma_mm == 0.0:
        return cloud
    rng = _rng(seed, 0x4015E)
    pts = cloud.points + rng.normal(0.0, sigma_mm / mm_per_unit, size=cloud.points.shape)
    # Noise may push a normalized cloud past the unit sphere; keep the tag honest.
    unit = cloud.unit
    if unit == UNIT_NORMALIZED and np.max(np.linalg.norm(pts, axis=1)) > 1.0 + 1e-9:
        unit = UNIT_MILLIMETERS
    return PointCloud(pts, unit=unit, provenance=cloud.provenance)


def crop_overlap(cloud: PointCloud, keep_ratio: float, seed: int) -> PointCloud:
    """Remove one spherical patch so keep_ratio of the points survive."""
    if not (0.0 < keep_ratio <= 1.0):
        raise ValueError("keep_ratio must be in (0, 1]")
    n = len(cloud)
    n_keep = int(round(keep_ratio * n))
    if n_keep >= n:
        return cloud
    rng = _rng(seed, 0xC509)
    center = cloud.points[rng.integers(n)]
    d = np.linalg.norm(cloud.points - center, axis=1)
    keep_idx = np.sort(np.argsort(d)[n - n_keep :])
    prov = cloud.provenance[keep_idx] if cloud.provenance is not None else None
    return PointCloud(cloud.points[keep_idx], unit=cloud.unit, provenance=prov)


def _erase(cloud: PointCloud, count: int, radius: float, seed: int) -> PointCloud:
    out = cloud
    for i in range(count):
        rng = _rng(seed, 0xE7A5E, i)
        center = out.points[rng.integers(len(out))]
        d = np.linalg.norm(out.points - center, axis=1)
        keep = d > radius
        if keep.sum() < 16:
            break
        prov = out.provenance[keep] if out.provenance is not None else None
        out = PointCloud(out.points[keep], unit=out.unit, provenance=prov)
    return out


def make_pair(
    cloud: PointCloud, spec: PairSpec
) -> tuple[PointCloud, PointCloud, RigidTransform, tuple[np.ndarray, np.ndarray]]:
    """Build a registration pair (X, Y, T_gt, ground-truth correspondence).

    Both sides are independently cropped copies of the (scale-augmented)
    base cloud; Y is additionally moved by T_gt and optionally perturbed
    by Gaussian noise. Shared provenance ids define the correspondence,
    and the shared fraction of X is at least spec.overlap_ratio.
    """
    if cloud.provenance is None:
        cloud = PointCloud(cloud.points, unit=cloud.unit, provenance=np.arange(len(cloud)))
    rng = _rng(spec.seed, 0x9A12)

    s_lo, s_hi = spec.scale_range
    s = rng.uniform(s_lo, s_hi)
    centroid = cloud.points.mean(axis=0)
    base = PointCloud(centroid + s * (cloud.points - centroid), unit=cloud.unit, provenance=cloud.provenance)

    T_gt = sample_rigid_transform(rng, spec.rotation_range_deg, spec.translation_range_mm)

    keep = min(1.0, 1.0 / (2.0 - spec.overlap_ratio) + 2.0 / len(base))
    for attempt in range(20):
        X = crop_overlap(base, keep, seed=spec.seed * 1000 + 2 * attempt)
        Y0 = crop_overlap(base, keep, seed=spec.seed * 1000 + 2 * attempt + 1)
        if spec.erase_patches > 0:
            X = _erase(X, spec.erase_patches, spec.erase_radius_mm, spec.seed * 77 + attempt)
            Y0 = _erase(Y0, spec.erase_patches, spec.erase_radius_mm, spec.seed * 77 + attempt + 31)
        shared, ix, iy = np.intersect1d(X.provenance, Y0.provenance, return_indices=True)
        if len(shared) / len(X) >= spec.overlap_ratio:
            break
        keep = min(1.0, keep + 0.25 * (1.0 - keep))
    else:
        raise OverlapInfeasible(
            f"could not reach overlap {spec.overlap_ratio} (best {len(shared) / len(X):.3f})"
        )

    Y = apply_transform(T_gt, Y0)
    if spec.noise_sigma_mm > 0.0:
        Y = add_gaussian_noise(Y, spec.noise_sigma_mm, seed=spec.seed * 31 + 7)
    return X, Y, T_gt, (ix, iy)
