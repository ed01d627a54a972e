"""End-to-end orchestration.

Dataset generation, the two training entry points, single-pair
registration with a wall-clock budget, the benchmark grid, and cloud
export. Every command is a pure function of its configuration and seeds;
reports are byte-identical across reruns except for timing columns.

Registration always runs in a jointly normalized frame (source centroid,
shared unit scale) and converts the result back, so the unit-scale
defaults of the fine stage apply to clouds of any physical size.
"""

from __future__ import annotations

import csv
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import cloud_io
from .cloud_io import DatasetManifest, PairRecord, read_manifest, resolve_pair_paths, write_manifest
from .edcp import (
    EdcpConfig,
    EdcpModel,
    EdcpPair,
    TrainConfig,
    correspondences_from_transform,
    edcp_register,
    train_edcp,
)
from .errors import MissingFile, TimeBudgetExceeded
from .fusion import (
    EpsilonFilterConfig,
    FusionMlp,
    FusionSample,
    mdr_register,
    train_fusion,
)
from .geometry import (
    PointCloud,
    RigidTransform,
    registration_metrics,
)
from .msreg import (
    IcpConfig,
    NdtConfig,
    PyramidConfig,
    bbox_diagonal,
    build_ndt_grid,
    icp,
    multiscale_icp,
    multiscale_ndt,
    ndt,
)
from .synth import (
    PairSpec,
    make_pair,
    random_shape,
    sample_surface,
    transform_from_normalized,
    transform_to_normalized,
)

METHODS = ("icp", "ndt", "ms-icp", "ms-ndt", "edcp", "mdr", "medpnet")
FRAMES = ("auto", "normalized", "millimeters")

BENCH_COLUMNS = (
    "pair_id",
    "method",
    "frame",
    "mse_r",
    "rmse_r",
    "mae_r",
    "mse_t",
    "rmse_t",
    "mae_t",
    "point_rmse",
    "seconds",
)


@dataclass(frozen=True)
class GenConfig:
    n_pairs: int = 20
    n_points: int = 1024
    rotation_deg: tuple[float, float] = (0.0, 60.0)
    translation_mm: tuple[float, float] = (0.0, 150.0)
    scale_range: tuple[float, float] = (0.95, 1.05)
    overlap: float = 0.85
    noise_sigma_mm: float = 0.0
    erase_patches: int = 0
    erase_radius_mm: float = 0.0
    train_fraction: float = 0.8


@dataclass(frozen=True)
class BenchConfig:
    methods: tuple[str, ...] = ("icp", "ndt", "ms-icp", "ms-ndt", "mdr")
    rotations_deg: tuple[float, ...] = (10.0, 20.0, 30.0, 90.0)
    translations_mm: tuple[float, ...] = (100.0, 500.0, 1000.0)
    noise_sigmas_mm: tuple[float, ...] = (0.0, 0.1)
    pairs_per_cell: int = 3
    n_points: int = 1024
    overlap: float = 0.85
    workers: int = 1


@dataclass(frozen=True)
class RunConfig:
    dataset_dir: str = "data"
    out_dir: str = "out"
    method: str = "medpnet"
    seed: int = 0
    frame: str = "auto"
    budget_s: float = 60.0
    edcp_checkpoint: str | None = None
    fusion_checkpoint: str | None = None
    fusion_samples: int = 300
    gen: GenConfig = field(default_factory=GenConfig)
    bench: BenchConfig = field(default_factory=BenchConfig)
    edcp: EdcpConfig = field(default_factory=EdcpConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    fusion_train: TrainConfig = field(default_factory=lambda: TrainConfig(lr=0.1, epochs=60))
    pyramid: PyramidConfig = field(default_factory=PyramidConfig)
    icp: IcpConfig = field(default_factory=IcpConfig)
    ndt: NdtConfig = field(default_factory=NdtConfig)
    eps_filter: EpsilonFilterConfig = field(default_factory=EpsilonFilterConfig)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.frame not in FRAMES:
            raise ValueError(f"frame must be one of {FRAMES}, got {self.frame!r}")
        if self.budget_s <= 0:
            raise ValueError("budget_s must be positive")

    @classmethod
    def from_dict(cls, payload: dict) -> "RunConfig":
        def section(klass, key):
            raw = dict(payload.get(key, {}))
            for k, v in raw.items():
                if isinstance(v, list):
                    raw[k] = tuple(v)
            return klass(**raw)

        top = {
            k: v
            for k, v in payload.items()
            if k
            in (
                "dataset_dir",
                "out_dir",
                "method",
                "seed",
                "frame",
                "budget_s",
                "edcp_checkpoint",
                "fusion_checkpoint",
                "fusion_samples",
            )
        }
        return cls(
            **top,
            gen=section(GenConfig, "gen"),
            bench=section(BenchConfig, "bench"),
            edcp=section(EdcpConfig, "edcp"),
            train=section(TrainConfig, "train"),
            fusion_train=section(TrainConfig, "fusion_train"),
            pyramid=section(PyramidConfig, "pyramid"),
            icp=section(IcpConfig, "icp"),
            ndt=section(NdtConfig, "ndt"),
            eps_filter=section(EpsilonFilterConfig, "eps_filter"),
        )

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        if not os.path.exists(path):
            raise MissingFile(path)
        with open(path) as f:
            return cls.from_dict(json.load(f))


class Deadline:
    """Cooperative wall-clock budget checked at stage boundaries."""

    def __init__(self, seconds: float):
        self.seconds = seconds
        self.start = time.perf_counter()

    @property
    def elapsed(self) -> float:
        return time.perf_counter() - self.start

    def check(self, stage: str):
        if self.elapsed > self.seconds:
            raise TimeBudgetExceeded(f"{stage}: {self.elapsed:.1f}s > budget {self.seconds:.1f}s")


# ---------------------------------------------------------------------------
# Data generation
# ---------------------------------------------------------------------------

def _pair_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0] % (2**31))


def cmd_gen_data(config: RunConfig) -> str:
    """Generate the pair dataset and manifest; returns the manifest path."""
    g = config.gen
    out = config.dataset_dir
    os.makedirs(out, exist_ok=True)
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0xDA7A]))
    split = np.array(["train"] * g.n_pairs)
    split[rng.permutation(g.n_pairs)[int(round(g.train_fraction * g.n_pairs)) :]] = "test"

    records = []
    for i in range(g.n_pairs):
        ps = _pair_seed(config.seed, i)
        base = sample_surface(random_shape(ps), g.n_points, seed=ps)
        spec = PairSpec(
            seed=ps,
            n_points=g.n_points,
            rotation_range_deg=g.rotation_deg,
            translation_range_mm=g.translation_mm,
            scale_range=g.scale_range,
            overlap_ratio=g.overlap,
            noise_sigma_mm=g.noise_sigma_mm,
            erase_patches=g.erase_patches,
            erase_radius_mm=g.erase_radius_mm,
        )
        X, Y, T_gt, _ = make_pair(base, spec)
        x_path, y_path = f"pair{i:04d}_x.ply", f"pair{i:04d}_y.ply"
        cloud_io.write_ply(os.path.join(out, x_path), X)
        cloud_io.write_ply(os.path.join(out, y_path), Y)
        records.append(
            PairRecord(x_path, y_path, T_gt, "millimeters", ps, str(split[i]))
        )
    manifest_path = os.path.join(out, "manifest.json")
    write_manifest(manifest_path, DatasetManifest(tuple(records)))
    return manifest_path


def load_pair(config: RunConfig, index: int) -> tuple[PointCloud, PointCloud, RigidTransform, str]:
    manifest_path = os.path.join(config.dataset_dir, "manifest.json")
    manifest = read_manifest(manifest_path)
    rec = manifest.pairs[index]
    x_path, y_path = resolve_pair_paths(manifest_path, rec)
    X = cloud_io.read_ply(x_path)
    Y = cloud_io.read_ply(y_path)
    return X, Y, rec.transform, f"pair{index:04d}"


# ---------------------------------------------------------------------------
# Training commands
# ---------------------------------------------------------------------------

def _edcp_pairs_from_manifest(config: RunConfig, split: str):
    manifest_path = os.path.join(config.dataset_dir, "manifest.json")
    manifest = read_manifest(manifest_path)
    pairs = []
    tol = 1e-6 + 4.0 * config.gen.noise_sigma_mm
    for rec in manifest.pairs:
        if rec.split != split:
            continue
        x_path, y_path = resolve_pair_paths(manifest_path, rec)
        X = cloud_io.read_ply(x_path)
        Y = cloud_io.read_ply(y_path)
        ix, iy = correspondences_from_transform(X, Y, rec.transform, tol=tol)
        pairs.append(EdcpPair(X, Y, ix, iy))
    return pairs


def cmd_train_edcp(config: RunConfig) -> tuple[str, str]:
    """Train the coarse model on the manifest's train split.

    Returns (checkpoint path, loss CSV path).
    """
    pairs = _edcp_pairs_from_manifest(config, "train")
    model, history = train_edcp(pairs, config.edcp, config.train)
    os.makedirs(config.out_dir, exist_ok=True)
    ckpt = config.edcp_checkpoint or os.path.join(config.out_dir, "edcp_checkpoint.txt")
    model.save(ckpt)
    loss_csv = os.path.join(config.out_dir, "edcp_loss.csv")
    _write_loss_csv(loss_csv, history)
    return ckpt, loss_csv


def _write_loss_csv(path, history):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["epoch", "mean_loss"])
        for epoch, loss in enumerate(history):
            w.writerow([epoch, repr(float(loss))])


def _normalized_pair_frame(X: PointCloud, Y: PointCloud):
    """Joint frame: X's centroid for each side, one shared unit scale."""
    cx = X.points.mean(axis=0)
    cy = Y.points.mean(axis=0)
    s = max(
        float(np.max(np.linalg.norm(X.points - cx, axis=1))),
        float(np.max(np.linalg.norm(Y.points - cy, axis=1))),
    )
    s = s if s > 0 else 1.0
    Xn = PointCloud((X.points - cx) / s, unit="millimeters")
    Yn = PointCloud((Y.points - cy) / s, unit="millimeters")
    return Xn, Yn, cx, cy, s


def _fusion_sample_for_pair(config, X, Y, T_gt, pair_id, init_mm=None) -> FusionSample:
    import zlib

    Xn, Yn, cx, cy, s = _normalized_pair_frame(X, Y)
    init_n = None if init_mm is None else transform_to_normalized(init_mm, cx, cy, s)
    res1 = multiscale_icp(Xn, Yn, config.pyramid, config.icp, init_n)
    res2 = multiscale_ndt(Xn, Yn, config.pyramid, config.ndt, init_n)
    # crc32, not hash(): string hashing is salted per process and would
    # break cross-run reproducibility of the subsample.
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0x5B5, zlib.crc32(pair_id.encode())]))
    pts = Xn.points
    if len(pts) > config.eps_filter.subsample:
        pts = pts[np.sort(rng.choice(len(pts), size=config.eps_filter.subsample, replace=False))]
    T_gt_n = transform_to_normalized(T_gt, cx, cy, s)
    return FusionSample(
        T1=res1.transform,
        T2=res2.transform,
        rmse1=res1.nn_rmse,
        rmse2=res2.nn_rmse,
        T_gt=T_gt_n,
        pair_id=pair_id,
        points_sub=pts,
    )


def cmd_train_fusion(config: RunConfig) -> tuple[str, str]:
    """Build fusion calibration samples from the train split and fit the
    weighting network. Returns (checkpoint path, loss CSV path)."""
    manifest_path = os.path.join(config.dataset_dir, "manifest.json")
    manifest = read_manifest(manifest_path)
    edcp_model = _load_edcp(config, required=False)
    samples = []
    for i, rec in enumerate(manifest.pairs):
        if rec.split != "train" or len(samples) >= config.fusion_samples:
            continue
        x_path, y_path = resolve_pair_paths(manifest_path, rec)
        X = cloud_io.read_ply(x_path)
        Y = cloud_io.read_ply(y_path)
        init = None
        if edcp_model is not None:
            init, _ = edcp_register(edcp_model, X, Y)
        samples.append(_fusion_sample_for_pair(config, X, Y, rec.transform, f"pair{i:04d}", init))
    mlp, history = train_fusion(samples, delta=0.05, train=config.fusion_train)
    os.makedirs(config.out_dir, exist_ok=True)
    ckpt = config.fusion_checkpoint or os.path.join(config.out_dir, "fusion_checkpoint.txt")
    mlp.save(ckpt)
    loss_csv = os.path.join(config.out_dir, "fusion_loss.csv")
    _write_loss_csv(loss_csv, history)
    return ckpt, loss_csv


def _load_edcp(config: RunConfig, required: bool) -> EdcpModel | None:
    path = config.edcp_checkpoint or os.path.join(config.out_dir, "edcp_checkpoint.txt")
    if os.path.exists(path):
        return EdcpModel.load(path)
    if required:
        raise MissingFile(f"edcp checkpoint not found: {path}")
    return None


def _load_fusion(config: RunConfig) -> FusionMlp | None:
    path = config.fusion_checkpoint or os.path.join(config.out_dir, "fusion_checkpoint.txt")
    if os.path.exists(path):
        return FusionMlp.load(path)
    return None


# ---------------------------------------------------------------------------
# Registration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RegistrationOutcome:
    pair_id: str
    method: str
    transform: RigidTransform  # millimeter-frame estimate
    seconds: float
    diagnostics: dict


def register_pair(
    config: RunConfig,
    X: PointCloud,
    Y: PointCloud,
    method: str | None = None,
    pair_id: str = "pair",
    edcp_model: EdcpModel | None = None,
    fusion_mlp: FusionMlp | None = None,
    deadline: Deadline | None = None,
) -> RegistrationOutcome:
    """Run one registration method on one pair, in the joint unit frame."""
    method = method or config.method
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}")
    deadline = deadline or Deadline(config.budget_s)
    t0 = time.perf_counter()
    diagnostics: dict = {}

    Xn, Yn, cx, cy, s = _normalized_pair_frame(X, Y)
    diag = bbox_diagonal(Yn.points)

    coarse_n = None
    if method in ("edcp", "medpnet"):
        model = edcp_model or _load_edcp(config, required=True)
        T_mm, confidence = edcp_register(model, X, Y)
        coarse_n = transform_to_normalized(T_mm, cx, cy, s)
        diagnostics["confidence"] = confidence
        deadline.check("coarse registration")
        if method == "edcp":
            return RegistrationOutcome(pair_id, method, T_mm, time.perf_counter() - t0, diagnostics)

    if method == "icp":
        res = icp(Xn, Yn, init=None, cfg=config.icp)
        T_n = res.transform
        diagnostics["rmse"] = res.rmse
        diagnostics["iterations"] = res.iterations
    elif method == "ndt":
        grid = build_ndt_grid(Yn, 0.05 * diag)
        res = ndt(Xn, grid, init=None, cfg=config.ndt)
        T_n = res.transform
        diagnostics["score"] = res.score
        diagnostics["iterations"] = res.iterations
    elif method == "ms-icp":
        res = multiscale_icp(Xn, Yn, config.pyramid, config.icp)
        T_n = res.transform
        diagnostics["nn_rmse"] = res.nn_rmse
    elif method == "ms-ndt":
        res = multiscale_ndt(Xn, Yn, config.pyramid, config.ndt)
        T_n = res.transform
        diagnostics["nn_rmse"] = res.nn_rmse
    elif method in ("mdr", "medpnet"):
        mlp = fusion_mlp if fusion_mlp is not None else _load_fusion(config)
        T_n, mdr_diag = mdr_register(
            Xn,
            Yn,
            init=coarse_n,
            mlp=mlp,
            pyramid=config.pyramid,
            icp_cfg=config.icp,
            ndt_cfg=config.ndt,
            eps_cfg=config.eps_filter,
        )
        diagnostics.update(
            {
                "w1": mdr_diag.w1,
                "w2": mdr_diag.w2,
                "eps": mdr_diag.eps.as_vector().tolist(),
                "rmse": mdr_diag.rmse,
                "rmse_icp": mdr_diag.rmse1,
                "rmse_ndt": mdr_diag.rmse2,
            }
        )
    deadline.check("fine registration")
    T_mm = transform_from_normalized(T_n, cx, cy, s)
    return RegistrationOutcome(pair_id, method, T_mm, time.perf_counter() - t0, diagnostics)


def cmd_register(config: RunConfig, pair_index: int, export: bool = False) -> dict:
    """Register one manifest pair; writes a JSON record (and optional PLYs)."""
    X, Y, T_gt, pair_id = load_pair(config, pair_index)
    outcome = register_pair(config, X, Y, pair_id=pair_id)
    frame = _row_frame(config.frame, outcome.method)
    metrics = _metrics_in_frame(outcome.transform, T_gt, X, Y, frame, outcome.seconds)
    os.makedirs(config.out_dir, exist_ok=True)
    record = {
        "pair_id": pair_id,
        "method": outcome.method,
        "transform": outcome.transform.as_flat(),
        "frame": frame,
        "seconds": outcome.seconds,
        "metrics": _metrics_dict(metrics),
        "diagnostics": outcome.diagnostics,
    }
    out_path = os.path.join(config.out_dir, f"{pair_id}_{outcome.method}.json")
    with open(out_path, "w") as f:
        json.dump(record, f, indent=1)
        f.write("\n")
    if export:
        cmd_export(config, X, Y, outcome.transform, prefix=f"{pair_id}_{outcome.method}")
    return record


def cmd_export(
    config: RunConfig,
    X: PointCloud,
    Y: PointCloud,
    transform: RigidTransform,
    prefix: str = "export",
) -> tuple[str, str, str]:
    """Write source, target, and aligned source as PLY files."""
    from .geometry import apply_transform

    os.makedirs(config.out_dir, exist_ok=True)
    paths = tuple(os.path.join(config.out_dir, f"{prefix}_{tag}.ply") for tag in ("source", "target", "aligned"))
    cloud_io.write_ply(paths[0], X)
    cloud_io.write_ply(paths[1], Y)
    cloud_io.write_ply(paths[2], apply_transform(transform, X))
    return paths


# ---------------------------------------------------------------------------
# Benchmark grid
# ---------------------------------------------------------------------------

def _row_frame(config_frame: str, method: str) -> str:
    if config_frame != "auto":
        return config_frame
    return "normalized" if method == "edcp" else "millimeters"


def _metrics_in_frame(T_pred, T_gt, X, Y, frame, seconds):
    if frame == "normalized":
        Xn, Yn, cx, cy, s = _normalized_pair_frame(X, Y)
        T_pred = transform_to_normalized(T_pred, cx, cy, s)
        T_gt = transform_to_normalized(T_gt, cx, cy, s)
        pts = Xn.points
    else:
        pts = X.points
    return registration_metrics(T_pred, T_gt, pts, seconds)


def _metrics_dict(m) -> dict:
    return {
        "mse_r": m.mse_r,
        "rmse_r": m.rmse_r,
        "mae_r": m.mae_r,
        "mse_t": m.mse_t,
        "rmse_t": m.rmse_t,
        "mae_t": m.mae_t,
        "point_rmse": m.point_rmse,
        "elapsed_seconds": m.elapsed_seconds,
    }


def _bench_pair(config: RunConfig, rotation, translation, noise, pair_idx):
    ps = _pair_seed(config.seed, 7919 * pair_idx + 13)
    base = sample_surface(random_shape(ps), config.bench.n_points, seed=ps)
    spec = PairSpec(
        seed=_pair_seed(ps, int(rotation * 100) * 1000003 + int(translation * 10) * 101 + int(noise * 1000)),
        n_points=config.bench.n_points,
        rotation_range_deg=(rotation, rotation),
        translation_range_mm=(translation, translation),
        scale_range=(1.0, 1.0),
        overlap_ratio=config.bench.overlap,
        noise_sigma_mm=noise,
    )
    return make_pair(base, spec)


def _bench_unit(args) -> list[dict]:
    """One pair of one grid cell: generate data, run every method."""
    config, rotation, translation, noise, pair_idx = args
    pair_id = f"r{rotation:g}_t{translation:g}_n{noise:g}_p{pair_idx}"
    rows = []
    try:
        X, Y, T_gt, _ = _bench_pair(config, rotation, translation, noise, pair_idx)
    except Exception as e:  # noqa: BLE001 - recorded, not fatal
        return [
            {"failed": True, "pair_id": pair_id, "method": m, "error": f"{type(e).__name__}: {e}"}
            for m in config.bench.methods
        ]
    edcp_model = _load_edcp(config, required=False)
    fusion_mlp = _load_fusion(config)
    for method in config.bench.methods:
        try:
            outcome = register_pair(
                config, X, Y, method=method, pair_id=pair_id,
                edcp_model=edcp_model, fusion_mlp=fusion_mlp,
                deadline=Deadline(config.budget_s),
            )
            frame = _row_frame(config.frame, method)
            m = _metrics_in_frame(outcome.transform, T_gt, X, Y, frame, outcome.seconds)
            rows.append(
                {
                    "pair_id": pair_id,
                    "method": method,
                    "frame": frame,
                    "mse_r": m.mse_r,
                    "rmse_r": m.rmse_r,
                    "mae_r": m.mae_r,
                    "mse_t": m.mse_t,
                    "rmse_t": m.rmse_t,
                    "mae_t": m.mae_t,
                    "point_rmse": m.point_rmse,
                    "seconds": outcome.seconds,
                }
            )
        except Exception as e:  # noqa: BLE001 - recorded, not fatal
            rows.append(
                {"failed": True, "pair_id": pair_id, "method": method, "error": f"{type(e).__name__}: {e}"}
            )
    return rows


def _aggregate(rows: list[dict], method: str, frame: str) -> dict:
    sub = [r for r in rows if r["method"] == method]
    agg = {"pair_id": "ALL", "method": method, "frame": frame}
    for col in ("mse_r", "mae_r", "mse_t", "mae_t", "point_rmse", "seconds"):
        agg[col] = float(np.mean([r[col] for r in sub]))
    agg["rmse_r"] = float(np.sqrt(agg["mse_r"]))
    agg["rmse_t"] = float(np.sqrt(agg["mse_t"]))
    return agg


def cmd_bench(config: RunConfig) -> tuple[str, str]:
    """Run the method x perturbation grid; returns (CSV path, JSON path).

    Failed cells are recorded in the JSON summary instead of aborting;
    rows that exceed the time budget are flagged there as well.
    """
    b = config.bench
    units = [
        (config, r, t, n, p)
        for r in b.rotations_deg
        for t in b.translations_mm
        for n in b.noise_sigmas_mm
        for p in range(b.pairs_per_cell)
    ]
    if b.workers > 1:
        with ProcessPoolExecutor(max_workers=b.workers) as pool:
            unit_rows = list(pool.map(_bench_unit, units))
    else:
        unit_rows = [_bench_unit(u) for u in units]

    rows, failures = [], []
    for batch in unit_rows:
        for r in batch:
            (failures if r.get("failed") else rows).append(r)
    rows.sort(key=lambda r: (r["pair_id"], r["method"]))
    failures.sort(key=lambda r: (r["pair_id"], r["method"]))

    aggregates = [
        _aggregate(rows, method, _row_frame(config.frame, method))
        for method in b.methods
        if any(r["method"] == method for r in rows)
    ]
    over_budget = [
        {"pair_id": r["pair_id"], "method": r["method"], "seconds": r["seconds"]}
        for r in rows
        if r["seconds"] > config.budget_s
    ]

    os.makedirs(config.out_dir, exist_ok=True)
    csv_path = os.path.join(config.out_dir, "bench_report.csv")
    with open(csv_path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(BENCH_COLUMNS)
        for r in rows + aggregates:
            w.writerow([_csv_cell(r[c]) for c in BENCH_COLUMNS])

    json_path = os.path.join(config.out_dir, "bench_summary.json")
    summary = {
        "seed": config.seed,
        "frame": config.frame,
        "methods": list(b.methods),
        "grid": {
            "rotations_deg": list(b.rotations_deg),
            "translations_mm": list(b.translations_mm),
            "noise_sigmas_mm": list(b.noise_sigmas_mm),
            "pairs_per_cell": b.pairs_per_cell,
        },
        "aggregates": aggregates,
        "failures": failures,
        "over_budget": over_budget,
    }
    with open(json_path, "w") as f:
        json.dump(summary, f, indent=1)
        f.write("\n")
    return csv_path, json_path


def _csv_cell(v):
    if isinstance(v, float):
        return repr(v)
    return v
