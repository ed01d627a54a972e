"""Dual-channel fine registration fusion.

The two multiscale channels (ICP, NDT) produce candidate transforms; a
small learned network weights them, the weighted blend is taken in
tangent-space coordinates (which keeps the result a valid rigid motion
with no re-projection), and a self-updating coordinate search refines the
blend with an additive tangent offset chosen by minimum RMSE.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore, Tensor, backward
from .edcp import TrainConfig
from .errors import RegistrationChannelError, ShapeMismatch, TooFewSamples
from .geometry import (
    KdTree,
    PointCloud,
    RigidTransform,
    Twist,
    apply_to_points,
    point_rmse,
    se3_exp,
    se3_log,
)
from .msreg import (
    IcpConfig,
    MultiscaleResult,
    NdtConfig,
    PyramidConfig,
    multiscale_icp,
    multiscale_ndt,
)

FUSION_FEATURE_DIM = 14
FUSION_WIDTHS = (32, 64, 32)


@dataclass(frozen=True)
class FusionSample:
    """Calibration record: channel outputs plus ground truth for one pair.

    points_sub is a fixed subsample of the source cloud; the training
    residual is the paired RMSE between the blended and the ground-truth
    placement of exactly these points.
    """

    T1: RigidTransform
    T2: RigidTransform
    rmse1: float
    rmse2: float
    T_gt: RigidTransform
    pair_id: str
    points_sub: np.ndarray

    def __post_init__(self):
        if self.rmse1 < 0 or self.rmse2 < 0:
            raise ValueError("channel rmses must be >= 0")
        pts = np.asarray(self.points_sub, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] < 3:
            raise ValueError("points_sub must be (n, 3) with n >= 3")
        object.__setattr__(self, "points_sub", pts)


@dataclass
class FusionMlp:
    """32/64/32 weighting network: 14 features in, 2 blend logits out."""

    store: ParamStore
    widths: tuple[int, ...] = FUSION_WIDTHS

    def save(self, path):
        meta = ParamStore()
        meta.add("_config", np.array(self.widths, dtype=np.float64))
        for name in self.store.names():
            meta.add(name, self.store[name].data)
        meta.save(path)

    @classmethod
    def load(cls, path) -> "FusionMlp":
        loaded = ParamStore.load(path)
        widths = tuple(int(w) for w in loaded["_config"].data)
        store = ParamStore()
        for name in loaded.names():
            if name != "_config":
                store.add(name, loaded[name].data)
        return cls(store, widths)


def init_fusion_mlp(seed: int = 0, widths: tuple[int, ...] = FUSION_WIDTHS) -> FusionMlp:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xF051]))
    store = ParamStore()
    dims = (FUSION_FEATURE_DIM, *widths, 2)
    for i, (a, b) in enumerate(zip(dims, dims[1:])):
        store.glorot(f"fc{i}.W", (a, b), rng)
        store.zeros(f"fc{i}.b", (b,))
    return FusionMlp(store, widths)


def fusion_features(
    T1: RigidTransform, T2: RigidTransform, rmse1: float, rmse2: float
) -> np.ndarray:
    """14-vector: both channel twists (translation part then rotation part)
    followed by the two channel RMSEs."""
    return np.concatenate(
        [se3_log(T1).as_vector(), se3_log(T2).as_vector(), [float(rmse1), float(rmse2)]]
    )


def fusion_logits(mlp: FusionMlp, features: np.ndarray) -> Tensor:
    f = np.asarray(features, dtype=np.float64).reshape(1, -1)
    if f.shape[1] != FUSION_FEATURE_DIM:
        raise ShapeMismatch(f"expected {FUSION_FEATURE_DIM} features, got {f.shape[1]}")
    h = Tensor(f)
    n_layers = len(mlp.widths) + 1
    for i in range(n_layers):
        h = ad.add_bias(ad.matmul(h, mlp.store[f"fc{i}.W"]), mlp.store[f"fc{i}.b"])
        if i < n_layers - 1:
            h = ad.leaky_relu(h)
    return h


def fusion_weights_tensor(mlp: FusionMlp, features: np.ndarray) -> Tensor:
    return ad.softmax(fusion_logits(mlp, features), axis=1)


def fusion_forward(mlp: FusionMlp, features: np.ndarray) -> tuple[float, float]:
    """Blend weights (W1, W2); softmax guarantees W1 + W2 = 1."""
    w = fusion_weights_tensor(mlp, features).data[0]
    return float(w[0]), float(w[1])


def blend_transforms(
    T1: RigidTransform,
    T2: RigidTransform,
    w1: float,
    w2: float,
    eps: Twist | None = None,
) -> RigidTransform:
    """exp(w1 log T1 + w2 log T2 + eps): always a valid rigid motion."""
    v = w1 * se3_log(T1).as_vector() + w2 * se3_log(T2).as_vector()
    if eps is not None:
        v = v + eps.as_vector()
    return se3_exp(Twist.from_vector(v))


# ---------------------------------------------------------------------------
# Weight training
# ---------------------------------------------------------------------------

def _blend_residual(sample: FusionSample, w1: float, w2: float) -> float:
    T = blend_transforms(sample.T1, sample.T2, w1, w2)
    return point_rmse(
        apply_to_points(T, sample.points_sub),
        apply_to_points(sample.T_gt, sample.points_sub),
    )


def train_fusion(
    samples,
    delta: float = 0.05,
    train: TrainConfig = TrainConfig(),
) -> tuple[FusionMlp, list[float]]:
    """Fit the weighting network under a Huber loss on blend residuals.

    The residual gradient with respect to the two weights goes through
    the blend by central finite differences (four extra evaluations per
    sample); from the weights back to the network it is analytic.
    """
    samples = list(samples)
    if len(samples) < 10:
        raise TooFewSamples(f"need >= 10 fusion samples, got {len(samples)}")
    mlp = init_fusion_mlp(seed=train.seed)
    rng = np.random.default_rng(np.random.SeedSequence([train.seed, 0xF7A2]))
    feats = [fusion_features(s.T1, s.T2, s.rmse1, s.rmse2) for s in samples]
    h = 1e-5
    history: list[float] = []
    for _ in range(train.epochs):
        order = rng.permutation(len(samples))
        losses = []
        for start in range(0, len(order), train.batch_size):
            batch = order[start : start + train.batch_size]
            mlp.store.zero_grad()
            for j in batch:
                s = samples[j]
                W = fusion_weights_tensor(mlp, feats[j])
                w1, w2 = float(W.data[0, 0]), float(W.data[0, 1])
                a = _blend_residual(s, w1, w2)
                quad = abs(a) <= delta
                losses.append(0.5 * a * a if quad else delta * (abs(a) - 0.5 * delta))
                dL_da = a if quad else delta * np.sign(a)
                g1 = (_blend_residual(s, w1 + h, w2) - _blend_residual(s, w1 - h, w2)) / (2 * h)
                g2 = (_blend_residual(s, w1, w2 + h) - _blend_residual(s, w1, w2 - h)) / (2 * h)
                dL_dW = np.array([[g1, g2]]) * dL_da
                proxy = ad.reduce_sum(ad.elementwise_mul(W, Tensor(dL_dW)))
                backward(ad.scale(proxy, 1.0 / len(batch)))
            mlp.store.sgd_step(train.lr, train.momentum)
        history.append(float(np.mean(losses)))
    return mlp, history


# ---------------------------------------------------------------------------
# Epsilon refinement
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EpsilonFilterConfig:
    initial_step: float = 0.01
    shrink: float = 0.5
    min_step: float = 1e-5
    max_outer: int = 10
    subsample: int = 1024
    seed: int = 0

    def __post_init__(self):
        if not (0.0 < self.shrink < 1.0):
            raise ValueError("shrink must be in (0, 1)")
        if self.initial_step <= self.min_step:
            raise ValueError("initial_step must exceed min_step")
        if self.max_outer < 1 or self.subsample < 1:
            raise ValueError("max_outer and subsample must be >= 1")


def epsilon_filter(
    X: PointCloud,
    Y: PointCloud,
    T_blend: RigidTransform,
    cfg: EpsilonFilterConfig = EpsilonFilterConfig(),
) -> tuple[Twist, float]:
    """Shrinking coordinate search for the tangent offset with minimum RMSE.

    Each outer iteration scores the 13 candidates (incumbent, incumbent
    +/- step along each tangent coordinate) by nearest-neighbor RMSE of
    the offset transform on a fixed source subsample; the step halves
    whenever the incumbent survives. Zero stays a candidate throughout,
    so the returned RMSE never exceeds the RMSE at eps = 0.
    """
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0xE9F1]))
    pts = X.points
    if len(pts) > cfg.subsample:
        pts = pts[np.sort(rng.choice(len(pts), size=cfg.subsample, replace=False))]
    tree = KdTree(Y)
    v0 = se3_log(T_blend).as_vector()

    def score(eps_vec: np.ndarray) -> float:
        try:
            T = se3_exp(Twist.from_vector(v0 + eps_vec))
        except ValueError:  # offset pushed the rotation out of the branch
            return np.inf
        _, d = tree.query_points(apply_to_points(T, pts))
        return float(np.sqrt(np.mean(d**2)))

    eps = np.zeros(6)
    best = score(eps)
    step = cfg.initial_step
    for _ in range(cfg.max_outer):
        candidates = [eps.copy()]
        for j in range(6):
            for sign in (+1.0, -1.0):
                c = eps.copy()
                c[j] += sign * step
                candidates.append(c)
        values = [score(c) for c in candidates]
        winner = int(np.argmin(values))  # ties resolve to the lowest index
        if values[winner] < best:
            eps = candidates[winner]
            best = values[winner]
        if winner == 0:
            step *= cfg.shrink
        if step < cfg.min_step:
            break
    return Twist.from_vector(eps), best


# ---------------------------------------------------------------------------
# Full dual-channel registration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MdrDiagnostics:
    T1: RigidTransform
    T2: RigidTransform
    w1: float
    w2: float
    eps: Twist
    rmse: float
    rmse1: float
    rmse2: float
    icp_result: MultiscaleResult
    ndt_result: MultiscaleResult


def mdr_register(
    X: PointCloud,
    Y: PointCloud,
    init: RigidTransform | None = None,
    mlp: FusionMlp | None = None,
    pyramid: PyramidConfig = PyramidConfig(),
    icp_cfg: IcpConfig = IcpConfig(),
    ndt_cfg: NdtConfig = NdtConfig(),
    eps_cfg: EpsilonFilterConfig = EpsilonFilterConfig(),
) -> tuple[RigidTransform, MdrDiagnostics]:
    """Run both multiscale channels, blend with learned weights, refine.

    With no network the channels blend with equal weights. Channel
    failures re-raise tagged with the channel name.
    """
    try:
        res1 = multiscale_icp(X, Y, pyramid, icp_cfg, init)
    except Exception as e:  # noqa: BLE001 - tag and rethrow
        raise RegistrationChannelError("icp", e) from e
    try:
        res2 = multiscale_ndt(X, Y, pyramid, ndt_cfg, init)
    except Exception as e:  # noqa: BLE001
        raise RegistrationChannelError("ndt", e) from e

    T1, T2 = res1.transform, res2.transform
    rmse1, rmse2 = res1.nn_rmse, res2.nn_rmse
    if mlp is not None:
        w1, w2 = fusion_forward(mlp, fusion_features(T1, T2, rmse1, rmse2))
    else:
        w1 = w2 = 0.5
    T_blend = blend_transforms(T1, T2, w1, w2)
    eps, rmse = epsilon_filter(X, Y, T_blend, eps_cfg)
    T_star = blend_transforms(T1, T2, w1, w2, eps)
    diag = MdrDiagnostics(T1, T2, w1, w2, eps, rmse, rmse1, rmse2, res1, res2)
    return T_star, diag
